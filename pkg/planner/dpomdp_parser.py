# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
dpomdp_parser.py

Reader and writer for the `.dpomdp` text format, the multi-agent extension of
Cassandra's `.pomdp` format. Only two-agent problems are accepted.

Supported grammar:
    agents: 2 | <name> <name>
    discount: %f
    values: reward | cost
    states: N | <names>
    start: | start: uniform | start: <state> | start: %f ... %f   (vector may follow on the next line)
    actions:        one line per agent, each `N` or `<names>`
    observations:   one line per agent, each `N` or `<names>`

    T: <a1 a2> : <s> : <s'> [:] %f      T: <a1 a2> : <s> [:]  + row      T: <a1 a2> [:]  + matrix|uniform|identity
    O: <a1 a2> : <s'> : <o1 o2> [:] %f  O: <a1 a2> : <s'> [:] + row      O: <a1 a2> [:]  + matrix|uniform
    R: <a1 a2> : <s> : <s'> : <o1 o2> [:] %f
    R: <a1 a2> : <s> : <s'> [:] + row   R: <a1 a2> : <s> [:] + matrix

Elements are names, 0-based indices or `*`. A joint action or joint observation can
also be given as a single joint index (agent-1 major). Later entries override
earlier ones. Rewards that depend on s' or on the observations are reduced to
R(s,a,b) = sum_{s'} T(s'|s,a,b) sum_{y,z} O(y,z|s',a,b) R(s,a,b,s',y,z) after loading.

Key Features:
- `parse_model`: text -> DecPomdpModel, errors carry line and column.
- `serialize_model`: DecPomdpModel -> text that parses back to the same tables.

Dependencies: numpy.
"""

import re

import numpy as np

from .global_defaults import STOCHASTIC_TOL
from .model import DecPomdpModel

HEADER_KEYS = ("agents", "discount", "values", "states", "start", "actions", "observations")
STATEMENT_PATTERN = re.compile(
    r"^\s*(agents|discount|values|states|start|actions|observations|T|O|R)\s*:(.*)$")
ALL = slice(None)


class DpomdpParseError(ValueError):
    """Malformed or unsupported `.dpomdp` content."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        location = ""
        if line is not None:
            location = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(location + message)


def _strip_comments(text):
    """Return (line_number, content) of all non-empty lines, comments removed."""
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].rstrip()
        if content.strip():
            lines.append((number, content))
    return lines


def _split_statements(lines):
    """
    Group lines into statements: a keyword line followed by its data lines.

    Returns:
        list[tuple]: (keyword, line_number, header_text, header_line, data) where data is
        a list of (line_number, content) of the following non-keyword lines.
    """
    statements = []
    for number, content in lines:
        match = STATEMENT_PATTERN.match(content)
        if match:
            statements.append([match.group(1), number, match.group(2), content, []])
        elif statements:
            statements[-1][4].append((number, content))
        else:
            raise DpomdpParseError(f"Unexpected content '{content.strip()}' before the first statement.",
                                   number, 1)
    return statements


def _column(line_text, token):
    position = line_text.find(token)
    return position + 1 if position >= 0 else None


def _parse_float(token, line, line_text):
    try:
        return float(token)
    except ValueError:
        raise DpomdpParseError(f"Expected a number, got '{token}'.", line, _column(line_text, token))


def _parse_elements(tokens, line):
    """Element list `N` or `<names>` -> tuple of names."""
    if len(tokens) == 1 and tokens[0].isdigit():
        count = int(tokens[0])
        if count < 1:
            raise DpomdpParseError("Element count must be at least 1.", line)
        return None, count
    return tuple(tokens), len(tokens)


class _Parser:
    """Stateful single pass over the statements of one file."""

    def __init__(self, text, logger=None):
        self.logger = logger
        self.statements = _split_statements(_strip_comments(text))
        self.num_agents = None
        self.discount = None
        self.values = "reward"
        self.states = None
        self.actions = None
        self.observations = None
        self.start_statement = None
        self.transition = None
        self.observation = None
        self.reward3 = None
        self.reward6 = None

    # ---- element lookups ----

    def _resolve(self, token, names, what, line, line_text):
        if token == "*":
            return ALL
        if token in names:
            return names.index(token)
        if re.fullmatch(r"\d+", token):
            index = int(token)
            if index < len(names):
                return index
            raise DpomdpParseError(f"{what} index {index} out of range (have {len(names)}).",
                                   line, _column(line_text, token))
        raise DpomdpParseError(f"Unknown {what} '{token}'.", line, _column(line_text, token))

    def _resolve_joint(self, tokens, names_1, names_2, what, line, line_text):
        if len(tokens) == 2:
            return (self._resolve(tokens[0], names_1, f"agent 1 {what}", line, line_text),
                    self._resolve(tokens[1], names_2, f"agent 2 {what}", line, line_text))
        if len(tokens) == 1:
            token = tokens[0]
            if token == "*":
                return ALL, ALL
            if re.fullmatch(r"\d+", token):
                joint = int(token)
                if joint >= len(names_1) * len(names_2):
                    raise DpomdpParseError(f"Joint {what} index {joint} out of range.",
                                           line, _column(line_text, token))
                return joint // len(names_2), joint % len(names_2)
        raise DpomdpParseError(f"Expected one {what} per agent (2 agents), got {len(tokens)}: "
                               f"{' '.join(tokens)}.", line, _column(line_text, tokens[0]) if tokens else None)

    # ---- header ----

    def _agent_lines(self, rest, data, key, line):
        """The per-agent element lines following `actions:` / `observations:`."""
        candidates = ([(line, rest)] if rest.strip() else []) + list(data)
        if len(candidates) != 2:
            raise DpomdpParseError(f"'{key}' needs exactly one line per agent (2 agents), "
                                   f"got {len(candidates)}.", line)
        per_agent = []
        for number, content in candidates:
            names, count = _parse_elements(content.split(), number)
            prefix = {"actions": "a", "observations": "o"}[key]
            per_agent.append(names or tuple(f"{prefix}{i}" for i in range(count)))
        return per_agent

    def parse_header(self, key, line, rest, data):
        tokens = rest.split()
        if key == "agents":
            if not tokens:
                raise DpomdpParseError("Missing agent count.", line)
            self.num_agents = int(tokens[0]) if len(tokens) == 1 and tokens[0].isdigit() else len(tokens)
            if self.num_agents != 2:
                raise DpomdpParseError(f"Only 2-agent problems are supported, file declares "
                                       f"{self.num_agents} agents.", line)
        elif key == "discount":
            if len(tokens) != 1:
                raise DpomdpParseError("Expected a single discount value.", line)
            self.discount = float(tokens[0])
        elif key == "values":
            if tokens not in (["reward"], ["cost"]):
                raise DpomdpParseError("values must be 'reward' or 'cost'.", line)
            self.values = tokens[0]
        elif key == "states":
            if not tokens and data:
                tokens = " ".join(content for _, content in data).split()
            if not tokens:
                raise DpomdpParseError("Missing states.", line)
            names, count = _parse_elements(tokens, line)
            self.states = names or tuple(f"s{i}" for i in range(count))
        elif key in ("actions", "observations"):
            per_agent = self._agent_lines(rest, data, key, line)
            setattr(self, key, per_agent)
        elif key == "start":
            self.start_statement = (line, rest, data)

    def _allocate(self):
        if self.num_agents is None:
            raise DpomdpParseError("Missing 'agents:' declaration.")
        for key in ("states", "actions", "observations"):
            if getattr(self, key) is None:
                raise DpomdpParseError(f"Missing '{key}:' declaration before the first entry.")
        if self.transition is None:
            s, (a, b), (y, z) = len(self.states), map(len, self.actions), map(len, self.observations)
            self.transition = np.zeros((s, a, b, s))
            self.observation = np.zeros((s, a, b, y, z))
            self.reward3 = np.zeros((s, a, b))

    # ---- entries ----

    @staticmethod
    def _fields(rest):
        fields = [f.strip() for f in rest.split(":")]
        while fields and not fields[-1]:
            fields.pop()
        return fields

    def _data_tokens(self, data):
        return [(number, content, token) for number, content in data for token in content.split()]

    def _numbers(self, data, expected, what, line):
        tokens = self._data_tokens(data)
        if len(tokens) != expected:
            raise DpomdpParseError(f"{what} expects {expected} values, got {len(tokens)}.", line)
        return np.array([_parse_float(token, number, content) for number, content, token in tokens])

    def _element_value(self, fields, count, data, line, line_text):
        """
        Split the element tokens of the last field from an optional trailing value
        (`... : <s'> %f` without a colon) and find the value.
        """
        if len(fields) > count:
            value_tokens = fields[count].split()
            if len(value_tokens) != 1 or len(fields) > count + 1:
                raise DpomdpParseError("Too many fields.", line, _column(line_text, fields[-1]))
            return fields[:count], _parse_float(value_tokens[0], line, line_text)
        if data:
            values = self._data_tokens(data)
            if len(values) != 1:
                raise DpomdpParseError("Expected one value after the entry.", line)
            number, content, token = values[0]
            return fields, _parse_float(token, number, content)
        last = fields[-1].split()
        if len(last) < 2:
            raise DpomdpParseError("Missing value.", line)
        return fields[:-1] + [" ".join(last[:-1])], _parse_float(last[-1], line, line_text)

    def parse_transition(self, line, rest, data, line_text):
        fields = self._fields(rest)
        if not fields:
            raise DpomdpParseError("Missing joint action.", line)
        a, b = self._resolve_joint(fields[0].split(), *self.actions, "action", line, line_text)
        num_states = len(self.states)

        if len(fields) >= 3:
            fields, value = self._element_value(fields, 3, data, line, line_text)
            s = self._resolve(fields[1], self.states, "state", line, line_text)
            s_next = self._resolve(fields[2], self.states, "state", line, line_text)
            self.transition[s, a, b, s_next] = value
        elif len(fields) == 2:
            s = self._resolve(fields[1], self.states, "state", line, line_text)
            if self._keyword(data) == "uniform":
                self.transition[s, a, b, :] = 1.0 / num_states
            else:
                self.transition[s, a, b, :] = self._numbers(data, num_states, "Transition row", line)
        else:
            keyword = self._keyword(data)
            if keyword == "uniform":
                self.transition[:, a, b, :] = 1.0 / num_states
            elif keyword == "identity":
                self.transition[:, a, b, :] = 0.0
                for s in range(num_states):
                    self.transition[s, a, b, s] = 1.0
            else:
                matrix = self._numbers(data, num_states * num_states, "Transition matrix", line)
                self.transition[:, a, b, :] = matrix.reshape(num_states, num_states)

    def parse_observation(self, line, rest, data, line_text):
        fields = self._fields(rest)
        if not fields:
            raise DpomdpParseError("Missing joint action.", line)
        a, b = self._resolve_joint(fields[0].split(), *self.actions, "action", line, line_text)
        num_y, num_z = map(len, self.observations)

        if len(fields) >= 3:
            fields, value = self._element_value(fields, 3, data, line, line_text)
            s_next = self._resolve(fields[1], self.states, "state", line, line_text)
            y, z = self._resolve_joint(fields[2].split(), *self.observations, "observation",
                                       line, line_text)
            self.observation[s_next, a, b, y, z] = value
        elif len(fields) == 2:
            s_next = self._resolve(fields[1], self.states, "state", line, line_text)
            if self._keyword(data) == "uniform":
                self.observation[s_next, a, b] = 1.0 / (num_y * num_z)
            else:
                row = self._numbers(data, num_y * num_z, "Observation row", line)
                self.observation[s_next, a, b] = row.reshape(num_y, num_z)
        else:
            keyword = self._keyword(data)
            if keyword == "uniform":
                self.observation[:, a, b] = 1.0 / (num_y * num_z)
            elif keyword == "identity":
                raise DpomdpParseError("'identity' is not defined for joint observation tables.", line)
            else:
                num_states = len(self.states)
                matrix = self._numbers(data, num_states * num_y * num_z, "Observation matrix", line)
                self.observation[:, a, b] = matrix.reshape(num_states, num_y, num_z)

    def _assign_reward(self, a, b, s, s_next, y, z, value):
        if self.reward6 is None:
            if all(isinstance(sel, slice) and sel == ALL for sel in (s_next, y, z)) \
                    and np.ndim(value) == 0:
                self.reward3[s, a, b] = value
                return
            num_states = len(self.states)
            num_y, num_z = map(len, self.observations)
            self.reward6 = np.broadcast_to(
                self.reward3[:, :, :, None, None, None],
                self.reward3.shape + (num_states, num_y, num_z)).copy()
        self.reward6[s, a, b, s_next, y, z] = value

    def parse_reward(self, line, rest, data, line_text):
        fields = self._fields(rest)
        if len(fields) < 2:
            raise DpomdpParseError("Reward entries need at least a joint action and a state.", line)
        a, b = self._resolve_joint(fields[0].split(), *self.actions, "action", line, line_text)
        s = self._resolve(fields[1], self.states, "state", line, line_text)
        num_states = len(self.states)
        num_y, num_z = map(len, self.observations)

        if len(fields) >= 4:
            fields, value = self._element_value(fields, 4, data, line, line_text)
            s_next = self._resolve(fields[2], self.states, "state", line, line_text)
            y, z = self._resolve_joint(fields[3].split(), *self.observations, "observation",
                                       line, line_text)
            self._assign_reward(a, b, s, s_next, y, z, value)
        elif len(fields) == 3:
            s_next = self._resolve(fields[2], self.states, "state", line, line_text)
            row = self._numbers(data, num_y * num_z, "Reward row", line).reshape(num_y, num_z)
            # the row broadcasts over any wildcards in (a, b, s, s')
            self._assign_reward(a, b, s, s_next, ALL, ALL, row)
        else:
            matrix = self._numbers(data, num_states * num_y * num_z, "Reward matrix", line)
            self._assign_reward(a, b, s, ALL, ALL, ALL, matrix.reshape(num_states, num_y, num_z))

    @staticmethod
    def _keyword(data):
        if len(data) == 1 and data[0][1].strip() in ("uniform", "identity"):
            return data[0][1].strip()
        return None

    # ---- start ----

    def _start_belief(self):
        num_states = len(self.states)
        if self.start_statement is None:
            return np.full(num_states, 1.0 / num_states)
        line, rest, data = self.start_statement
        tokens = rest.split() + [t for _, content in data for t in content.split()]
        if tokens == ["uniform"]:
            return np.full(num_states, 1.0 / num_states)
        if tokens and tokens[0] in ("include", "exclude"):
            raise DpomdpParseError("'start include/exclude' is not supported.", line)
        if len(tokens) == 1 and (tokens[0] in self.states or (num_states > 1 and tokens[0].isdigit())):
            belief = np.zeros(num_states)
            belief[self._resolve(tokens[0], self.states, "state", line, rest)] = 1.0
            return belief
        if len(tokens) != num_states:
            raise DpomdpParseError(f"Start belief needs {num_states} values, got {len(tokens)}.", line)
        return np.array([_parse_float(token, line, rest) for token in tokens])

    # ---- driver ----

    def run(self):
        for key, line, rest, line_text, data in self.statements:
            if key in HEADER_KEYS:
                if self.transition is not None and key not in ("start",):
                    raise DpomdpParseError(f"Declaration '{key}:' after the first entry.", line)
                self.parse_header(key, line, rest, data)
                continue
            self._allocate()
            if key == "T":
                self.parse_transition(line, rest, data, line_text)
            elif key == "O":
                self.parse_observation(line, rest, data, line_text)
            else:
                self.parse_reward(line, rest, data, line_text)

        self._allocate()
        if self.discount is None:
            raise DpomdpParseError("Missing 'discount:' declaration.")

        transition = _stochastic(self.transition, 1, "T")
        observation = _stochastic(self.observation, 2, "O")
        belief = _stochastic(self._start_belief(), 1, "start")

        if self.reward6 is None:
            reward = self.reward3
        else:
            if self.logger:
                self.logger.info("Reward depends on s' or observations, reducing to R(s,a,b).")
            reward = np.einsum("sabt,tabyz,sabtyz->sab", transition, observation, self.reward6)
        if self.values == "cost":
            reward = -reward

        return DecPomdpModel(
            transition=transition, observation=observation, reward=reward,
            discount=self.discount, initial_belief=belief, state_names=self.states,
            action_names_1=self.actions[0], action_names_2=self.actions[1],
            obs_names_1=self.observations[0], obs_names_2=self.observations[1])


def _stochastic(table, event_axes, name, tol=STOCHASTIC_TOL):
    """
    Renormalize the rows of a conditional table that are within `tol` of summing to one,
    reject the model if any row is further off or has entries outside [0, 1].
    """
    if np.any(table < 0.0) or np.any(table > 1.0 + tol):
        idx = np.argwhere((table < 0.0) | (table > 1.0 + tol))[0]
        raise DpomdpParseError(f"{name}{list(map(int, idx))} = {table[tuple(idx)]} is not a probability.")
    axes = tuple(range(table.ndim - event_axes, table.ndim))
    sums = table.sum(axis=axes, keepdims=True)
    bad = np.argwhere(~(np.abs(sums - 1.0) <= tol))
    if len(bad):
        idx = tuple(bad[0])
        raise DpomdpParseError(f"Non-stochastic row {name}{list(map(int, idx[:table.ndim - event_axes]))}: "
                               f"sums to {sums[idx]:.12g}, {len(bad)} row(s) in total.")
    return table / sums


def parse_model(text, logger=None):
    """
    Parse `.dpomdp` content into a model.

    Args:
        text (str): File content.
        logger (logging.Logger, optional): Logger for progress messages. Defaults to None.

    Returns:
        DecPomdpModel: The fully populated model.

    Raises:
        DpomdpParseError: On syntax errors (with line/column), agent count != 2,
            dimension mismatches and non-stochastic rows.
    """
    model = _Parser(text, logger=logger).run()
    if logger:
        logger.info(f"Parsed model with |S|={model.num_states}, |A|={model.num_actions_1}, "
                    f"|B|={model.num_actions_2}, |Y|={model.num_obs_1}, |Z|={model.num_obs_2}, "
                    f"discount={model.discount}.")
    return model


# names that would read back as a wildcard or a keyword
RESERVED_NAMES = ("*", "uniform", "identity", "include", "exclude")


def _tokens(names):
    """
    Element names as written. Whitespace, ':', '#' and '*' become '_', a name that would read
    back as a keyword, a number or an earlier name of the same list gets its index appended.
    """
    tokens = []
    for i, name in enumerate(names):
        token = re.sub(r"[\s:#*]+", "_", str(name))
        while not token or token in RESERVED_NAMES or token.isdigit() or token in tokens:
            token = f"{token}_{i}"
        tokens.append(token)
    return tokens


def serialize_model(m):
    """
    Write a model as `.dpomdp` text.

    Transitions and observations are written element-wise (non-zero entries only),
    rewards as `R: a b : s : * : * : value`. Floats use their shortest round-trip repr.

    Args:
        m (DecPomdpModel): The model.

    Returns:
        str: `.dpomdp` text.
    """
    states = _tokens(m.state_names)
    actions = [_tokens(m.action_names_1), _tokens(m.action_names_2)]
    observations = [_tokens(m.obs_names_1), _tokens(m.obs_names_2)]

    lines = [
        "agents: 2",
        f"discount: {m.discount!r}",
        "values: reward",
        "states: " + " ".join(states),
        "start:",
        " ".join(repr(float(p)) for p in m.initial_belief),
        "actions:",
        " ".join(actions[0]),
        " ".join(actions[1]),
        "observations:",
        " ".join(observations[0]),
        " ".join(observations[1]),
        "",
    ]
    for s, a, b, s_next in np.argwhere(m.transition != 0.0):
        lines.append(f"T: {actions[0][a]} {actions[1][b]} : {states[s]} : {states[s_next]} : "
                     f"{float(m.transition[s, a, b, s_next])!r}")
    lines.append("")
    for s_next, a, b, y, z in np.argwhere(m.observation != 0.0):
        lines.append(f"O: {actions[0][a]} {actions[1][b]} : {states[s_next]} : "
                     f"{observations[0][y]} {observations[1][z]} : "
                     f"{float(m.observation[s_next, a, b, y, z])!r}")
    lines.append("")
    for s, a, b in np.argwhere(m.reward != 0.0):
        lines.append(f"R: {actions[0][a]} {actions[1][b]} : {states[s]} : * : * : "
                     f"{float(m.reward[s, a, b])!r}")
    return "\n".join(lines) + "\n"
