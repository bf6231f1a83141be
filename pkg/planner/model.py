# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
model.py

The two-agent DEC-POMDP problem instance and the quantities precomputed from it.

Key Features:
- `DecPomdpModel`: states, per-agent actions and observations, joint transition,
  joint observation and reward tables, discount and initial belief.
- `validate_model`: reports every stochasticity / range / shape violation as data.
- `normalize_rewards`: the affine map of R into [0, 1] used as P(r=1 | s, a, b).
- `build_successor_index`: the reachability sets succ(s,a,b,y,z) used to prune
  the E- and M-step sums.

Table layouts (all numpy float arrays, read-only after construction):
    transition   [s, a, b, s']
    observation  [s', a, b, y, z]
    reward       [s, a, b]
    initial_belief [s]

Dependencies: numpy.
"""

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .global_defaults import STOCHASTIC_TOL, SUCC_THRESHOLD


def _frozen(values, dtype=float):
    array = np.array(values, dtype=dtype)
    array.flags.writeable = False
    return array


def _default_names(prefix, count):
    return tuple(f"{prefix}{i}" for i in range(count))


@dataclass(frozen=True, eq=False)
class DecPomdpModel:
    """
    A two-agent DEC-POMDP <S, A, B, Y, Z, T, O, R, gamma, b0>.

    Agent 1 acts with A and observes Y, agent 2 acts with B and observes Z.
    Names are optional labels, when left empty they default to `s0.., a0.., ...`.
    """
    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    discount: float
    initial_belief: np.ndarray
    state_names: tuple = ()
    action_names_1: tuple = ()
    action_names_2: tuple = ()
    obs_names_1: tuple = ()
    obs_names_2: tuple = ()

    def __post_init__(self):
        transition = _frozen(self.transition)
        observation = _frozen(self.observation)
        if transition.ndim != 4 or observation.ndim != 5:
            raise ValueError(f"Transition table must be 4-d [s][a][b][s'] and observation table "
                             f"5-d [s'][a][b][y][z], got {transition.shape} and {observation.shape}.")
        num_states, num_a, num_b, _ = transition.shape
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "observation", observation)
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "initial_belief", _frozen(self.initial_belief))
        object.__setattr__(self, "discount", float(self.discount))

        defaults = {
            "state_names": _default_names("s", num_states),
            "action_names_1": _default_names("a", num_a),
            "action_names_2": _default_names("b", num_b),
            "obs_names_1": _default_names("y", observation.shape[3]),
            "obs_names_2": _default_names("z", observation.shape[4]),
        }
        for name, default in defaults.items():
            value = tuple(getattr(self, name)) or default
            object.__setattr__(self, name, value)

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions_1(self):
        return self.transition.shape[1]

    @property
    def num_actions_2(self):
        return self.transition.shape[2]

    @property
    def num_obs_1(self):
        return self.observation.shape[3]

    @property
    def num_obs_2(self):
        return self.observation.shape[4]

    @property
    def shape(self):
        """(|S|, |A|, |B|, |Y|, |Z|)"""
        return (self.num_states, self.num_actions_1, self.num_actions_2,
                self.num_obs_1, self.num_obs_2)

    @cached_property
    def model_hash(self):
        """SHA-256 over the canonical JSON mirror, used for policy provenance."""
        canonical = json.dumps(model_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class NormalizedRewards:
    """R_hat(s,a,b) = (R - r_min) / (r_max - r_min), or all zeros for a constant reward."""
    r_hat: np.ndarray
    r_min: float
    r_max: float
    degenerate: bool = False

    @property
    def scale(self):
        return self.r_max - self.r_min


@dataclass(frozen=True, eq=False)
class SuccessorIndex:
    """
    Reachability structure of a model.

    The successor tuples are held as parallel arrays sorted by (s, a, b, y, z, s'):
    entry e says s' = next_state[e] is reachable from state[e] under the joint action
    (action_1[e], action_2[e]) while producing the joint observation (obs_1[e], obs_2[e]),
    with probability weight[e] = P(s'|s,a,b) * P(y,z|s',a,b).
    """
    state: np.ndarray
    action_1: np.ndarray
    action_2: np.ndarray
    obs_1: np.ndarray
    obs_2: np.ndarray
    next_state: np.ndarray
    weight: np.ndarray
    forward: dict = field(repr=False)
    threshold: float = 0.0

    @property
    def num_entries(self):
        return len(self.weight)

    @cached_property
    def _lists(self):
        lists = {}
        keys = zip(self.state.tolist(), self.action_1.tolist(), self.action_2.tolist(),
                   self.obs_1.tolist(), self.obs_2.tolist())
        for key, s_next in zip(keys, self.next_state.tolist()):
            lists.setdefault(key, []).append(s_next)
        return {key: tuple(value) for key, value in lists.items()}

    def successors(self, s, a, b, y, z):
        """succ(s,a,b,y,z) as a tuple of next states (empty when the tuple is impossible)."""
        return self._lists.get((s, a, b, y, z), ())

    @property
    def k(self):
        """Largest successor set size."""
        if not self.num_entries:
            return 0
        return max(len(v) for v in self._lists.values())

    def swapped(self):
        """The same index seen from the model with agents 1 and 2 exchanged."""
        order = np.lexsort((self.next_state, self.obs_1, self.obs_2, self.action_1,
                            self.action_2, self.state))
        forward = {(s, b, a): succ for (s, a, b), succ in self.forward.items()}
        return SuccessorIndex(
            state=self.state[order], action_1=self.action_2[order], action_2=self.action_1[order],
            obs_1=self.obs_2[order], obs_2=self.obs_1[order], next_state=self.next_state[order],
            weight=self.weight[order], forward=forward, threshold=self.threshold)


def model_to_dict(m):
    """
    Canonical JSON mirror of a model (lists of floats, names as lists).

    Args:
        m (DecPomdpModel): The model.

    Returns:
        dict: JSON-serializable mirror.
    """
    return {
        "agents": 2,
        "discount": m.discount,
        "states": list(m.state_names),
        "actions": [list(m.action_names_1), list(m.action_names_2)],
        "observations": [list(m.obs_names_1), list(m.obs_names_2)],
        "start": m.initial_belief.tolist(),
        "transition": m.transition.tolist(),
        "observation": m.observation.tolist(),
        "reward": m.reward.tolist(),
    }


def model_from_dict(data):
    """Inverse of `model_to_dict`."""
    return DecPomdpModel(
        transition=data["transition"],
        observation=data["observation"],
        reward=data["reward"],
        discount=data["discount"],
        initial_belief=data["start"],
        state_names=data.get("states", ()),
        action_names_1=data["actions"][0],
        action_names_2=data["actions"][1],
        obs_names_1=data["observations"][0],
        obs_names_2=data["observations"][1],
    )


def swap_agents(m):
    """
    Return the model with agents 1 and 2 exchanged.

    Updates for agent 2 are computed as agent-1 updates on the swapped model.
    """
    return DecPomdpModel(
        transition=m.transition.transpose(0, 2, 1, 3),
        observation=m.observation.transpose(0, 2, 1, 4, 3),
        reward=m.reward.transpose(0, 2, 1),
        discount=m.discount,
        initial_belief=m.initial_belief,
        state_names=m.state_names,
        action_names_1=m.action_names_2,
        action_names_2=m.action_names_1,
        obs_names_1=m.obs_names_2,
        obs_names_2=m.obs_names_1,
    )


def row_sum_violations(table, event_axes, name, tol=STOCHASTIC_TOL):
    """
    List the rows of a conditional probability table that do not sum to one.

    Args:
        table (np.ndarray): The table.
        event_axes (int): How many trailing axes hold the distribution.
        name (str): Table name used in the messages.
        tol (float): Accepted distance of a row sum from 1.

    Returns:
        list[str]: One message per offending row, with its index and sum.
    """
    axes = tuple(range(table.ndim - event_axes, table.ndim))
    sums = table.sum(axis=axes)
    bad = np.argwhere(~(np.abs(sums - 1.0) <= tol))
    return [f"{name}{list(map(int, idx))} sums to {sums[tuple(idx)]:.12g} (expected 1)" for idx in bad]


def range_violations(table, name):
    """List the entries of a probability table outside [0, 1]."""
    bad = np.argwhere(~((table >= 0.0) & (table <= 1.0)))
    return [f"{name}{list(map(int, idx))} = {table[tuple(idx)]:.12g} is outside [0, 1]" for idx in bad]


def validate_model(m):
    """
    Check every DecPomdpModel invariant.

    Violations are data, this never raises.

    Args:
        m (DecPomdpModel): The model to check.

    Returns:
        list[str]: Violations with indices and magnitudes, empty if the model is valid.
    """
    report = []
    num_states, num_a, num_b, num_y, num_z = m.shape

    expected = {
        "transition": (m.transition.shape, (num_states, num_a, num_b, num_states)),
        "observation": (m.observation.shape, (num_states, num_a, num_b, num_y, num_z)),
        "reward": (m.reward.shape, (num_states, num_a, num_b)),
        "initial_belief": (m.initial_belief.shape, (num_states,)),
    }
    shape_ok = True
    for name, (got, want) in expected.items():
        if got != want:
            report.append(f"{name} has shape {got}, expected {want}")
            shape_ok = False

    name_counts = {
        "state_names": (m.state_names, num_states),
        "action_names_1": (m.action_names_1, num_a),
        "action_names_2": (m.action_names_2, num_b),
        "obs_names_1": (m.obs_names_1, num_y),
        "obs_names_2": (m.obs_names_2, num_z),
    }
    for name, (names, count) in name_counts.items():
        if len(names) != count:
            report.append(f"{name} has {len(names)} labels for {count} elements")

    if not (0.0 <= m.discount < 1.0):
        report.append(f"discount = {m.discount} is outside [0, 1)")

    if not np.all(np.isfinite(m.reward)):
        report.append("reward contains non-finite entries")

    report += range_violations(m.transition, "transition")
    report += range_violations(m.observation, "observation")
    report += range_violations(m.initial_belief, "initial_belief")

    if shape_ok:
        report += row_sum_violations(m.transition, 1, "transition")
        report += row_sum_violations(m.observation, 2, "observation")
        belief_sum = m.initial_belief.sum()
        if not abs(belief_sum - 1.0) <= STOCHASTIC_TOL:
            report.append(f"initial_belief sums to {belief_sum:.12g} (expected 1)")

    return report


def normalize_rewards(m, logger=None):
    """
    Rescale the rewards affinely into [0, 1].

    A constant reward table cannot be rescaled, R_hat is then all zeros and the
    result is flagged as degenerate (every policy has the same value).

    Args:
        m (DecPomdpModel): The model.
        logger (logging.Logger, optional): Logger for the degeneracy warning. Defaults to None.

    Returns:
        NormalizedRewards: R_hat with r_min and r_max.
    """
    r_min = float(m.reward.min())
    r_max = float(m.reward.max())
    if r_max > r_min:
        r_hat = (m.reward - r_min) / (r_max - r_min)
        return NormalizedRewards(r_hat=_frozen(r_hat), r_min=r_min, r_max=r_max)

    if logger:
        logger.warning(f"Reward table is constant ({r_min}), the value does not depend on the policy.")
    return NormalizedRewards(r_hat=_frozen(np.zeros_like(m.reward)), r_min=r_min, r_max=r_max,
                             degenerate=True)


def build_successor_index(m, threshold=SUCC_THRESHOLD):
    """
    Collect succ(s,a,b,y,z) = {s' | P(s'|s,a,b) P(y,z|s',a,b) > threshold} for all tuples,
    plus the forward sets {s' | P(s'|s,a,b) > threshold}.

    Args:
        m (DecPomdpModel): The model.
        threshold (float): Positivity threshold. Defaults to SUCC_THRESHOLD (exact positivity).

    Returns:
        SuccessorIndex: The index, entries sorted by (s, a, b, y, z, s').
    """
    # [a, b, y, z, s'] view of the observation table
    obs = m.observation.transpose(1, 2, 3, 4, 0)
    columns = [[] for _ in range(7)]

    for s in range(m.num_states):
        # [a, b, y, z, s']
        joint = m.transition[s][:, :, None, None, :] * obs
        a, b, y, z, s_next = np.nonzero(joint > threshold)
        for column, values in zip(columns, (np.full(len(a), s), a, b, y, z, s_next,
                                            joint[a, b, y, z, s_next])):
            column.append(values)

    state, action_1, action_2, obs_1, obs_2, next_state = (
        np.concatenate(column).astype(np.intp) for column in columns[:6])
    weight = np.concatenate(columns[6]).astype(float)

    forward = {}
    s_idx, a_idx, b_idx, s_next_idx = np.nonzero(m.transition > threshold)
    for s, a, b, s_next in zip(s_idx.tolist(), a_idx.tolist(), b_idx.tolist(), s_next_idx.tolist()):
        forward.setdefault((s, a, b), []).append(s_next)
    forward = {key: tuple(value) for key, value in forward.items()}

    return SuccessorIndex(state=state, action_1=action_1, action_2=action_2, obs_1=obs_1,
                          obs_2=obs_2, next_state=next_state, weight=weight, forward=forward,
                          threshold=threshold)
