# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
controller.py

Stochastic finite-state controllers, one per agent, and the joint policy they form.

Key Features:
- `AgentFsc`: action distribution pi(a|n), node transition lambda(n'|n,o), start distribution nu(n).
- `JointPolicy`: the pair of controllers executed decentrally, agent 1 nodes p, agent 2 nodes q.
- `init_random`: seeded, fully supported random controllers.
- `validate_policy` / `check_compatible`: report or reject malformed and mismatched policies.
- `make_deterministic`: one-hot controllers from explicit choices, for reference policies.
- `policy_to_dict` / `policy_from_dict`: the policy JSON mirror, with provenance.

Table layouts:
    action_probs     [n, a]
    node_transition  [n, o, n']
    initial_dist     [n]

Dependencies: numpy.
"""

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .global_defaults import INIT_FLOOR
from .model import _frozen, range_violations, row_sum_violations

POLICY_FORMAT = "decem-policy"
POLICY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AgentFsc:
    """One agent's controller <N, pi, lambda, nu>."""
    action_probs: np.ndarray
    node_transition: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        for name in ("action_probs", "node_transition", "initial_dist"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def num_nodes(self):
        return self.action_probs.shape[0]

    @property
    def num_actions(self):
        return self.action_probs.shape[1]

    @property
    def num_obs(self):
        return self.node_transition.shape[1]


@dataclass(frozen=True, eq=False)
class JointPolicy:
    """The decentralized joint policy: agent 1 acts on A and observes Y, agent 2 on B and Z."""
    agent1: AgentFsc
    agent2: AgentFsc

    @property
    def nodes(self):
        return self.agent1.num_nodes, self.agent2.num_nodes

    def swapped(self):
        """The policy seen from the model with agents 1 and 2 exchanged."""
        return JointPolicy(agent1=self.agent2, agent2=self.agent1)

    @cached_property
    def policy_hash(self):
        canonical = json.dumps(policy_to_dict(self)["agents"], sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def normalize_rows(table):
    """Divide every row (last axis) by its sum."""
    table = np.asarray(table, dtype=float)
    return table / table.sum(axis=-1, keepdims=True)


def _random_fsc(rng, num_nodes, num_actions, num_obs):
    # draw order is part of the seed contract: pi, lambda, nu
    action_probs = np.maximum(rng.uniform(size=(num_nodes, num_actions)), INIT_FLOOR)
    node_transition = np.maximum(rng.uniform(size=(num_nodes, num_obs, num_nodes)), INIT_FLOOR)
    initial_dist = np.maximum(rng.uniform(size=num_nodes), INIT_FLOOR)
    return AgentFsc(action_probs=normalize_rows(action_probs),
                    node_transition=normalize_rows(node_transition),
                    initial_dist=normalize_rows(initial_dist))


def init_random(model, n1, n2, seed):
    """
    Draw a random joint policy.

    Each row is filled with independent uniform(0,1) entries, floored at INIT_FLOOR and
    normalized, so every probability is strictly positive.

    Args:
        model (DecPomdpModel): The model the policy is for (alphabet sizes).
        n1 (int): Number of agent 1 nodes.
        n2 (int): Number of agent 2 nodes.
        seed (int or sequence of int): Seed of the numpy generator.

    Returns:
        JointPolicy: A valid, fully supported policy, a pure function of the arguments.

    Raises:
        ValueError: If a node count is below 1.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError(f"Controllers need at least one node per agent, got ({n1}, {n2}).")
    rng = np.random.default_rng(seed)
    agent1 = _random_fsc(rng, n1, model.num_actions_1, model.num_obs_1)
    agent2 = _random_fsc(rng, n2, model.num_actions_2, model.num_obs_2)
    return JointPolicy(agent1=agent1, agent2=agent2)


def _shape_violations(fsc, label, num_actions, num_obs):
    n = fsc.num_nodes
    expected = {
        "action_probs": (fsc.action_probs.shape, (n, num_actions)),
        "node_transition": (fsc.node_transition.shape, (n, num_obs, n)),
        "initial_dist": (fsc.initial_dist.shape, (n,)),
    }
    return [f"{label}.{name} has shape {got}, expected {want}"
            for name, (got, want) in expected.items() if got != want]


def validate_policy(p, m):
    """
    Check a joint policy against its invariants and against a model.

    Args:
        p (JointPolicy): The policy.
        m (DecPomdpModel): The model it should be executed on.

    Returns:
        list[str]: Violations, empty iff the policy is valid and compatible with the model.
    """
    report = []
    agents = (("agent1", p.agent1, m.num_actions_1, m.num_obs_1),
              ("agent2", p.agent2, m.num_actions_2, m.num_obs_2))
    for label, fsc, num_actions, num_obs in agents:
        shape_report = _shape_violations(fsc, label, num_actions, num_obs)
        report += shape_report
        for name in ("action_probs", "node_transition", "initial_dist"):
            table = getattr(fsc, name)
            report += range_violations(table, f"{label}.{name}")
            if not shape_report:
                report += row_sum_violations(table, 1, f"{label}.{name}", tol=POLICY_TOL)
    return report


def check_compatible(p, m):
    """Raise ValueError naming the shapes if the policy does not fit the model."""
    problems = (_shape_violations(p.agent1, "agent1", m.num_actions_1, m.num_obs_1)
                + _shape_violations(p.agent2, "agent2", m.num_actions_2, m.num_obs_2))
    if problems:
        raise ValueError("Policy does not match the model: " + "; ".join(problems))


def _one_hot_fsc(actions, transitions, start, num_actions, num_obs, label):
    num_nodes = len(actions)
    if num_nodes < 1:
        raise ValueError(f"{label}: a controller needs at least one node.")
    if transitions is None:
        transitions = [[0] * num_obs for _ in range(num_nodes)]
    if len(transitions) != num_nodes:
        raise ValueError(f"{label}: {len(transitions)} transition rows for {num_nodes} nodes.")

    action_probs = np.zeros((num_nodes, num_actions))
    node_transition = np.zeros((num_nodes, num_obs, num_nodes))
    initial_dist = np.zeros(num_nodes)

    for n, a in enumerate(actions):
        if not 0 <= a < num_actions:
            raise IndexError(f"{label}: action {a} of node {n} is out of range [0, {num_actions}).")
        action_probs[n, a] = 1.0
        if len(transitions[n]) != num_obs:
            raise ValueError(f"{label}: node {n} needs one successor per observation ({num_obs}).")
        for o, n_next in enumerate(transitions[n]):
            if not 0 <= n_next < num_nodes:
                raise IndexError(f"{label}: successor {n_next} of node {n} under observation {o} "
                                 f"is out of range [0, {num_nodes}).")
            node_transition[n, o, n_next] = 1.0
    if not 0 <= start < num_nodes:
        raise IndexError(f"{label}: start node {start} is out of range [0, {num_nodes}).")
    initial_dist[start] = 1.0

    return AgentFsc(action_probs=action_probs, node_transition=node_transition, initial_dist=initial_dist)


def make_deterministic(model, agent1, agent2):
    """
    Build a deterministic joint policy from explicit choices.

    Each agent spec is a dict with
        "actions": the action index of every node,
        "transitions": per node, the successor node for every observation
                       (optional, defaults to moving to node 0),
        "start": the start node (optional, defaults to 0).

    Example:
        make_deterministic(m, {"actions": [0]}, {"actions": [1]})
        -> 1-node controllers, agent 1 always plays a0, agent 2 always plays b1.

    Args:
        model (DecPomdpModel): The model (alphabet sizes).
        agent1 (dict): Agent 1 choices.
        agent2 (dict): Agent 2 choices.

    Returns:
        JointPolicy: One-hot distributions, entries exactly 0 or 1.

    Raises:
        IndexError: On an action, successor or start node outside its range.
    """
    fscs = []
    for label, spec, num_actions, num_obs in (("agent1", agent1, model.num_actions_1, model.num_obs_1),
                                              ("agent2", agent2, model.num_actions_2, model.num_obs_2)):
        fscs.append(_one_hot_fsc(list(spec["actions"]), spec.get("transitions"), spec.get("start", 0),
                                 num_actions, num_obs, label))
    return JointPolicy(agent1=fscs[0], agent2=fscs[1])


def policy_to_dict(p, provenance=None):
    """
    JSON mirror of a policy.

    Args:
        p (JointPolicy): The policy.
        provenance (dict, optional): Seed, restart, iteration count, model hash, value.

    Returns:
        dict: {"format", "agents": [...], "provenance": {...}}
    """
    agents = []
    for fsc in (p.agent1, p.agent2):
        agents.append({
            "nodes": fsc.num_nodes,
            "action_probs": fsc.action_probs.tolist(),
            "node_transition": fsc.node_transition.tolist(),
            "initial_dist": fsc.initial_dist.tolist(),
        })
    return {"format": POLICY_FORMAT, "agents": agents, "provenance": dict(provenance or {})}


def policy_from_dict(data):
    """
    Inverse of `policy_to_dict`.

    Returns:
        tuple: (JointPolicy, provenance dict)

    Raises:
        ValueError: If the document is not a policy or the node counts disagree with the tables.
    """
    if data.get("format") != POLICY_FORMAT or len(data.get("agents", ())) != 2:
        raise ValueError(f"Not a two-agent '{POLICY_FORMAT}' document.")
    fscs = []
    for label, entry in zip(("agent1", "agent2"), data["agents"]):
        fsc = AgentFsc(action_probs=entry["action_probs"], node_transition=entry["node_transition"],
                       initial_dist=entry["initial_dist"])
        if fsc.action_probs.ndim != 2 or fsc.node_transition.ndim != 3 or fsc.initial_dist.ndim != 1:
            raise ValueError(f"{label}: tables must be [n][a], [n][o][n'] and [n].")
        if entry.get("nodes", fsc.num_nodes) != fsc.num_nodes:
            raise ValueError(f"{label}: declares {entry['nodes']} nodes, tables have {fsc.num_nodes}.")
        fscs.append(fsc)
    return JointPolicy(agent1=fscs[0], agent2=fscs[1]), data.get("provenance", {})
