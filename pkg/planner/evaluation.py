# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
evaluation.py

Exact and Monte-Carlo evaluation of a joint policy. This is the ground truth the EM
solver's likelihood-derived values are checked against, so it shares no code with `em.py`.

Key Features:
- `evaluate_exact`: V(p,q,s) on the joint (p,q,s) chain, by value iteration or a direct solve.
- `value_at_belief`: V(b0) = sum nu1(p) nu2(q) b0(s) V(p,q,s).
- `bellman_residual`: max-norm change of one application of the value recursion.
- `simulate`: decentralized rollouts, each agent sees only its own observation.

Dependencies: numpy.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .controller import check_compatible
from .global_defaults import (DIRECT_SOLVE_LIMIT, EVAL_METHOD, EVAL_TOL, SIM_BIAS,
                              SIM_BLOCK_SIZE, SIM_EPISODES)

EVAL_METHODS = ("iterative", "direct")


@dataclass(frozen=True, eq=False)
class ValueTable:
    """V(p,q,s) of a joint policy and its value at the model's initial belief."""
    v: np.ndarray
    v_b0: float
    residual: float
    method: str
    iterations: int = 0
    ms: float = 0.0

    def to_report(self):
        return {"v_b0": self.v_b0, "residual": self.residual, "method": self.method,
                "iterations": self.iterations, "ms": self.ms}


@dataclass(frozen=True)
class SimulationEstimate:
    mean: float
    std_error: float
    episodes: int
    horizon: int
    seed: int

    def to_report(self):
        return {"mean": self.mean, "std_error": self.std_error, "episodes": self.episodes,
                "horizon": self.horizon, "seed": self.seed}


def _joint_chain(m, p):
    """
    Transition matrix and expected immediate reward of the joint (p,q,s) chain.

    The chain is accumulated one joint action at a time, the largest temporaries are the
    [D, D] chain itself and the [p, q, s', p', q'] node moves of one joint action.

    Returns:
        tuple: (chain [D, D], reward [D]) with D = N1*N2*|S| in (p,q,s) C-order.
    """
    pi1, lam1 = p.agent1.action_probs, p.agent1.node_transition
    pi2, lam2 = p.agent2.action_probs, p.agent2.node_transition
    n1, n2, num_states = p.agent1.num_nodes, p.agent2.num_nodes, m.num_states

    chain = np.zeros((n1, n2, num_states, n1, n2, num_states))
    for a in range(m.num_actions_1):
        for b in range(m.num_actions_2):
            weight = np.outer(pi1[:, a], pi2[:, b])
            if not weight.any():
                continue
            # P(p',q'|p,q,s') under joint action (a,b)
            moves = np.einsum("pyk,qzl,tyz->pqtkl", lam1, lam2, m.observation[:, a, b], optimize=True)
            chain += np.einsum("pq,st,pqtkl->pqsklt", weight, m.transition[:, a, b], moves, optimize=True)
    reward = np.einsum("pa,qb,sab->pqs", pi1, pi2, m.reward, optimize=True)

    size = n1 * n2 * num_states
    return chain.reshape(size, size), reward.reshape(size)


def bellman_residual(m, p, v):
    """
    Max-norm change of V under one application of the value recursion
    V(p,q,s) = sum_{a,b} pi1 pi2 [R + gamma sum_{s',y,z,p',q'} T O lambda1 lambda2 V(p',q',s')].

    Args:
        m (DecPomdpModel): The model.
        p (JointPolicy): The policy.
        v (np.ndarray): Candidate V, [p][q][s].

    Returns:
        float: max |B(V) - V|.
    """
    chain, reward = _joint_chain(m, p)
    flat = np.asarray(v, dtype=float).reshape(-1)
    return float(np.max(np.abs(reward + m.discount * (chain @ flat) - flat)))


def value_at_belief(vt, p, b0):
    """
    V(b0) = sum_{p,q,s} nu1(p) nu2(q) b0(s) V(p,q,s).

    Raises:
        ValueError: If the value table does not match the policy's node counts or the belief.
    """
    v = np.asarray(vt.v if isinstance(vt, ValueTable) else vt)
    expected = (p.agent1.num_nodes, p.agent2.num_nodes, len(b0))
    if v.shape != expected:
        raise ValueError(f"Value table has shape {v.shape}, expected {expected} from policy and belief.")
    return float(np.einsum("p,q,s,pqs->", p.agent1.initial_dist, p.agent2.initial_dist,
                           np.asarray(b0, dtype=float), v))


def evaluate_exact(m, p, tol=EVAL_TOL, method=EVAL_METHOD, logger=None):
    """
    Solve the value recursion of a joint policy.

    "iterative" runs value iteration until successive iterates differ by at most tol
    (the returned iterate then has a Bellman residual <= gamma * tol). "direct" solves
    (I - gamma M) V = r and is refused above DIRECT_SOLVE_LIMIT joint states.

    Args:
        m (DecPomdpModel): The model.
        p (JointPolicy): The policy.
        tol (float): Residual bound. Defaults to EVAL_TOL.
        method (str): "iterative" or "direct". Defaults to EVAL_METHOD.
        logger (logging.Logger, optional): Logger for progress messages. Defaults to None.

    Returns:
        ValueTable: V(p,q,s), V(b0) and the achieved residual.

    Raises:
        ValueError: On dimensional mismatch, a non-positive tolerance or an unknown method.
    """
    check_compatible(p, m)
    if not tol > 0:
        raise ValueError(f"Evaluation tolerance must be positive, got {tol}.")
    if method not in EVAL_METHODS:
        raise ValueError(f"Unknown evaluation method '{method}', expected one of {EVAL_METHODS}.")

    start = time.perf_counter()
    chain, reward = _joint_chain(m, p)
    size = len(reward)
    gamma = m.discount
    iterations = 0

    if method == "direct":
        if size > DIRECT_SOLVE_LIMIT:
            raise ValueError(f"Direct solve refused for {size} joint states (limit {DIRECT_SOLVE_LIMIT}), "
                             f"use the iterative method.")
        v = np.linalg.solve(np.eye(size) - gamma * chain, reward)
    else:
        v = reward.copy()
        while True:
            iterations += 1
            v_next = reward + gamma * (chain @ v)
            delta = np.max(np.abs(v_next - v))
            v = v_next
            if delta <= tol:
                break

    residual = float(np.max(np.abs(reward + gamma * (chain @ v) - v)))
    shaped = v.reshape(p.agent1.num_nodes, p.agent2.num_nodes, m.num_states)
    v_b0 = value_at_belief(shaped, p, m.initial_belief)
    ms = (time.perf_counter() - start) * 1000.0

    if logger:
        logger.debug(f"Exact evaluation ({method}) over {size} joint states: V(b0)={v_b0:.10g}, "
                     f"residual={residual:.3g}, {iterations} iterations, {ms:.1f} ms.")
    return ValueTable(v=shaped, v_b0=v_b0, residual=residual, method=method,
                      iterations=iterations, ms=ms)


def default_horizon(discount, bias=SIM_BIAS):
    """Smallest h with gamma^h < bias."""
    if discount <= 0.0:
        return 1
    horizon = max(1, math.ceil(math.log(bias) / math.log(discount)))
    while discount ** horizon >= bias:
        horizon += 1
    while horizon > 1 and discount ** (horizon - 1) < bias:
        horizon -= 1
    return horizon


def _sample(rows, rng):
    """One categorical draw per row of a [n, k] probability array."""
    cdf = np.cumsum(rows, axis=1)
    draws = rng.random(rows.shape[0])[:, None]
    return np.minimum((draws >= cdf).sum(axis=1), rows.shape[1] - 1)


def _simulate_block(m, p, episodes, horizon, rng):
    pi1, lam1, nu1 = p.agent1.action_probs, p.agent1.node_transition, p.agent1.initial_dist
    pi2, lam2, nu2 = p.agent2.action_probs, p.agent2.node_transition, p.agent2.initial_dist
    num_z = m.num_obs_2
    # joint observation rows [s', a, b, y*z]
    obs_rows = m.observation.reshape(m.num_states, m.num_actions_1, m.num_actions_2, -1)

    s = _sample(np.broadcast_to(m.initial_belief, (episodes, m.num_states)), rng)
    node1 = _sample(np.broadcast_to(nu1, (episodes, len(nu1))), rng)
    node2 = _sample(np.broadcast_to(nu2, (episodes, len(nu2))), rng)
    returns = np.zeros(episodes)
    weight = 1.0

    for _ in range(horizon):
        a = _sample(pi1[node1], rng)
        b = _sample(pi2[node2], rng)
        returns += weight * m.reward[s, a, b]
        s = _sample(m.transition[s, a, b], rng)
        joint_obs = _sample(obs_rows[s, a, b], rng)
        y, z = joint_obs // num_z, joint_obs % num_z
        # each controller moves on its own observation only
        node1 = _sample(lam1[node1, y], rng)
        node2 = _sample(lam2[node2, z], rng)
        weight *= m.discount
    return returns


def simulate(m, p, episodes=SIM_EPISODES, horizon=None, seed=0, logger=None):
    """
    Estimate V(b0) by decentralized rollouts.

    Episodes are simulated in blocks of SIM_BLOCK_SIZE, block i draws from the
    numpy stream seeded with (seed, i), so the estimate depends only on the arguments.

    Args:
        m (DecPomdpModel): The model.
        p (JointPolicy): The policy.
        episodes (int): Number of episodes. Defaults to SIM_EPISODES.
        horizon (int, optional): Steps per episode. Defaults to the smallest h with gamma^h < SIM_BIAS.
        seed (int): Seed. Defaults to 0.
        logger (logging.Logger, optional): Logger for progress messages. Defaults to None.

    Returns:
        SimulationEstimate: Mean discounted return and its standard error.
    """
    check_compatible(p, m)
    if episodes < 1:
        raise ValueError(f"Need at least one episode, got {episodes}.")
    if horizon is None:
        horizon = default_horizon(m.discount)

    blocks = []
    for block, first in enumerate(range(0, episodes, SIM_BLOCK_SIZE)):
        rng = np.random.default_rng([seed, block])
        blocks.append(_simulate_block(m, p, min(SIM_BLOCK_SIZE, episodes - first), horizon, rng))
    returns = np.concatenate(blocks)

    mean = float(returns.mean())
    std_error = float(returns.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
    if logger:
        logger.info(f"Simulated {episodes} episodes of {horizon} steps (seed {seed}): "
                    f"mean {mean:.6g} +- {std_error:.3g}.")
    return SimulationEstimate(mean=mean, std_error=std_error, episodes=episodes, horizon=horizon, seed=seed)
