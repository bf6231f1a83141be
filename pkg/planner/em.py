# This file is part of the decem project.
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
em.py

Expectation-Maximization over fixed-size joint controllers.

The discounted planning problem is read as a mixture of finite-horizon models: horizon T
has prior weight gamma^T (1 - gamma) and emits a binary "reward" event with probability
R_hat(s,a,b) at its last step. The likelihood of that event, L, relates linearly to the
policy value (`theorem1_value`), so every EM iteration that raises L raises the value.

Key Features:
- `build_kernel`: P(p',q',s'|p,q,s) of the joint chain, pruned over the successor index.
- `forward_messages` / `backward_messages`: alpha_t and beta_tau sweeps, `e_step` bundles them
  with the cutoff rule and the prior-weighted aggregates alpha_hat and beta_hat.
- `likelihood`, `theorem1_value`, `cutoff_k`.
- `update_actions`, `update_node_transitions`, `update_initial`: the closed-form M-step for
  either agent, `m_step` applies all six from one E-step.
- `em_solve`: the anytime loop with per-iteration trace (`EmRunLog`).

Agent 2's updates are computed as agent 1 updates on the model with the agents swapped.

Dependencies: numpy.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import AgentFsc, JointPolicy, check_compatible
from .evaluation import evaluate_exact
from .global_defaults import (AUDIT_EVERY, CUTOFF, CUTOFF_TARGET, ENTRY_CHUNK, EVAL_TOL, LIK_TOL,
                              MAX_ITERS, PROB_FLOOR, REACHABLE_MASS, ZERO_NORMALIZER)
from .model import build_successor_index, normalize_rewards, swap_agents

REASON_TOLERANCE = "tolerance met"
REASON_MAX_ITERS = "max iterations"
REASON_DEGENERATE = "degenerate reward"
REASON_ZERO_LIKELIHOOD = "zero likelihood"
# accepted per-iteration likelihood decrease before a warning is logged
MONOTONE_TOL = 1e-9


class NumericalAbort(RuntimeError):
    """Non-finite numbers, or an all-zero update row for a reachable node."""


####
# cutoff

@dataclass(frozen=True)
class CutoffMode:
    """`fixed` propagates exactly `value` steps, `adaptive` stops by the ratio rule with eps = `value`."""
    kind: str
    value: float

    def __str__(self):
        value = int(self.value) if self.kind == "fixed" else self.value
        return f"{self.kind}:{value}"


def parse_cutoff(text):
    """
    Parse `fixed:K` or `adaptive:EPS`.

    Raises:
        ValueError: On any other form, K < 0 or EPS <= 0.
    """
    if isinstance(text, CutoffMode):
        return text
    kind, _, value = str(text).partition(":")
    try:
        if kind == "fixed":
            steps = int(value)
            if steps < 0:
                raise ValueError
            return CutoffMode("fixed", steps)
        if kind == "adaptive":
            eps = float(value)
            if not eps > 0:
                raise ValueError
            return CutoffMode("adaptive", eps)
    except ValueError:
        pass
    raise ValueError(f"Invalid cutoff '{text}', expected 'fixed:K' (K >= 0) or 'adaptive:EPS' (EPS > 0).")


def time_prior(discount, k):
    """P(T=t) = gamma^t (1 - gamma) for t = 0..k."""
    return np.power(discount, np.arange(k + 1, dtype=float)) * (1.0 - discount)


def cutoff_cap(discount, target=CUTOFF_TARGET):
    """Hard upper bound ceil(log(target) / log(gamma)) on the adaptive cutoff, 0 for gamma = 0."""
    if discount <= 0.0:
        return 0
    return max(1, math.ceil(math.log(target) / math.log(discount)))


def cutoff_k(discount, mode, lik_terms=None):
    """
    Propagation horizon K.

    The adaptive rule stops at the first k >= 1 with
        gamma^(2k) (1 - gamma) L_2k <= eps * sum_{T < 2k} gamma^T (1 - gamma) L_T
    and propagates to K = 2k, never beyond `cutoff_cap`. Inside `e_step` the rule is
    evaluated while the messages are propagated, here it is evaluated on given L_T terms.

    Args:
        discount (float): gamma.
        mode (CutoffMode or str): The cutoff mode.
        lik_terms (sequence of float, optional): L_T for T = 0, 1, ... (adaptive mode only).
            If the rule does not fire within the given terms the cap is returned.

    Returns:
        int: K.
    """
    mode = parse_cutoff(mode)
    if mode.kind == "fixed":
        return int(mode.value)
    cap = cutoff_cap(discount)
    if cap == 0:
        return 0
    if lik_terms is None:
        raise ValueError("The adaptive cutoff needs the per-horizon likelihood terms.")
    lik_terms = np.asarray(lik_terms, dtype=float)
    weighted = time_prior(discount, len(lik_terms) - 1) * lik_terms
    k = 1
    while 2 * k < cap and 2 * k < len(weighted):
        if weighted[2 * k] <= mode.value * weighted[:2 * k].sum():
            return 2 * k
        k += 1
    return cap


####
# kernel

def _dynamics(m):
    """P(s',y,z|s,a,b) as [s, a, b, s', y, z]."""
    return m.transition[..., None, None] * m.observation.transpose(1, 2, 0, 3, 4)[None]


def _chunks(num_entries, width):
    """Slices over successor tuples, each chunk holds at most ENTRY_CHUNK tuple x node products."""
    step = max(1, ENTRY_CHUNK // max(1, width))
    for start in range(0, num_entries, step):
        yield slice(start, min(start + step, num_entries))


@dataclass(frozen=True, eq=False)
class JointKernel:
    """P(p',q',s'|p,q,s) as a [D, D] matrix over the (p,q,s) C-order flattening."""
    matrix: np.ndarray
    shape: tuple

    @property
    def kernel(self):
        """The 6-d view [p][q][s][p'][q'][s']."""
        return self.matrix.reshape(self.shape + self.shape)

    def forward(self, alpha):
        return (alpha.reshape(-1) @ self.matrix).reshape(self.shape)

    def backward(self, beta):
        return (self.matrix @ beta.reshape(-1)).reshape(self.shape)


def build_kernel(m, p, idx=None, pruned=True):
    """
    Transition kernel of the joint chain,
    P(p',q',s'|p,q,s) = sum_{a,b,y,z} pi1(a|p) pi2(b|q) T(s'|s,a,b) O(y,z|s',a,b) lambda1(p'|p,y) lambda2(q'|q,z).

    Args:
        m (DecPomdpModel): The model.
        p (JointPolicy): The policy.
        idx (SuccessorIndex, optional): Successor index of m, built if missing.
        pruned (bool): Sum only over successor tuples (True) or over the dense tables.

    Returns:
        JointKernel: The kernel.

    Raises:
        ValueError: If the policy does not fit the model.
    """
    check_compatible(p, m)
    pi1, lam1 = p.agent1.action_probs, p.agent1.node_transition
    pi2, lam2 = p.agent2.action_probs, p.agent2.node_transition
    n1, n2, num_states = p.agent1.num_nodes, p.agent2.num_nodes, m.num_states

    if not pruned:
        kernel = np.einsum("pa,qb,sabtyz,pyk,qzl->pqsklt", pi1, pi2, _dynamics(m), lam1, lam2,
                           optimize=True)
    else:
        if idx is None:
            idx = build_successor_index(m)
        acc = np.zeros((num_states * num_states, n1, n2, n1, n2))
        for e in _chunks(idx.num_entries, n1 * n1 * n2 * n2):
            contrib = np.einsum("e,ep,eq,epk,eql->epqkl", idx.weight[e],
                                pi1[:, idx.action_1[e]].T, pi2[:, idx.action_2[e]].T,
                                lam1[:, idx.obs_1[e], :].transpose(1, 0, 2),
                                lam2[:, idx.obs_2[e], :].transpose(1, 0, 2), optimize=True)
            np.add.at(acc, idx.state[e] * num_states + idx.next_state[e], contrib)
        kernel = acc.reshape(num_states, num_states, n1, n2, n1, n2).transpose(2, 3, 0, 4, 5, 1)

    size = n1 * n2 * num_states
    return JointKernel(matrix=np.ascontiguousarray(kernel).reshape(size, size),
                       shape=(n1, n2, num_states))


####
# messages

def forward_messages(k, p, b0, K):
    """
    alpha_0(p,q,s) = nu1(p) nu2(q) b0(s), alpha_t = alpha_{t-1} propagated through the kernel.

    Returns:
        list[np.ndarray]: alpha_0 .. alpha_K, each [p][q][s].
    """
    alpha = [np.einsum("p,q,s->pqs", p.agent1.initial_dist, p.agent2.initial_dist,
                       np.asarray(b0, dtype=float))]
    for _ in range(K):
        alpha.append(k.forward(alpha[-1]))
    return alpha


def backward_messages(m, rhat, k, p, K, raw=False):
    """
    beta_0(p,q,s) = sum_{a,b} R_hat(s,a,b) pi1(a|p) pi2(b|q), beta_tau = kernel applied to beta_{tau-1}.

    With raw=True the model's rewards replace R_hat, sum_tau gamma^tau beta_tau then
    approaches V(p,q,s).

    Returns:
        list[np.ndarray]: beta_0 .. beta_K, each [p][q][s].
    """
    reward = m.reward if raw else rhat.r_hat
    beta = [np.einsum("sab,pa,qb->pqs", reward, p.agent1.action_probs, p.agent2.action_probs)]
    for _ in range(K):
        beta.append(k.backward(beta[-1]))
    return beta


@dataclass(frozen=True, eq=False)
class MessageSet:
    alpha: tuple
    beta: tuple
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    cutoff_k: int
    time_prior_mass: float
    lik_terms: np.ndarray
    discount: float

    @property
    def likelihood(self):
        return likelihood(self)


def _adaptive_horizon(k, alpha, beta, discount, eps, min_k):
    """Propagate alpha and beta jointly until the ratio rule fires, return K."""
    cap = cutoff_cap(discount)
    if cap == 0:
        return min_k
    prior = time_prior(discount, cap)
    head = prior[0] * float(np.vdot(alpha[0], beta[0]))
    step = 0
    while True:
        step += 1
        if 2 * step >= cap:
            return max(cap, min_k)
        alpha.append(k.forward(alpha[step - 1]))
        beta.append(k.backward(beta[step - 1]))
        head += prior[2 * step - 1] * float(np.vdot(alpha[step], beta[step - 1]))
        tail = prior[2 * step] * float(np.vdot(alpha[step], beta[step]))
        if tail <= eps * head:
            return max(2 * step, min_k)
        head += tail


def e_step(m, rhat, p, idx=None, cutoff=CUTOFF, min_k=0, pruned=True, logger=None):
    """
    Kernel, forward and backward messages and their prior-weighted aggregates.

    Args:
        m (DecPomdpModel): The model.
        rhat (NormalizedRewards): Normalized rewards of m.
        p (JointPolicy): The current policy.
        idx (SuccessorIndex, optional): Successor index of m.
        cutoff (CutoffMode or str): Cutoff mode. Defaults to CUTOFF.
        min_k (int): Lower bound on K, EM passes the previous iteration's K.
        pruned (bool): Use the successor index in the kernel.
        logger (logging.Logger, optional): Logger for the chosen cutoff. Defaults to None.

    Returns:
        MessageSet: Messages to a common cutoff K.
    """
    mode = parse_cutoff(cutoff)
    k = build_kernel(m, p, idx, pruned)
    alpha = forward_messages(k, p, m.initial_belief, 0)
    beta = backward_messages(m, rhat, k, p, 0)

    if mode.kind == "fixed":
        horizon = max(int(mode.value), min_k)
    else:
        horizon = _adaptive_horizon(k, alpha, beta, m.discount, mode.value, min_k)
    while len(alpha) <= horizon:
        alpha.append(k.forward(alpha[-1]))
    while len(beta) <= horizon:
        beta.append(k.backward(beta[-1]))

    prior = time_prior(m.discount, horizon)
    alpha_hat = np.tensordot(prior, np.stack(alpha), axes=1)
    beta_hat = np.tensordot(prior, np.stack(beta), axes=1)
    # L_T = alpha_t . beta_{T-t} for any split of T
    lik_terms = np.array([np.vdot(alpha[(t + 1) // 2], beta[t // 2]) for t in range(horizon + 1)])

    if logger:
        logger.debug(f"E-step: cutoff K={horizon} ({mode}), prior mass {prior.sum():.12g}.")
    return MessageSet(alpha=tuple(alpha), beta=tuple(beta), alpha_hat=alpha_hat, beta_hat=beta_hat,
                      cutoff_k=horizon, time_prior_mass=float(prior.sum()), lik_terms=lik_terms,
                      discount=m.discount)


def likelihood(msgs, method="contraction"):
    """
    L = sum_{T<=K} gamma^T (1 - gamma) L_T.

    "contraction" evaluates alpha_hat . beta_0, "per_horizon" sums the L_T terms.

    Raises:
        ValueError: If the forward and backward sequences do not share the cutoff.
    """
    if not len(msgs.alpha) == len(msgs.beta) == msgs.cutoff_k + 1:
        raise ValueError(f"Messages have mismatched cutoffs: {len(msgs.alpha)} forward and "
                         f"{len(msgs.beta)} backward messages for K={msgs.cutoff_k}.")
    if method == "contraction":
        return float(np.vdot(msgs.alpha_hat, msgs.beta[0]))
    if method == "per_horizon":
        return float(np.dot(time_prior(msgs.discount, msgs.cutoff_k), msgs.lik_terms))
    raise ValueError(f"Unknown likelihood method '{method}'.")


def theorem1_value(L, rhat, discount):
    """V = (r_max - r_min) L / (1 - gamma) + r_min / (1 - gamma)."""
    return (rhat.scale * L + rhat.r_min) / (1.0 - discount)


def truncation_bound(rhat, discount, K):
    """Largest gap between `theorem1_value` at cutoff K and the exact value."""
    return rhat.scale * discount ** (K + 1) / (1.0 - discount)


####
# M-step

@dataclass(frozen=True, eq=False)
class _AgentView:
    """Inputs of an agent 1 update, agent 2 is served by the swapped model."""
    model: object
    r_hat: np.ndarray
    own: AgentFsc
    other: AgentFsc
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    idx: object


def _view(m, rhat, p, msgs, agent, idx=None, pruned=True, cache=None):
    if agent not in (1, 2):
        raise ValueError(f"Agent must be 1 or 2, got {agent}.")
    check_compatible(p, m)
    cache = {} if cache is None else cache
    r_hat = None if rhat is None else rhat.r_hat

    if agent == 1:
        if pruned and idx is None:
            idx = cache.get("idx") or cache.setdefault("idx", build_successor_index(m))
        return _AgentView(model=m, r_hat=r_hat, own=p.agent1, other=p.agent2,
                          alpha_hat=msgs.alpha_hat, beta_hat=msgs.beta_hat, idx=idx)

    if "model2" not in cache:
        cache["model2"] = swap_agents(m)
    swapped_idx = None
    if pruned:
        if "idx2" not in cache:
            cache["idx2"] = idx.swapped() if idx is not None else build_successor_index(cache["model2"])
        swapped_idx = cache["idx2"]
    return _AgentView(model=cache["model2"], r_hat=None if r_hat is None else r_hat.transpose(0, 2, 1),
                      own=p.agent2, other=p.agent1, alpha_hat=msgs.alpha_hat.transpose(1, 0, 2),
                      beta_hat=msgs.beta_hat.transpose(1, 0, 2), idx=swapped_idx)


def _row_label(shape, flat):
    return [int(i) for i in np.unravel_index(flat, shape)] if shape else []


def _normalized_update(old, weights, reach, name):
    """
    new(row) = old(row) * weights(row) / C(row), with the probability floor applied to
    entries that were positive before. Rows with C < ZERO_NORMALIZER keep their old values
    if unreachable and abort otherwise.
    """
    rows_old = old.reshape(-1, old.shape[-1])
    raw = rows_old * np.asarray(weights).reshape(rows_old.shape)
    if not np.all(np.isfinite(raw)):
        raise NumericalAbort(f"{name}: non-finite values in the M-step update.")
    norm = raw.sum(axis=1)
    reach = np.asarray(reach, dtype=float).reshape(-1)

    dead = norm < ZERO_NORMALIZER
    abort = dead & (reach > REACHABLE_MASS)
    if np.any(abort):
        row = int(np.flatnonzero(abort)[0])
        raise NumericalAbort(f"{name}{_row_label(old.shape[:-1], row)}: normalizer {norm[row]:.3g} "
                             f"for a reachable row (occupancy {reach[row]:.3g}).")

    new = np.where(dead[:, None], rows_old, raw / np.where(dead, 1.0, norm)[:, None])
    new = np.where(rows_old > 0.0, np.maximum(new, PROB_FLOOR), 0.0)
    new /= new.sum(axis=1, keepdims=True)
    return new.reshape(old.shape)


def _action_weights(view, pruned):
    """Bracket of the action update per (p, a), and the occupancy of every node p."""
    m = view.model
    pi1, lam1 = view.own.action_probs, view.own.node_transition
    pi2, lam2 = view.other.action_probs, view.other.node_transition
    alpha_hat, beta_hat = view.alpha_hat, view.beta_hat
    gamma = m.discount

    immediate = np.einsum("sab,qb->qsa", view.r_hat, pi2)
    weights = np.einsum("pqs,qsa->pa", alpha_hat, immediate)

    if gamma > 0.0:
        # G[p,q,s',y,z] = sum_{p',q'} beta_hat(p',q',s') lambda1(p'|p,y) lambda2(q'|q,z)
        g = np.einsum("kls,pyk,qzl->pqsyz", beta_hat, lam1, lam2, optimize=True)
        n1, n2, num_states, num_a = len(pi1), len(pi2), m.num_states, m.num_actions_1
        if pruned:
            idx = view.idx
            future = np.zeros((num_states * num_a, n1, n2))
            for e in _chunks(idx.num_entries, n1 * n2):
                contrib = (idx.weight[e][:, None, None]
                           * pi2[:, idx.action_2[e]].T[:, None, :]
                           * g[:, :, idx.next_state[e], idx.obs_1[e], idx.obs_2[e]].transpose(2, 0, 1))
                np.add.at(future, idx.state[e] * num_a + idx.action_1[e], contrib)
            future = future.reshape(num_states, num_a, n1, n2).transpose(2, 3, 0, 1)
        else:
            future = np.einsum("qb,sabtyz,pqtyz->pqsa", pi2, _dynamics(m), g, optimize=True)
        weights = weights + gamma / (1.0 - gamma) * np.einsum("pqs,pqsa->pa", alpha_hat, future)

    return weights, alpha_hat.sum(axis=(1, 2))


def _transition_weights(view, pruned):
    """Weights of the node-transition update per (p_bar, y, p), and the occupancy of every (p_bar, y)."""
    m = view.model
    pi1, pi2 = view.own.action_probs, view.other.action_probs
    lam2 = view.other.node_transition
    alpha_hat = view.alpha_hat
    n1, n2 = len(pi1), len(pi2)

    # B2[p, q_bar, s, z] = sum_q beta_hat(p,q,s) lambda2(q|q_bar,z)
    b2 = np.einsum("pqs,rzq->prsz", view.beta_hat, lam2)

    if pruned:
        idx = view.idx
        weights = np.zeros((m.num_obs_1, n1, n1))
        mass = np.zeros((m.num_obs_1, n1))
        for e in _chunks(idx.num_entries, n1 * n2 * n1):
            reached = (alpha_hat[:, :, idx.state[e]].transpose(2, 0, 1)
                       * pi1[:, idx.action_1[e]].T[:, :, None]
                       * pi2[:, idx.action_2[e]].T[:, None, :]
                       * idx.weight[e][:, None, None])
            ahead = b2[:, :, idx.next_state[e], idx.obs_2[e]].transpose(2, 0, 1)
            np.add.at(weights, idx.obs_1[e], np.einsum("erq,epq->erp", reached, ahead))
            np.add.at(mass, idx.obs_1[e], reached.sum(axis=2))
        return weights.transpose(1, 0, 2), mass.T

    reached = np.einsum("rqs,ra,qb,sabtyz->rqtyz", alpha_hat, pi1, pi2, _dynamics(m), optimize=True)
    weights = np.einsum("rqtyz,pqtz->ryp", reached, b2, optimize=True)
    return weights, reached.sum(axis=(1, 2, 4))


def update_actions(m, rhat, p, msgs, agent=1, idx=None, pruned=True, cache=None):
    """
    New action distribution of one agent (agent 1 shown, nodes p, partner nodes q):
        pi*(a|p) ~ pi(a|p) sum_{q,s} alpha_hat(p,q,s) [ sum_b R_hat(s,a,b) pi2(b|q)
                   + gamma/(1-gamma) sum_{b,s',y,z,p',q'} pi2(b|q) T O beta_hat(p',q',s') lambda1 lambda2 ]

    Args:
        m (DecPomdpModel): The model.
        rhat (NormalizedRewards): Normalized rewards.
        p (JointPolicy): Policy the messages were computed for.
        msgs (MessageSet): Messages of p.
        agent (int): 1 or 2.
        idx (SuccessorIndex, optional): Successor index of m (not of the swapped model).
        pruned (bool): Sum only over successor tuples.
        cache (dict, optional): Holds the swapped model and index between calls.

    Returns:
        np.ndarray: pi* as [n][a].

    Raises:
        NumericalAbort: On an all-zero row of a reachable node or non-finite values.
    """
    view = _view(m, rhat, p, msgs, agent, idx, pruned, cache)
    weights, reach = _action_weights(view, pruned)
    return _normalized_update(view.own.action_probs, weights, reach, f"pi{agent}")


def update_node_transitions(m, p, msgs, agent=1, idx=None, pruned=True, cache=None):
    """
    New node transition of one agent (agent 1 shown):
        lambda*(p|p_bar,y) ~ lambda(p|p_bar,y) sum alpha_hat(p_bar,q_bar,s_bar) beta_hat(p,q,s)
                             lambda2(q|q_bar,z) sum_{a,b} O(y,z|s,a,b) T(s|s_bar,a,b) pi1(a|p_bar) pi2(b|q_bar)

    Returns:
        np.ndarray: lambda* as [n][o][n'].

    Raises:
        NumericalAbort: On an all-zero row of a reachable (node, observation) pair.
    """
    view = _view(m, None, p, msgs, agent, idx, pruned, cache)
    weights, reach = _transition_weights(view, pruned)
    return _normalized_update(view.own.node_transition, weights, reach, f"lambda{agent}")


def update_initial(p, msgs, b0, agent=1):
    """
    New start distribution: nu*(p) ~ nu(p) sum_{q,s} beta_hat(p,q,s) nu2(q) b0(s).

    Raises:
        NumericalAbort: If every weight vanishes.
    """
    if agent not in (1, 2):
        raise ValueError(f"Agent must be 1 or 2, got {agent}.")
    b0 = np.asarray(b0, dtype=float)
    if agent == 1:
        own, weights = p.agent1, np.einsum("pqs,q,s->p", msgs.beta_hat, p.agent2.initial_dist, b0)
    else:
        own, weights = p.agent2, np.einsum("pqs,p,s->q", msgs.beta_hat, p.agent1.initial_dist, b0)
    return _normalized_update(own.initial_dist, weights, [1.0], f"nu{agent}")


def m_step(m, rhat, p, msgs, idx=None, pruned=True, cache=None):
    """
    All six updates (pi, lambda, nu of both agents) from the same messages, applied together.

    Returns:
        JointPolicy: The updated policy.
    """
    cache = {} if cache is None else cache
    fscs = []
    for agent in (1, 2):
        fscs.append(AgentFsc(
            action_probs=update_actions(m, rhat, p, msgs, agent, idx, pruned, cache),
            node_transition=update_node_transitions(m, p, msgs, agent, idx, pruned, cache),
            initial_dist=update_initial(p, msgs, m.initial_belief, agent)))
    return JointPolicy(agent1=fscs[0], agent2=fscs[1])


####
# driver

@dataclass(frozen=True)
class EmConfig:
    max_iters: int = MAX_ITERS
    lik_tol: float = LIK_TOL
    cutoff: str = CUTOFF
    audit_every: int = AUDIT_EVERY
    pruned: bool = True
    eval_tol: float = EVAL_TOL


@dataclass
class IterationRecord:
    iteration: int
    likelihood: float
    value_thm1: float
    value_exact: float
    cutoff_k: int
    ms: float

    def to_dict(self):
        record = {"iter": self.iteration, "likelihood": self.likelihood, "value_thm1": self.value_thm1,
                  "cutoff_k": self.cutoff_k, "ms": self.ms}
        if self.value_exact is not None:
            record["value_exact"] = self.value_exact
        return record


@dataclass
class EmRunLog:
    """
    Anytime trace of one EM run.

    Log lines are buffered in `notes` as (level, message) so concurrent restarts can be
    written out by a single writer (`flush`).
    """
    records: list = field(default_factory=list)
    reason: str = None
    final_value: float = None
    final_likelihood: float = None
    iterations: int = 0
    policy_hash: str = None
    notes: list = field(default_factory=list)

    @property
    def likelihoods(self):
        return [record.likelihood for record in self.records]

    def note(self, level, message, logger=None):
        self.notes.append((level, message))
        if logger:
            logger.log(level, message)

    def flush(self, logger, prefix=""):
        for level, message in self.notes:
            logger.log(level, prefix + message)

    def to_lines(self):
        """JSON-lines records, the last one carries the stop reason and the policy hash."""
        lines = [record.to_dict() for record in self.records]
        lines.append({"final": True, "reason": self.reason, "iterations": self.iterations,
                      "likelihood": self.final_likelihood, "value_exact": self.final_value,
                      "policy_hash": self.policy_hash})
        return lines


def em_solve(m, p0, config=None, idx=None, logger=None):
    """
    Run EM from an initial policy.

    Every iteration runs one E-step and, unless a stop condition holds, one M-step.
    The run stops when the relative likelihood improvement drops below lik_tol, after
    max_iters M-steps, or when the likelihood is zero. The policy with the highest
    likelihood seen is returned and audited exactly.

    Args:
        m (DecPomdpModel): The model.
        p0 (JointPolicy): Initial policy, ideally fully supported.
        config (EmConfig, optional): Loop settings. Defaults to EmConfig().
        idx (SuccessorIndex, optional): Successor index of m, built if missing.
        logger (logging.Logger, optional): Logger, pass None to only buffer the notes.

    Returns:
        tuple: (JointPolicy, EmRunLog)

    Raises:
        NumericalAbort: On non-finite numbers or an all-zero row of a reachable node.
    """
    config = config or EmConfig()
    mode = parse_cutoff(config.cutoff)
    check_compatible(p0, m)
    rhat = normalize_rewards(m)
    run_log = EmRunLog()
    start = time.perf_counter()

    def elapsed():
        return (time.perf_counter() - start) * 1000.0

    if rhat.degenerate:
        value = evaluate_exact(m, p0, tol=config.eval_tol).v_b0
        run_log.note(logging.WARNING, f"Reward table is constant ({rhat.r_min}), every policy has value "
                                      f"{value:.6g}, EM skipped.", logger)
        run_log.records.append(IterationRecord(0, 0.0, theorem1_value(0.0, rhat, m.discount), value, 0,
                                               elapsed()))
        run_log.reason, run_log.final_value, run_log.final_likelihood = REASON_DEGENERATE, value, 0.0
        run_log.policy_hash = p0.policy_hash
        return p0, run_log

    if config.pruned and idx is None:
        idx = build_successor_index(m)
    cache = {}
    policy = p0
    best_lik, best_policy, best_iteration = -math.inf, p0, 0
    previous = None
    min_k = 0

    for iteration in range(config.max_iters + 1):
        msgs = e_step(m, rhat, policy, idx, mode, min_k=min_k, pruned=config.pruned)
        min_k = msgs.cutoff_k
        lik = likelihood(msgs)
        if not math.isfinite(lik):
            raise NumericalAbort(f"Likelihood is {lik} at iteration {iteration}.")

        audited = None
        if config.audit_every and iteration % config.audit_every == 0:
            audited = evaluate_exact(m, policy, tol=config.eval_tol).v_b0
        value = theorem1_value(lik, rhat, m.discount)
        run_log.records.append(IterationRecord(iteration, lik, value, audited, msgs.cutoff_k, elapsed()))
        run_log.note(logging.DEBUG, f"iter {iteration}: L={lik:.12g} V={value:.8g} K={msgs.cutoff_k}"
                     + (f" V_exact={audited:.8g}" if audited is not None else ""), logger)

        if previous is not None and lik < previous - MONOTONE_TOL:
            run_log.note(logging.WARNING, f"Likelihood decreased at iteration {iteration}: "
                                          f"{previous:.12g} -> {lik:.12g}.", logger)
        if lik > best_lik:
            best_lik, best_policy, best_iteration = lik, policy, iteration

        if lik <= 0.0:
            run_log.reason = REASON_ZERO_LIKELIHOOD
            break
        if previous is not None and lik - previous < config.lik_tol * abs(previous):
            run_log.reason = REASON_TOLERANCE
            break
        if iteration == config.max_iters:
            run_log.reason = REASON_MAX_ITERS
            break

        previous = lik
        policy = m_step(m, rhat, policy, msgs, idx, config.pruned, cache)

    run_log.final_value = evaluate_exact(m, best_policy, tol=config.eval_tol).v_b0
    run_log.final_likelihood = best_lik
    run_log.iterations = best_iteration
    run_log.policy_hash = best_policy.policy_hash
    run_log.note(logging.INFO, f"EM stopped after {len(run_log.records) - 1} iterations ({run_log.reason}): "
                               f"L={best_lik:.10g}, V={run_log.final_value:.8g}.", logger)
    return best_policy, run_log
