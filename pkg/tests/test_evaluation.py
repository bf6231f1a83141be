import dataclasses
import itertools

import numpy as np
import pytest

from planner.benchmarks import MOVES, meeting_grid
from planner.controller import init_random, make_deterministic
from planner.evaluation import (bellman_residual, default_horizon, evaluate_exact, simulate,
                                value_at_belief)


def one_node(model, a, b):
    return make_deterministic(model, {"actions": [a]}, {"actions": [b]})


def test_broadcast_best_one_node_policy(broadcast):
    values = {(a, b): evaluate_exact(broadcast, one_node(broadcast, a, b)).v_b0
              for a, b in itertools.product(range(2), repeat=2)}
    # agent 1 sends every step, its buffer refills with probability 0.9
    assert values[(0, 1)] == pytest.approx(9.1, abs=1e-7)
    assert max(values.values()) == values[(0, 1)]
    assert values[(0, 0)] == pytest.approx(0.0, abs=1e-12)


def test_meeting_grid_walk_towards_each_other():
    model = meeting_grid(2)
    moves = list(MOVES)
    policy = one_node(model, moves.index("right"), moves.index("up"))
    # both arrive in the top-right cell after geometric(0.6) times
    expected = 1 / 0.1 - 2 / (1 - 0.9 * 0.4) + 1 / (1 - 0.9 * 0.16)
    assert evaluate_exact(model, policy).v_b0 == pytest.approx(expected, abs=1e-7)


def test_direct_and_iterative_agree(tiger):
    policy = init_random(tiger, 2, 3, 4)
    iterative = evaluate_exact(tiger, policy, tol=1e-11)
    direct = evaluate_exact(tiger, policy, method="direct")
    assert iterative.method == "iterative" and iterative.iterations > 0
    assert direct.iterations == 0
    np.testing.assert_allclose(iterative.v, direct.v, atol=1e-8)
    assert iterative.v.shape == (2, 3, 2)


def test_residual_is_reported(tiger):
    policy = init_random(tiger, 2, 2, 9)
    table = evaluate_exact(tiger, policy, tol=1e-9)
    assert table.residual <= 1e-9
    assert bellman_residual(tiger, policy, table.v) == pytest.approx(table.residual)
    assert set(table.to_report()) == {"v_b0", "residual", "method", "iterations", "ms"}


def test_value_at_belief(tiger):
    policy = init_random(tiger, 2, 2, 9)
    table = evaluate_exact(tiger, policy)
    assert value_at_belief(table, policy, tiger.initial_belief) == table.v_b0
    left = value_at_belief(table.v, policy, [1.0, 0.0])
    right = value_at_belief(table.v, policy, [0.0, 1.0])
    assert table.v_b0 == pytest.approx(0.5 * (left + right))
    with pytest.raises(ValueError):
        value_at_belief(table, policy, [1.0, 0.0, 0.0])


def test_zero_discount_value_is_immediate_reward(tiger):
    model = dataclasses.replace(tiger, discount=0.0)
    policy = init_random(model, 2, 3, 5)
    expected = np.einsum("pa,qb,sab->pqs", policy.agent1.action_probs, policy.agent2.action_probs, model.reward)
    for method in ("iterative", "direct"):
        np.testing.assert_allclose(evaluate_exact(model, policy, method=method).v, expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_exact_value_matches_dense_solve(make_model, seed):
    rng = np.random.default_rng(seed)
    model = make_model(rng, num_states=3, num_a=2, num_b=3, num_y=2, num_z=2)
    policy = init_random(model, 2, 3, seed)
    pi1, lam1 = policy.agent1.action_probs, policy.agent1.node_transition
    pi2, lam2 = policy.agent2.action_probs, policy.agent2.node_transition
    # P(s',y,z|s,a,b) in full
    dynamics = model.transition[..., None, None] * model.observation.transpose(1, 2, 0, 3, 4)[None]
    chain = np.einsum("pa,qb,sabtyz,pyk,qzl->pqsklt", pi1, pi2, dynamics, lam1, lam2).reshape(18, 18)
    reward = np.einsum("pa,qb,sab->pqs", pi1, pi2, model.reward).reshape(18)
    expected = np.linalg.solve(np.eye(18) - model.discount * chain, reward).reshape(2, 3, 3)
    np.testing.assert_allclose(evaluate_exact(model, policy, method="direct").v, expected, rtol=0, atol=1e-10)


def test_exact_value_of_wide_model(make_model):
    # the dense [s, a, b, s', y, z] table of this model has 92 million entries
    model = make_model(np.random.default_rng(2), num_states=200, num_a=6, num_b=6, num_y=8, num_z=8)
    policy = init_random(model, 1, 1, 0)
    pi1, pi2 = policy.agent1.action_probs[0], policy.agent2.action_probs[0]
    chain = np.einsum("a,b,sabt->st", pi1, pi2, model.transition)
    reward = np.einsum("a,b,sab->s", pi1, pi2, model.reward)
    expected = np.linalg.solve(np.eye(200) - model.discount * chain, reward)
    table = evaluate_exact(model, policy, method="direct")
    np.testing.assert_allclose(table.v[0, 0], expected, rtol=0, atol=1e-9)


@pytest.mark.parametrize("kwargs", [{"tol": 0.0}, {"tol": -1.0}, {"method": "spectral"}])
def test_evaluate_rejects_bad_arguments(broadcast, kwargs):
    with pytest.raises(ValueError):
        evaluate_exact(broadcast, one_node(broadcast, 0, 1), **kwargs)


def test_evaluate_rejects_mismatched_policy(broadcast, tiger):
    with pytest.raises(ValueError):
        evaluate_exact(tiger, init_random(broadcast, 1, 1, 0))


def test_default_horizon():
    assert default_horizon(0.9) == 132
    assert 0.9 ** 132 < 1e-6 <= 0.9 ** 131
    assert default_horizon(0.0) == 1
    assert default_horizon(0.5, bias=0.25) == 3


def test_simulation_is_reproducible(broadcast):
    policy = init_random(broadcast, 2, 2, 3)
    first = simulate(broadcast, policy, episodes=3000, seed=5)
    again = simulate(broadcast, policy, episodes=3000, seed=5)
    other = simulate(broadcast, policy, episodes=3000, seed=6)
    assert first == again
    assert first.mean != other.mean
    assert first.horizon == 132


def test_simulation_matches_exact_value(broadcast):
    policy = one_node(broadcast, 0, 1)
    estimate = simulate(broadcast, policy, episodes=20000, seed=1)
    assert abs(estimate.mean - 9.1) <= 4 * estimate.std_error
    assert estimate.std_error > 0


def test_simulation_single_episode(tiger):
    estimate = simulate(tiger, init_random(tiger, 1, 1, 0), episodes=1, horizon=5)
    assert estimate.std_error == 0.0
    assert estimate.episodes == 1 and estimate.horizon == 5
