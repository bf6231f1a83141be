import numpy as np
import pytest

from planner.controller import (AgentFsc, JointPolicy, check_compatible, init_random, make_deterministic,
                                policy_from_dict, policy_to_dict, validate_policy)
from planner.global_defaults import INIT_FLOOR


def test_init_random_is_seeded(tiger):
    first = init_random(tiger, 3, 2, [7, 0])
    again = init_random(tiger, 3, 2, [7, 0])
    other = init_random(tiger, 3, 2, [7, 1])
    for name in ("action_probs", "node_transition", "initial_dist"):
        np.testing.assert_array_equal(getattr(first.agent1, name), getattr(again.agent1, name))
        np.testing.assert_array_equal(getattr(first.agent2, name), getattr(again.agent2, name))
    assert first.policy_hash == again.policy_hash
    assert first.policy_hash != other.policy_hash


def test_init_random_is_valid_and_fully_supported(tiger):
    policy = init_random(tiger, 3, 2, 11)
    assert policy.nodes == (3, 2)
    assert policy.agent1.action_probs.shape == (3, 3)
    assert policy.agent2.node_transition.shape == (2, 2, 2)
    assert validate_policy(policy, tiger) == []
    for fsc in (policy.agent1, policy.agent2):
        for table in (fsc.action_probs, fsc.node_transition, fsc.initial_dist):
            # floored before normalizing, rows have at most 3 entries
            assert table.min() >= INIT_FLOOR / 3


def test_init_random_needs_nodes(tiger):
    with pytest.raises(ValueError):
        init_random(tiger, 0, 1, 0)


def test_make_deterministic(broadcast):
    policy = make_deterministic(broadcast,
                                {"actions": [0, 1], "transitions": [[1, 0], [1, 1]], "start": 1},
                                {"actions": [1]})
    np.testing.assert_array_equal(policy.agent1.action_probs, [[1, 0], [0, 1]])
    np.testing.assert_array_equal(policy.agent1.node_transition[0], [[0, 1], [1, 0]])
    np.testing.assert_array_equal(policy.agent1.initial_dist, [0, 1])
    np.testing.assert_array_equal(policy.agent2.node_transition, [[[1], [1]]])
    assert validate_policy(policy, broadcast) == []


def test_make_deterministic_defaults_to_node_zero(broadcast):
    policy = make_deterministic(broadcast, {"actions": [0, 1, 1]}, {"actions": [1]})
    assert policy.agent1.node_transition.shape == (3, 2, 3)
    np.testing.assert_array_equal(policy.agent1.node_transition[..., 0], 1.0)
    np.testing.assert_array_equal(policy.agent1.initial_dist, [1, 0, 0])


@pytest.mark.parametrize("agent1", [
    {"actions": [2]},
    {"actions": [0], "transitions": [[0, 1]]},
    {"actions": [0], "start": 1},
])
def test_make_deterministic_out_of_range(broadcast, agent1):
    with pytest.raises(IndexError):
        make_deterministic(broadcast, agent1, {"actions": [0]})


def test_validate_policy_reports_rows(broadcast):
    good = init_random(broadcast, 2, 2, 0)
    action_probs = good.agent1.action_probs.copy()
    action_probs[1] = [0.5, 0.6]
    bad = JointPolicy(agent1=AgentFsc(action_probs, good.agent1.node_transition, good.agent1.initial_dist),
                      agent2=good.agent2)
    report = validate_policy(bad, broadcast)
    assert len(report) == 1
    assert report[0].startswith("agent1.action_probs[1] sums to 1.1")


def test_check_compatible_names_shapes(broadcast, tiger):
    policy = init_random(broadcast, 2, 2, 0)
    with pytest.raises(ValueError, match=r"agent1.action_probs has shape \(2, 2\), expected \(2, 3\)"):
        check_compatible(policy, tiger)
    check_compatible(policy, broadcast)


def test_policy_dict_mirror(tiger):
    policy = init_random(tiger, 2, 3, 5)
    data = policy_to_dict(policy, {"seed": [5, 0], "value": -20.5})
    assert data["format"] == "decem-policy"
    assert [agent["nodes"] for agent in data["agents"]] == [2, 3]
    again, provenance = policy_from_dict(data)
    assert provenance == {"seed": [5, 0], "value": -20.5}
    assert again.policy_hash == policy.policy_hash
    np.testing.assert_array_equal(again.agent2.node_transition, policy.agent2.node_transition)


def test_policy_from_dict_rejects_other_documents(tiger):
    data = policy_to_dict(init_random(tiger, 2, 2, 0))
    with pytest.raises(ValueError):
        policy_from_dict(dict(data, format="something-else"))
    data["agents"][0]["nodes"] = 4
    with pytest.raises(ValueError, match="declares 4 nodes"):
        policy_from_dict(data)


def test_swapped_policy(tiger):
    policy = init_random(tiger, 2, 3, 1)
    assert policy.swapped().nodes == (3, 2)
    assert policy.swapped().agent1 is policy.agent2
