import numpy as np
import pytest

from grle.graph import build_graph
from grle.model import OffloadingDecision, SimState, apply_decision, decision_reward, slot_reward
from grle.nn import FlatActor, GraphActor, TopologyMismatch
from grle.policies import (OracleCapExceeded, UnknownPolicy, exhaustive_oracle, make_policy)
from grle.agent import LearningPolicy
from grle.scenarios import ScenarioConfig, generate_slot

from conftest import make_slot, make_task, random_slot, random_state


def run_slots(policy, cfg, table, K):
    state = SimState.initial(cfg.devices, cfg.server_type_indices(table))
    for k in range(1, K + 1):
        slot = generate_slot(cfg, k)
        step = policy.decide(slot, state)
        step.decision.validate(slot, cfg.servers, len(table))
        yield slot, state, step
        _, state = apply_decision(state, slot, step.decision, table, cfg.slot_len_ms)
        policy.learn(k, step)


@pytest.mark.parametrize("name", ["grl", "droo"])
def test_static_policies_use_final_exit_only(name, table):
    cfg = ScenarioConfig(devices=3, slots=80)
    for _, _, step in run_slots(make_policy(name, cfg), cfg, table, 80):
        assert set(step.decision.exits) == {len(table) - 1}


def test_flat_actor_shapes_and_topology():
    cfg = ScenarioConfig(devices=3)
    drooe = make_policy("drooe", cfg)
    assert isinstance(drooe.actor, FlatActor)
    assert drooe.actor.params["out.w"].shape == (64, 3 * 2 * 5)
    assert drooe.actor.params["fc1.w"].shape == (6, 128)
    assert make_policy("droo", cfg).actor.params["out.w"].shape == (64, 6)
    assert isinstance(make_policy("grle", cfg).actor, GraphActor)


def test_flat_actor_rejects_other_topology(table, rng):
    drooe = make_policy("drooe", ScenarioConfig(devices=3))
    slot, state = random_slot(rng, 4), random_state(rng, 4)
    with pytest.raises(TopologyMismatch):
        drooe.decide(slot, state)
    # the graph actor takes any size
    make_policy("grle", ScenarioConfig(devices=3)).decide(slot, state)


def test_zero_weight_flat_actor_picks_lowest_assignment(table, rng):
    p = make_policy("droo", ScenarioConfig(devices=2))
    for t in p.actor.params.values():
        t.data[:] = 0.0
    slot, state = random_slot(rng, 2), random_state(rng, 2)
    g = build_graph(slot, state, table, 30, p.exit_positions)
    assert np.all(p.scores(g) == 0.5)
    step = p.decide(slot, state)
    assert step.n_candidates == 4


def test_learning_policies_share_machinery():
    cfg = ScenarioConfig(devices=2)
    for name in ("grle", "grl", "droo", "drooe"):
        p = make_policy(name, cfg)
        assert type(p) is LearningPolicy
        assert type(p).decide is LearningPolicy.decide and type(p).learn is LearningPolicy.learn


@pytest.mark.parametrize("name", ["grle", "grl", "droo", "drooe", "random"])
def test_policies_are_deterministic(name, table):
    cfg = ScenarioConfig(devices=3, slots=40)
    a = [s.decision for _, _, s in run_slots(make_policy(name, cfg), cfg, table, 40)]
    b = [s.decision for _, _, s in run_slots(make_policy(name, cfg), cfg, table, 40)]
    assert a == b


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_policy_constraints(seed, table):
    cfg = ScenarioConfig(devices=4, link_drop_prob=0.4, seed=seed)
    for slot, _, step in run_slots(make_policy("random", cfg), cfg, table, 30):
        for m, n in enumerate(step.decision.servers):
            assert slot.tasks[m].connected(n)


def test_oracle_single_device_is_best_edge(table, rng):
    slot, state = random_slot(rng, 1), random_state(rng, 1)
    _, r = exhaustive_oracle(state, slot, table, 30)
    singles = [decision_reward(state, slot, OffloadingDecision((n,), (l,)), table, 30)
               for n in range(2) for l in range(len(table))]
    assert r == max(singles)


def test_oracle_dominates_policies(table):
    cfg = ScenarioConfig(devices=3, slots=60, capacity_mode="uniform")
    for name in ("grle", "drooe", "random"):
        for slot, state, step in run_slots(make_policy(name, cfg), cfg, table, 60):
            _, best = exhaustive_oracle(state, slot, table, 30)
            mine = decision_reward(state, slot, step.decision, table, 30)
            assert best >= mine


def test_oracle_cap_and_disconnected(table):
    slot = make_slot([make_task(m) for m in range(3)])
    state = SimState.initial(3, [0, 1])
    with pytest.raises(OracleCapExceeded, match="fewer devices"):
        exhaustive_oracle(state, slot, table, 30, cap=999)
    cut = make_slot([make_task(0, links=(False, True)), make_task(1)])
    d, _ = exhaustive_oracle(SimState.initial(2, [0, 1]), cut, table, 30)
    assert d.servers[0] == 1


def test_oracle_empty_slot(table):
    d, r = exhaustive_oracle(SimState.initial(0, [0, 1]), make_slot([]), table, 30)
    assert d.servers == () and r == 0.0


def test_generous_deadline_prefers_deep_exit(table):
    # with a very long deadline psi is nearly flat, so accuracy decides
    slot = make_slot([make_task(0, deadline=1e5)])
    d, _ = exhaustive_oracle(SimState.initial(1, [0, 1]), slot, table, 30)
    assert d.exits == (len(table) - 1,)


def test_impossible_deadline_keeps_candidate_zero(table, rng):
    p = make_policy("drooe", ScenarioConfig(devices=2, deadline_ms=1e-9))
    slot = make_slot([make_task(m, deadline=1e-9) for m in range(2)])
    state = SimState.initial(2, [0, 1])
    step = p.decide(slot, state)
    assert step.est_reward == 0.0
    g = build_graph(slot, state, table, 30)
    from grle.agent import quantize
    assert step.decision == quantize(p.scores(g), g, 64).decisions[0]


def test_unknown_policy():
    with pytest.raises(UnknownPolicy, match="grle"):
        make_policy("nope", ScenarioConfig())
