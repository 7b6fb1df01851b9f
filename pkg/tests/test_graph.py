import numpy as np
import pytest

from grle.graph import IsolatedDeviceError, MecGraph, build_graph, merge_graphs
from grle.model import SimState
from grle.policies import make_policy
from grle.scenarios import ScenarioConfig, generate_slot

from conftest import make_slot, make_task, random_slot, random_state


def test_counts_fully_connected(table):
    slot = make_slot([make_task(0), make_task(1)])
    g = build_graph(slot, SimState.initial(2, [0, 1]), table, 30)
    assert g.n_nodes == 2 + 2 * 5
    assert g.n_edges == 20
    assert all(len(e) == 10 for e in g.device_edges)
    assert list(g.node_kind[:2]) == [0, 0] and set(g.node_kind[2:]) == {1}


def test_disconnected_server_drops_edges(table):
    slot = make_slot([make_task(0), make_task(1, links=(True, False))])
    g = build_graph(slot, SimState.initial(2, [0, 1]), table, 30)
    assert len(g.device_edges[1]) == 5
    assert set(g.edge_server[g.device_edges[1]]) == {0}
    assert g.n_nodes == 12


def test_isolated_device_raises(table):
    slot = make_slot([make_task(0, links=(False, False))])
    with pytest.raises(IsolatedDeviceError):
        build_graph(slot, SimState.initial(1, [0, 1]), table, 30)


def test_empty_slot_gives_empty_decision(table):
    cfg = ScenarioConfig(devices=0)
    slot = generate_slot(cfg, 1)
    g = build_graph(slot, SimState.initial(0, [0, 1]), table, 30)
    assert g.n_devices == 0 and g.n_edges == 0 and g.n_nodes == 10
    step = make_policy("grle", cfg).decide(slot, SimState.initial(0, [0, 1]))
    assert step.decision.servers == () and step.decision.exits == ()


def test_feature_values(table):
    slot = make_slot([make_task(0, size=100, rates=(80.0, 40.0))], capacity=[1.0, 0.5])
    g = build_graph(slot, SimState.initial(1, [0, 1]), table, 30)
    assert list(g.node_features[0]) == [1.0, 0.0, 1.0, 0.3, 0.0, 0.0]
    # server 1 (GTX type) at half capacity, deepest exit
    last = g.node_features[1 + 5 + 4]
    assert last[:3].tolist() == [0.0, 1.0, 0.935]
    assert last[3] == pytest.approx(2.42 / 0.5)
    assert last[5] == 0.5
    e = g.device_edges[0][5]       # first edge to server 1
    assert g.edge_attrs[e][0] == pytest.approx(0.4)
    assert g.edge_attrs[e][1] == pytest.approx(20.0 / 30.0)


def test_graph_uses_estimated_rates_only(table):
    a = make_slot([make_task(0, rates=(30.0, 40.0), est=(80.0, 60.0))])
    b = make_slot([make_task(0, rates=(90.0, 10.0), est=(80.0, 60.0))])
    state = SimState.initial(1, [0, 1])
    assert np.array_equal(build_graph(a, state, table, 30).edge_attrs,
                          build_graph(b, state, table, 30).edge_attrs)


def test_json_round_trip(table, rng):
    g = build_graph(random_slot(rng, 3), random_state(rng, 3), table, 30)
    h = MecGraph.from_json(g.to_json())
    for name in ("node_features", "node_kind", "src", "dst", "edge_attrs", "edge_device",
                 "edge_server", "edge_exit"):
        assert np.array_equal(getattr(g, name), getattr(h, name))
    assert (h.n_devices, h.n_servers, h.exit_positions) == (g.n_devices, g.n_servers, g.exit_positions)


def test_merge_graphs_offsets(table, rng):
    gs = [build_graph(random_slot(rng, m), random_state(rng, m), table, 30) for m in (1, 2, 3)]
    union, off = merge_graphs(gs)
    assert list(off) == [0, 10, 30, 60]
    assert union.n_nodes == sum(g.n_nodes for g in gs)
    assert np.array_equal(union.src[off[1]:off[2]], gs[1].src + gs[0].n_nodes)


def test_feature_range_canary(table):
    cfg = ScenarioConfig(devices=4, slots=200)
    policy = make_policy("random", cfg)
    state = SimState.initial(4, cfg.server_type_indices(table))
    from grle.model import apply_decision
    worst = 0.0
    for k in range(1, 201):
        slot = generate_slot(cfg, k)
        g = build_graph(slot, state, table, cfg.slot_len_ms)
        assert np.all(g.node_features >= 0) and np.all(g.edge_attrs >= 0)
        worst = max(worst, g.node_features.max(), g.edge_attrs.max())
        _, state = apply_decision(state, slot, policy.decide(slot, state).decision, table, 30)
    assert worst <= 2.5
