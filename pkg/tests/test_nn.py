import numpy as np
import pytest

from grle.graph import build_graph
from grle.model import SimState, parse_exit_table
from grle.nn import (Adam, FlatActor, GraphActor, Tensor, bce_loss, edge_embed, edge_score,
                     grad_check, graph_conv, load_params, no_grad, read_checkpoint, save_params)
from grle.nn.tensor import concat, mul, sum_, take_rows

from conftest import make_slot, make_task, random_slot, random_state

GOLDEN = [0.394110126805009, 0.3904160314631179, 0.3873974319916771, 0.38162505657237583,
          0.3668509427344144, 0.3666331627993985, 0.3626481598902866, 0.3582641142893501,
          0.34836841184378464, 0.29868138606351474, 0.3792724498534308, 0.3764152181871206,
          0.37411324126770923, 0.3693825219148778, 0.35495871037751436, 0.32952143420513297,
          0.3251517061037529, 0.3209847427314448, 0.3131641840769014, 0.2683416635063147]


def golden_graph(table):
    slot = make_slot([make_task(0, size=60, rates=(30.0, 90.0)),
                      make_task(1, size=95, rates=(70.0, 25.0))], capacity=[1.0, 0.5])
    state = SimState.initial(2, [0, 1])
    state.servers[0].free_at_ms = 12.0
    return build_graph(slot, state, table, 30)


def naive_graph_conv(h, graph, w, b):
    """Per-node loop: mean of [h_u, attr] over every edge touching v, in either direction."""
    out = np.zeros((graph.n_nodes, w.shape[1]))
    width = h.shape[1] + graph.edge_attrs.shape[1]
    for v in range(graph.n_nodes):
        msgs = []
        for e in range(graph.n_edges):
            if graph.dst[e] == v:
                msgs.append(np.concatenate([h[graph.src[e]], graph.edge_attrs[e]]))
            if graph.src[e] == v:
                msgs.append(np.concatenate([h[graph.dst[e]], graph.edge_attrs[e]]))
        agg = np.mean(msgs, axis=0) if msgs else np.zeros(width)
        out[v] = np.maximum(0.0, np.concatenate([h[v], agg]) @ w + b)
    return out


def test_graph_conv_matches_naive_loop(table, rng):
    for M in (1, 2, 4):
        slot = random_slot(rng, M)
        if M == 4:   # one device loses a server, so degrees differ
            t = slot.tasks[0]
            slot = make_slot([make_task(0, size=t.size_kbytes, rates=t.true_rate_mbps,
                                        links=(False, True))] + list(slot.tasks[1:]))
        g = build_graph(slot, random_state(rng, M), table, 30)
        h = rng.normal(size=(g.n_nodes, 6))
        w = rng.normal(size=(15, 7))
        b = rng.normal(size=7)
        fast = graph_conv(Tensor(h), g, Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(fast, naive_graph_conv(h, g, w, b), rtol=1e-12, atol=1e-12)


def test_graph_conv_zero_weights_and_shape_errors(table):
    g = golden_graph(table)
    h = Tensor(g.node_features)
    out = graph_conv(h, g, Tensor(np.zeros((15, 4))), Tensor(np.zeros(4)))
    assert out.shape == (g.n_nodes, 4) and not out.data.any()
    with pytest.raises(ValueError):
        graph_conv(h, g, Tensor(np.zeros((14, 4))))
    with pytest.raises(ValueError):
        graph_conv(Tensor(np.zeros((3, 6))), g, Tensor(np.zeros((15, 4))))


def test_graph_conv_single_edge_identity(table):
    slot = make_slot([make_task(0, rates=(80.0,))])
    one = parse_exit_table("exit_id,accuracy,X\n17,0.935,1.26\n")
    g = build_graph(slot, SimState.initial(1, [0]), one, 30)
    assert g.n_edges == 1
    h = g.node_features
    w = np.eye(15)
    out = graph_conv(Tensor(h), g, Tensor(w)).data
    expect = np.maximum(0.0, np.concatenate([h, np.concatenate([h[::-1], np.repeat(g.edge_attrs, 2, 0)], 1)], 1))
    np.testing.assert_allclose(out, expect)


def test_edge_embed_semantics(table):
    g = golden_graph(table)
    h = np.arange(g.n_nodes * 3, dtype=float).reshape(-1, 3)
    emb = edge_embed(Tensor(h), g).data
    assert emb.shape == (20, 6)
    np.testing.assert_array_equal(emb[:, :3], h[g.src])
    np.testing.assert_array_equal(emb[:, 3:], h[g.dst])
    h[g.n_devices:] = 0.0
    assert not edge_embed(Tensor(h), g).data[:, 3:].any()


def test_edge_score_range_and_zero_params(rng):
    h_e = Tensor(rng.normal(size=(9, 8)) * 3)
    z = [Tensor(np.zeros(s)) for s in [(8, 4), (4,), (4, 1), (1,)]]
    assert np.all(edge_score(h_e, *z).data == 0.5)
    p = [Tensor(rng.normal(size=s)) for s in [(8, 4), (4,), (4, 1), (1,)]]
    s = edge_score(h_e, *p).data
    assert np.all((s > 0) & (s < 1))


def test_golden_forward(table):
    with no_grad():
        s = GraphActor(seed=0).forward(golden_graph(table)).data
    np.testing.assert_allclose(s, GOLDEN, rtol=0, atol=1e-12)


def test_actor_parameter_shapes():
    p = GraphActor(seed=0).params
    assert p["gcn1.w"].shape == (15, 128)
    assert p["gcn2.w"].shape == (259, 64)
    assert p["mlp1.w"].shape == (131, 64)
    assert p["mlp2.w"].shape == (64, 1)


def test_actor_permutation_consistency(table, rng):
    slot = random_slot(rng, 3)
    state = random_state(rng, 3)
    perm = [2, 0, 1]
    from grle.model import Slot
    pslot = Slot(slot.k, tuple(slot.tasks[i] for i in perm), slot.capacity)
    pstate = SimState([state.devices[i] for i in perm], state.servers)
    actor = GraphActor(seed=3)
    with no_grad():
        a = actor.forward(build_graph(slot, state, table, 30)).data.reshape(3, -1)
        b = actor.forward(build_graph(pslot, pstate, table, 30)).data.reshape(3, -1)
    np.testing.assert_allclose(b, a[perm], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("scores,targets,expected", [
    ([0.5, 0.5, 0.5], [1, 0, 1], np.log(2.0)),
    ([0.8], [1], -np.log(0.8)),
    ([1e-13, 1 - 1e-13], [0, 1], 0.0),
])
def test_bce_values(scores, targets, expected):
    loss = bce_loss(Tensor(np.array(scores)), np.array(targets, dtype=float))
    assert float(loss.data) == pytest.approx(expected, abs=1e-12)


def test_bce_clamps_and_rejects_empty():
    loss = bce_loss(Tensor(np.array([0.0, 1.0])), np.array([1.0, 0.0]))
    assert float(loss.data) == pytest.approx(-np.log(1e-12))
    with pytest.raises(ValueError):
        bce_loss(Tensor(np.zeros(0)), np.zeros(0))


def test_adam_first_step_and_zero_grad():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=1e-3)
    p.grad = np.ones(2)
    opt.step()
    np.testing.assert_allclose(p.data, [1.0 - 1e-3, -2.0 - 1e-3], rtol=0, atol=1e-10)
    q = Tensor(np.array([3.0]), requires_grad=True)
    opt2 = Adam([q])
    q.grad = np.zeros(1)
    opt2.step()
    assert q.data[0] == 3.0
    q.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError):
        opt2.step()


def test_adam_moves_against_gradient():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    seen = [0.0]
    for _ in range(2):
        p.grad = np.array([2.0])
        opt.step()
        seen.append(p.data[0])
    assert seen[0] > seen[1] > seen[2]


def test_grad_check_quadratic(rng):
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    c = rng.normal(size=(3, 2))
    assert grad_check(lambda: sum_(mul(mul(x, x), c)), [x]) < 1e-7


def test_grad_check_ops(rng):
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    idx = np.array([0, 2, 2, 3])

    def f():
        rows = take_rows(a, idx)
        return sum_(mul(concat([rows @ b, rows]), 0.7))

    assert grad_check(f, [a, b]) < 1e-7


def test_full_actor_gradient(table, rng):
    g = golden_graph(table)
    actor = GraphActor(seed=1)
    targets = np.zeros(g.n_edges)
    targets[[3, 12]] = 1.0
    err = grad_check(lambda: bce_loss(actor.forward(g), targets), list(actor.params.values()),
                     samples=12, rng=rng)
    assert err < 1e-4


def test_flat_actor_gradient(table, rng):
    g = golden_graph(table)
    actor = FlatActor(2, 2, range(5), seed=1, hidden=(16, 8))
    targets = np.zeros(g.n_edges)
    targets[[0, 19]] = 1.0
    err = grad_check(lambda: bce_loss(actor.forward(g), targets), list(actor.params.values()),
                     samples=10, rng=rng)
    assert err < 1e-4


def test_loss_decreases_on_fixed_batch(table, rng):
    graphs = [build_graph(random_slot(rng, 3), random_state(rng, 3), table, 30) for _ in range(4)]
    targets = []
    for g in graphs:
        t = np.zeros(g.n_edges)
        for idx in g.device_edges:
            t[rng.choice(idx)] = 1.0
        targets.append(t)
    y = np.concatenate(targets)
    actor = GraphActor(seed=0)
    opt = Adam(actor.params.values(), lr=1e-3)
    losses = []
    for _ in range(50):
        loss = bce_loss(actor.batch_forward(graphs), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
        assert np.isfinite(losses[-1])
    assert losses[-1] < losses[0]
    for p in actor.params.values():
        assert np.all(np.isfinite(p.data))


def test_batch_forward_equals_per_graph(table, rng):
    graphs = [build_graph(random_slot(rng, m), random_state(rng, m), table, 30) for m in (1, 3, 2)]
    actor = GraphActor(seed=2)
    with no_grad():
        batched = actor.batch_forward(graphs).data
        single = np.concatenate([actor.forward(g).data for g in graphs])
    np.testing.assert_allclose(batched, single, rtol=1e-12, atol=1e-14)


def test_checkpoint_round_trip(tmp_path):
    a = GraphActor(seed=5)
    path = tmp_path / "ck.npz"
    save_params(path, a.params, {"policy": "grle"})
    b = GraphActor(seed=6)
    meta = load_params(path, b.params)
    assert meta == {"policy": "grle"}
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    arrays, _ = read_checkpoint(path)
    assert set(arrays) == set(a.params)
    flat = FlatActor(2, 2, range(5), seed=0)
    with pytest.raises(KeyError):
        load_params(path, flat.params)
