"""Actor networks: the two-layer graph convolution edge scorer and the flat MLP."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..graph import N_EDGE_FEATURES, N_NODE_FEATURES, MecGraph, merge_graphs
from .tensor import (Tensor, add, concat, matmul, relu, reshape, sigmoid, sparse_matmul,
                     take_rows)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                gain: float = 1.0) -> tuple[Tensor, Tensor]:
    bound = gain * np.sqrt(1.0 / fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad=True)
    return w, b


# uniform bound multiplier for layers followed by a ReLU
RELU_GAIN = np.sqrt(6.0)


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def graph_conv(h: Tensor, graph: MecGraph, w: Tensor, b: Tensor | None = None) -> Tensor:
    """One message-passing layer with mean aggregation over both edge directions.

    The message from ``u`` to ``v`` is ``[h_u, edge_attr_uv]``; the new
    feature of ``v`` is ``relu([h_v, mean(messages)] @ w + b)``.
    """
    if h.shape[0] != graph.n_nodes:
        raise ValueError(f"{h.shape[0]} feature rows for {graph.n_nodes} nodes")
    width = h.shape[1] + h.shape[1] + N_EDGE_FEATURES
    if w.shape[0] != width:
        raise ValueError(f"weight expects {w.shape[0]} inputs, layer provides {width}")
    to_dst, to_src = graph.aggregators
    attrs = Tensor(graph.edge_attrs)
    from_src = concat([take_rows(h, graph.src), attrs])
    from_dst = concat([take_rows(h, graph.dst), attrs])
    agg = add(sparse_matmul(to_dst, from_src), sparse_matmul(to_src, from_dst))
    out = matmul(concat([h, agg]), w)
    if b is not None:
        out = add(out, b)
    return relu(out)


def edge_embed(h: Tensor, graph: MecGraph) -> Tensor:
    return concat([take_rows(h, graph.src), take_rows(h, graph.dst)])


def edge_score(h_e: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Relaxed per-edge action in (0, 1)."""
    hidden = relu(add(matmul(h_e, w1), b1))
    return reshape(sigmoid(add(matmul(hidden, w2), b2)), (-1,))


class GraphActor:
    """GCN(128) -> GCN(64) -> edge concat(128) + edge attrs -> MLP(64) -> sigmoid.

    The edge's own attributes are appended to the endpoint embeddings before
    scoring: mean aggregation blends a device's links to every server, so the
    node embeddings alone cannot say which server is the fast one.
    """

    kind = "graph"

    def __init__(self, seed: int = 0, gcn_widths: Sequence[int] = (128, 64), mlp_width: int = 64,
                 prior: float = 0.5):
        """``prior`` is the expected share of positive edges; it sets the output bias."""
        rng = np.random.default_rng(seed)
        g1, g2 = gcn_widths
        self.params: dict[str, Tensor] = {}
        self.params["gcn1.w"], self.params["gcn1.b"] = init_linear(
            rng, 2 * N_NODE_FEATURES + N_EDGE_FEATURES, g1, RELU_GAIN)
        self.params["gcn2.w"], self.params["gcn2.b"] = init_linear(
            rng, 2 * g1 + N_EDGE_FEATURES, g2, RELU_GAIN)
        self.params["mlp1.w"], self.params["mlp1.b"] = init_linear(
            rng, 2 * g2 + N_EDGE_FEATURES, mlp_width, RELU_GAIN)
        self.params["mlp2.w"], self.params["mlp2.b"] = init_linear(rng, mlp_width, 1)
        self.params["mlp2.b"].data[:] = _logit(prior)

    def forward(self, graph: MecGraph) -> Tensor:
        p = self.params
        h = Tensor(graph.node_features)
        h = graph_conv(h, graph, p["gcn1.w"], p["gcn1.b"])
        h = graph_conv(h, graph, p["gcn2.w"], p["gcn2.b"])
        h_e = concat([edge_embed(h, graph), Tensor(graph.edge_attrs)])
        return edge_score(h_e, p["mlp1.w"], p["mlp1.b"], p["mlp2.w"], p["mlp2.b"])

    def batch_forward(self, graphs: Sequence[MecGraph]) -> Tensor:
        union, _ = merge_graphs(graphs)
        return self.forward(union)


class TopologyMismatch(ValueError):
    pass


class FlatActor:
    """Fully connected actor over the estimated-rate vector of a fixed-size network.

    Output unit ``(m * N + n) * L + l`` scores device ``m`` on server ``n``
    with the ``l``-th exit the actor was built for.
    """

    kind = "flat"

    def __init__(self, n_devices: int, n_servers: int, exit_positions: Sequence[int],
                 seed: int = 0, hidden: Sequence[int] = (128, 64), prior: float = 0.5):
        self.n_devices, self.n_servers = n_devices, n_servers
        self.exit_positions = tuple(exit_positions)
        self._exit_index = {pos: j for j, pos in enumerate(self.exit_positions)}
        rng = np.random.default_rng(seed)
        n_in = n_devices * n_servers
        n_out = n_in * len(self.exit_positions)
        h1, h2 = hidden
        self.params: dict[str, Tensor] = {}
        self.params["fc1.w"], self.params["fc1.b"] = init_linear(rng, n_in, h1, RELU_GAIN)
        self.params["fc2.w"], self.params["fc2.b"] = init_linear(rng, h1, h2, RELU_GAIN)
        self.params["out.w"], self.params["out.b"] = init_linear(rng, h2, n_out)
        self.params["out.b"].data[:] = _logit(prior)

    def _check(self, graph: MecGraph) -> None:
        if graph.n_devices != self.n_devices or graph.n_servers != self.n_servers:
            raise TopologyMismatch(
                f"flat actor built for {self.n_devices} devices x {self.n_servers} servers, "
                f"got {graph.n_devices} x {graph.n_servers}")
        if tuple(graph.exit_positions) != self.exit_positions:
            raise TopologyMismatch("graph exit set differs from the actor's")

    def features(self, graph: MecGraph) -> np.ndarray:
        self._check(graph)
        x = np.zeros(self.n_devices * self.n_servers)
        x[graph.edge_device * self.n_servers + graph.edge_server] = graph.edge_attrs[:, 0]
        return x

    def _edge_units(self, graph: MecGraph) -> np.ndarray:
        L = len(self.exit_positions)
        local = np.array([self._exit_index[int(p)] for p in graph.edge_exit], dtype=np.int64)
        return (graph.edge_device * self.n_servers + graph.edge_server) * L + local

    def _scores(self, x: np.ndarray) -> Tensor:
        p = self.params
        h = relu(add(matmul(Tensor(x), p["fc1.w"]), p["fc1.b"]))
        h = relu(add(matmul(h, p["fc2.w"]), p["fc2.b"]))
        return sigmoid(add(matmul(h, p["out.w"]), p["out.b"]))

    def forward(self, graph: MecGraph) -> Tensor:
        out = self._scores(self.features(graph)[None, :])
        return take_rows(reshape(out, (-1,)), self._edge_units(graph))

    def batch_forward(self, graphs: Sequence[MecGraph]) -> Tensor:
        x = np.stack([self.features(g) for g in graphs])
        out = reshape(self._scores(x), (-1,))
        width = out.shape[0] // len(graphs)
        index = np.concatenate([i * width + self._edge_units(g) for i, g in enumerate(graphs)])
        return take_rows(out, index)
