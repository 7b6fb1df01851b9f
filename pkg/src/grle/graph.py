"""Bipartite graph view of one slot: device nodes, exit nodes, device->exit edges."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .model import ExitTable, SimState, Slot, transmission_time

N_NODE_FEATURES = 6
N_EDGE_FEATURES = 3

# feature scales, chosen so in-range scenarios give O(1) inputs
SIZE_SCALE_KB = 100.0
DEADLINE_SCALE_MS = 100.0
BACKLOG_SCALE_MS = 30.0
CMP_SCALE_MS = 1.0
RATE_SCALE_MBPS = 100.0
# queue-derived features saturate here: past a few deadlines of backlog every
# choice on that queue fails, and larger values only push inputs out of range
QUEUE_FEATURE_CLIP = 2.0

DEVICE, EXIT = 0, 1


class IsolatedDeviceError(ValueError):
    pass


@dataclass(eq=False)
class MecGraph:
    """Attributed bipartite graph.

    Nodes ``0..M-1`` are devices, followed by one node per (server, exit).
    Edges run device -> exit node, ordered by device, then server, then exit;
    disconnected device/server pairs have no edges.
    """

    node_features: np.ndarray   # (V, 6)
    node_kind: np.ndarray       # (V,)
    src: np.ndarray             # (E,)
    dst: np.ndarray             # (E,)
    edge_attrs: np.ndarray      # (E, 3)
    n_devices: int
    n_servers: int
    exit_positions: tuple[int, ...]   # exit-table positions represented by the exit nodes
    edge_device: np.ndarray     # (E,)
    edge_server: np.ndarray     # (E,)
    edge_exit: np.ndarray       # (E,) exit-table position

    @property
    def n_nodes(self) -> int:
        return len(self.node_kind)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @cached_property
    def device_edges(self) -> list[np.ndarray]:
        """Edge indices of each device, in edge order."""
        bounds = np.searchsorted(self.edge_device, np.arange(self.n_devices + 1))
        return [np.arange(bounds[m], bounds[m + 1]) for m in range(self.n_devices)]

    @cached_property
    def aggregators(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Mean-aggregation operators (V x E).

        ``to_dst`` averages edge messages into the destination (exit) node,
        ``to_src`` into the source (device) node. Nodes without edges get zero rows.
        """
        V, E = self.n_nodes, self.n_edges
        deg = np.bincount(self.src, minlength=V) + np.bincount(self.dst, minlength=V)
        cols = np.arange(E)
        to_dst = sp.csr_matrix((1.0 / deg[self.dst], (self.dst, cols)), shape=(V, E))
        to_src = sp.csr_matrix((1.0 / deg[self.src], (self.src, cols)), shape=(V, E))
        return to_dst, to_src

    def to_dict(self) -> dict:
        return {
            "node_features": self.node_features.tolist(),
            "node_kind": self.node_kind.tolist(),
            "src": self.src.tolist(),
            "dst": self.dst.tolist(),
            "edge_attrs": self.edge_attrs.tolist(),
            "n_devices": self.n_devices,
            "n_servers": self.n_servers,
            "exit_positions": list(self.exit_positions),
            "edge_device": self.edge_device.tolist(),
            "edge_server": self.edge_server.tolist(),
            "edge_exit": self.edge_exit.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MecGraph":
        def arr(key, dtype, width=None):
            a = np.array(d[key], dtype=dtype)
            if width is not None:
                a = a.reshape(-1, width)
            return a

        return cls(
            node_features=arr("node_features", float, N_NODE_FEATURES),
            node_kind=arr("node_kind", np.int64),
            src=arr("src", np.int64),
            dst=arr("dst", np.int64),
            edge_attrs=arr("edge_attrs", float, N_EDGE_FEATURES),
            n_devices=int(d["n_devices"]),
            n_servers=int(d["n_servers"]),
            exit_positions=tuple(d["exit_positions"]),
            edge_device=arr("edge_device", np.int64),
            edge_server=arr("edge_server", np.int64),
            edge_exit=arr("edge_exit", np.int64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MecGraph":
        return cls.from_dict(json.loads(text))


def _queue(x: float) -> float:
    return min(x, QUEUE_FEATURE_CLIP)


def build_graph(slot: Slot, state: SimState, table: ExitTable, slot_len_ms: float,
                exit_positions: Sequence[int] | None = None) -> MecGraph:
    """Encode the slot as the actor's input graph using policy-visible values only."""
    if exit_positions is None:
        exit_positions = tuple(range(len(table)))
    exit_positions = tuple(exit_positions)
    M, N, L = slot.n_devices, state.n_servers, len(exit_positions)
    now = (slot.k - 1) * slot_len_ms

    feats = np.zeros((M + N * L, N_NODE_FEATURES))
    kind = np.full(M + N * L, EXIT, dtype=np.int64)
    kind[:M] = DEVICE
    device_backlog = [max(0.0, d.last_arrival_ms - now) for d in state.devices]
    server_backlog = [max(0.0, s.free_at_ms - now) for s in state.servers]
    for m, task in enumerate(slot.tasks):
        backlog = device_backlog[m]
        feats[m] = (1.0, 0.0, task.size_kbytes / SIZE_SCALE_KB,
                    task.deadline_ms / DEADLINE_SCALE_MS, _queue(backlog / BACKLOG_SCALE_MS), 0.0)
    for n, server in enumerate(state.servers):
        cap = slot.capacity[n]
        backlog = server_backlog[n]
        for j, pos in enumerate(exit_positions):
            p = table.exits[pos]
            feats[M + n * L + j] = (0.0, 1.0, p.accuracy,
                                    p.base_time_ms[server.server_type] / cap / CMP_SCALE_MS,
                                    _queue(backlog / BACKLOG_SCALE_MS), cap)

    src, dst, attrs, e_dev, e_srv, e_exit = [], [], [], [], [], []
    for m, task in enumerate(slot.tasks):
        reachable = [n for n in range(N) if task.connected(n)]
        if not reachable:
            raise IsolatedDeviceError(f"device {m} reaches no server in slot {slot.k}")
        for n in reachable:
            t_com = transmission_time(task, n, estimated=True)
            # earliest start of inference if no other task of this slot competes
            ready = max(device_backlog[m] + t_com, server_backlog[n])
            for j, pos in enumerate(exit_positions):
                t_cmp = table.exits[pos].base_time_ms[state.servers[n].server_type] / slot.capacity[n]
                src.append(m)
                dst.append(M + n * L + j)
                attrs.append((task.est_rate_mbps[n] / RATE_SCALE_MBPS, t_com / task.deadline_ms,
                              _queue((ready + t_cmp) / task.deadline_ms)))
                e_dev.append(m)
                e_srv.append(n)
                e_exit.append(pos)

    def ints(x):
        return np.array(x, dtype=np.int64)

    return MecGraph(
        node_features=feats, node_kind=kind, src=ints(src), dst=ints(dst),
        edge_attrs=np.array(attrs, dtype=float).reshape(-1, N_EDGE_FEATURES),
        n_devices=M, n_servers=N, exit_positions=exit_positions,
        edge_device=ints(e_dev), edge_server=ints(e_srv), edge_exit=ints(e_exit),
    )


def merge_graphs(graphs: Sequence[MecGraph]) -> tuple[MecGraph, np.ndarray]:
    """Disjoint union of several graphs, for batched training.

    Returns the union and the edge offset of each input graph (length len+1).
    The union's device bookkeeping is not meaningful beyond edge scoring.
    """
    node_off = np.cumsum([0] + [g.n_nodes for g in graphs])
    edge_off = np.cumsum([0] + [g.n_edges for g in graphs])
    dev_off = np.cumsum([0] + [g.n_devices for g in graphs])
    cat = np.concatenate
    union = MecGraph(
        node_features=cat([g.node_features for g in graphs]),
        node_kind=cat([g.node_kind for g in graphs]),
        src=cat([g.src + o for g, o in zip(graphs, node_off)]),
        dst=cat([g.dst + o for g, o in zip(graphs, node_off)]),
        edge_attrs=cat([g.edge_attrs for g in graphs]),
        n_devices=int(dev_off[-1]),
        n_servers=graphs[0].n_servers,
        exit_positions=graphs[0].exit_positions,
        edge_device=cat([g.edge_device + o for g, o in zip(graphs, dev_off)]),
        edge_server=cat([g.edge_server for g in graphs]),
        edge_exit=cat([g.edge_exit for g in graphs]),
    )
    return union, edge_off
