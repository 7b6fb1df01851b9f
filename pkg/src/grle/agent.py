"""Candidate generation, critic selection, experience replay and the learning policy."""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import MecGraph, build_graph
from .model import ExitTable, OffloadingDecision, SimState, Slot, decision_reward
from .nn import Adam, bce_loss, no_grad


@dataclass
class CandidateSet:
    decisions: list[OffloadingDecision]
    # None for the argmax candidate, else the (device, edge) pairs swapped in
    provenance: list[tuple[tuple[int, int], ...] | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.decisions)


def _decision_from_edges(graph: MecGraph, edges: Sequence[int]) -> OffloadingDecision:
    return OffloadingDecision(tuple(int(graph.edge_server[e]) for e in edges),
                              tuple(int(graph.edge_exit[e]) for e in edges))


def quantize(scores: np.ndarray, graph: MecGraph, s_max: int) -> CandidateSet:
    """Order-preserving quantisation of relaxed edge scores into one-hot decisions.

    Candidate 0 gives every device its best-scoring edge. Every other
    (device, alternative edge) pair is ranked by how far its score falls
    short of that device's best, and candidate ``i`` swaps in the ``i``-th
    closest alternative. Ties go to the lower device, then the lower edge.

    Further candidates switch several devices at once, accumulated in rank
    order (two devices, then three, ...): first each device's closest
    alternative, then each device's best edge on a different server. A single
    swap cannot leave a decision that is wrong on several devices, and when
    many devices crowd one server it moves only one of them per slot. If the
    single swaps would fill ``s_max`` on their own, the lowest-ranked ones give
    way to these. Duplicate decisions are dropped.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (graph.n_edges,):
        raise ValueError(f"expected {graph.n_edges} scores, got {scores.shape}")
    best: list[int] = []
    swaps: list[tuple[float, int, int]] = []
    for m, idx in enumerate(graph.device_edges):
        if len(idx) == 0:
            raise ValueError(f"device {m} has no edges")
        s = scores[idx]
        order = np.argsort(-s, kind="stable")
        top = s[order[0]]
        best.append(int(idx[order[0]]))
        swaps.extend((float(top - s[j]), m, int(idx[j])) for j in order[1:])
    swaps.sort()

    cands = CandidateSet([_decision_from_edges(graph, best)], [None])
    taken = {tuple(best)}

    def add(changes: tuple[tuple[int, int], ...]) -> None:
        edges = list(best)
        for m, e in changes:
            edges[m] = e
        if tuple(edges) in taken:
            return
        taken.add(tuple(edges))
        cands.decisions.append(_decision_from_edges(graph, edges))
        cands.provenance.append(changes)

    # multi-device families, each in rank order of the devices' margins:
    # the closest alternative of each device, and its best edge on another server
    runner_up: list[tuple[int, int]] = []
    moved: list[tuple[int, int]] = []
    seen: set[int] = set()
    left: set[int] = set()
    for _, m, e in swaps:
        if m not in seen:
            seen.add(m)
            runner_up.append((m, e))
        if m not in left and graph.edge_server[e] != graph.edge_server[best[m]]:
            left.add(m)
            moved.append((m, e))
    families = [runner_up, moved]
    reserve = sum(max(0, len(f) - 1) for f in families)
    n_singles = len(swaps) if 1 + len(swaps) + reserve <= s_max else max(0, s_max - 1 - reserve)
    for _, m, e in swaps[:n_singles]:
        if len(cands.decisions) >= s_max:
            break
        add(((m, e),))
    for family in families:
        for i in range(2, len(family) + 1):
            if len(cands.decisions) >= s_max:
                break
            add(tuple(family[:i]))
    # duplicates may have left room for held-back singles
    for _, m, e in swaps[n_singles:]:
        if len(cands.decisions) >= s_max:
            break
        add(((m, e),))
    return cands


def enumerate_candidates(graph: MecGraph) -> CandidateSet:
    """Every joint decision the graph allows, device 0 varying slowest."""
    combos = itertools.product(*[idx.tolist() for idx in graph.device_edges])
    decisions = [_decision_from_edges(graph, c) for c in combos]
    return CandidateSet(decisions, [None] * len(decisions))


def critic_select(state: SimState, slot: Slot, candidates: CandidateSet, table: ExitTable,
                  slot_len_ms: float, psi_mode: str = "normalized"
                  ) -> tuple[OffloadingDecision, float, int]:
    """Score each candidate on a hypothetical copy of the queues; keep the best.

    Returns ``(decision, reward, index)``; ties go to the lowest index.
    """
    if not candidates.decisions:
        raise ValueError("no candidates to select from")
    best_i, best_r = 0, -np.inf
    for i, d in enumerate(candidates.decisions):
        r = decision_reward(state, slot, d, table, slot_len_ms, estimated=True, psi_mode=psi_mode)
        if r > best_r:
            best_i, best_r = i, r
    return candidates.decisions[best_i], best_r, best_i


def decision_targets(graph: MecGraph, decision: OffloadingDecision) -> np.ndarray:
    """Per-edge 0/1 labels marking the chosen (server, exit) of each device."""
    servers = np.asarray(decision.servers)[graph.edge_device]
    exits = np.asarray(decision.exits)[graph.edge_device]
    return ((graph.edge_server == servers) & (graph.edge_exit == exits)).astype(float)


@dataclass
class ReplayRecord:
    k: int
    graph: MecGraph
    decision: OffloadingDecision
    targets: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO memory of (slot, graph, chosen action)."""

    def __init__(self, capacity: int = 128):
        self.capacity = capacity
        self.records: deque[ReplayRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.records)

    def push(self, record: ReplayRecord) -> None:
        self.records.append(record)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[ReplayRecord]:
        idx = rng.choice(len(self.records), size=batch_size, replace=False)
        return [self.records[i] for i in idx]


def train_step(actor, optimizer: Adam, batch: Sequence[ReplayRecord]) -> float:
    scores = actor.batch_forward([r.graph for r in batch])
    loss = bce_loss(scores, np.concatenate([r.targets for r in batch]))
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.data)


def store_and_maybe_train(buffer: ReplayBuffer, record: ReplayRecord, k: int, actor,
                          optimizer: Adam, rng: np.random.Generator, interval: int = 10,
                          batch_size: int = 64) -> float | None:
    """Remember the record; every ``interval`` slots take one Adam step on a random batch.

    Training waits until the buffer holds at least ``batch_size`` records.
    """
    buffer.push(record)
    if k % interval != 0 or len(buffer) < batch_size:
        return None
    return train_step(actor, optimizer, buffer.sample(rng, batch_size))


@dataclass
class PolicyStep:
    decision: OffloadingDecision
    est_reward: float | None = None
    graph: MecGraph | None = None
    n_candidates: int = 1


class LearningPolicy:
    """Actor -> quantiser -> critic -> replay loop shared by GRLE, GRL, DROO and DROOE.

    The variants differ only in the actor and in the exits they may choose.
    """

    learns = True

    def __init__(self, name: str, actor, table: ExitTable, slot_len_ms: float,
                 exit_positions: Sequence[int], *, seed: int = 0, s_max: int = 64,
                 lr: float = 1e-3, buffer_size: int = 128, batch_size: int = 64,
                 train_interval: int = 10, psi_mode: str = "normalized"):
        self.name = name
        self.actor = actor
        self.table = table
        self.slot_len_ms = slot_len_ms
        self.exit_positions = tuple(exit_positions)
        self.s_max = s_max
        self.psi_mode = psi_mode
        self.buffer = ReplayBuffer(buffer_size)
        self.batch_size = batch_size
        self.train_interval = train_interval
        self.optimizer = Adam(actor.params.values(), lr=lr)
        self.rng = np.random.default_rng([seed, 7919])

    def scores(self, graph: MecGraph) -> np.ndarray:
        with no_grad():
            return self.actor.forward(graph).data

    def decide(self, slot: Slot, state: SimState) -> PolicyStep:
        graph = build_graph(slot, state, self.table, self.slot_len_ms, self.exit_positions)
        if graph.n_devices == 0:
            return PolicyStep(OffloadingDecision((), ()), 0.0, graph, 0)
        cap = min(graph.n_devices * state.n_servers * len(self.exit_positions), self.s_max)
        cands = quantize(self.scores(graph), graph, cap)
        decision, reward, _ = critic_select(state, slot, cands, self.table, self.slot_len_ms,
                                            self.psi_mode)
        return PolicyStep(decision, reward, graph, len(cands))

    def learn(self, k: int, step: PolicyStep) -> float | None:
        if step.graph is None or step.graph.n_devices == 0:
            return None
        record = ReplayRecord(k, step.graph, step.decision, decision_targets(step.graph, step.decision))
        return store_and_maybe_train(self.buffer, record, k, self.actor, self.optimizer, self.rng,
                                     self.train_interval, self.batch_size)
