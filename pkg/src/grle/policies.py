"""Offloading policies: GRLE and its comparison baselines, exhaustive search, random."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .agent import LearningPolicy, PolicyStep
from .model import ExitTable, OffloadingDecision, SimState, Slot, decision_reward, joint_rewards
from .nn import FlatActor, GraphActor
from .scenarios import ScenarioConfig

POLICY_NAMES = ("grle", "grl", "droo", "drooe", "oracle", "random")
_CHUNK = 1 << 15


class OracleCapExceeded(ValueError):
    pass


class UnknownPolicy(ValueError):
    pass


def _options(slot: Slot, n_servers: int, exit_positions: Sequence[int]) -> list[list[tuple[int, int]]]:
    return [[(n, l) for n in range(n_servers) if task.connected(n) for l in exit_positions]
            for task in slot.tasks]


def exhaustive_oracle(state: SimState, slot: Slot, table: ExitTable, slot_len_ms: float, *,
                      exit_positions: Sequence[int] | None = None, cap: int = 1_000_000,
                      psi_mode: str = "normalized") -> tuple[OffloadingDecision, float]:
    """Best joint decision for this slot by brute force over every assignment.

    Conditions on the current queues and ignores later slots. Ties go to the
    first assignment in lexicographic order (device 0 varying slowest).
    """
    if exit_positions is None:
        exit_positions = range(len(table))
    opts = _options(slot, state.n_servers, list(exit_positions))
    if not opts:
        return OffloadingDecision((), ()), 0.0
    sizes = [len(o) for o in opts]
    total = int(np.prod(sizes, dtype=object))
    if total > cap:
        raise OracleCapExceeded(
            f"exhaustive search needs {total} evaluations (cap {cap}); "
            f"use fewer devices or raise --oracle-cap")
    opt_srv = [np.array([n for n, _ in o]) for o in opts]
    opt_exit = [np.array([l for _, l in o]) for o in opts]
    # mixed-radix place values, device 0 most significant
    place = np.cumprod([1] + sizes[::-1])[:-1][::-1]

    best_r, best_idx = -np.inf, 0
    for start in range(0, total, _CHUNK):
        ids = np.arange(start, min(total, start + _CHUNK))
        digits = [(ids // place[m]) % sizes[m] for m in range(len(opts))]
        servers = np.stack([opt_srv[m][d] for m, d in enumerate(digits)], axis=1)
        exits = np.stack([opt_exit[m][d] for m, d in enumerate(digits)], axis=1)
        r = joint_rewards(state, slot, servers, exits, table, slot_len_ms,
                          estimated=True, psi_mode=psi_mode)
        i = int(np.argmax(r))
        if r[i] > best_r:
            best_r, best_idx = r[i], start + i
    choice = [opts[m][(best_idx // int(place[m])) % sizes[m]] for m in range(len(opts))]
    decision = OffloadingDecision(tuple(n for n, _ in choice), tuple(l for _, l in choice))
    reward = decision_reward(state, slot, decision, table, slot_len_ms, estimated=True,
                             psi_mode=psi_mode)
    return decision, reward


class OraclePolicy:
    name = "oracle"
    learns = False

    def __init__(self, table: ExitTable, slot_len_ms: float, cap: int = 1_000_000,
                 psi_mode: str = "normalized"):
        self.table, self.slot_len_ms, self.cap, self.psi_mode = table, slot_len_ms, cap, psi_mode

    def decide(self, slot: Slot, state: SimState) -> PolicyStep:
        d, r = exhaustive_oracle(state, slot, self.table, self.slot_len_ms, cap=self.cap,
                                 psi_mode=self.psi_mode)
        return PolicyStep(d, r)

    def learn(self, k: int, step: PolicyStep) -> None:
        return None


class RandomPolicy:
    name = "random"
    learns = False

    def __init__(self, table: ExitTable, seed: int = 0):
        self.table = table
        self.rng = np.random.default_rng([seed, 4242])

    def decide(self, slot: Slot, state: SimState) -> PolicyStep:
        opts = _options(slot, state.n_servers, range(len(self.table)))
        picks = [o[int(self.rng.integers(len(o)))] for o in opts]
        return PolicyStep(OffloadingDecision(tuple(n for n, _ in picks), tuple(l for _, l in picks)))

    def learn(self, k: int, step: PolicyStep) -> None:
        return None


def make_policy(name: str, config: ScenarioConfig, table: ExitTable | None = None,
                seed: int | None = None):
    """Build a policy by name; see :data:`POLICY_NAMES`."""
    name = name.lower()
    if name not in POLICY_NAMES:
        raise UnknownPolicy(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
    table = table or config.exit_table()
    seed = config.seed if seed is None else seed
    if name == "oracle":
        return OraclePolicy(table, config.slot_len_ms, config.oracle_cap, config.psi_mode)
    if name == "random":
        return RandomPolicy(table, seed)

    all_exits = tuple(range(len(table)))
    exits = all_exits if name in ("grle", "drooe") else (all_exits[-1],)
    prior = 1.0 / (config.servers * len(exits))
    if name in ("grle", "grl"):
        actor = GraphActor(seed, config.gcn_hidden, config.mlp_hidden, prior)
    else:
        actor = FlatActor(config.devices, config.servers, exits, seed, config.gcn_hidden, prior)
    return LearningPolicy(
        name, actor, table, config.slot_len_ms, exits, seed=seed, s_max=config.s_max,
        lr=config.learning_rate, buffer_size=config.buffer_size, batch_size=config.batch_size,
        train_interval=config.train_interval, psi_mode=config.psi_mode)
