"""Network model: tasks, early-exit profiles, queues and the slot reward.

Units: sizes in KBytes (1 KByte = 1000 bytes), rates in Mbps (1000 bits/ms),
all times in milliseconds.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

PSI_MODES = ("normalized", "literal")


class ConstraintViolation(ValueError):
    """An offloading decision breaks the one-server / one-exit constraints."""


@dataclass(frozen=True)
class Task:
    device_id: int
    slot: int
    size_kbytes: float
    deadline_ms: float
    true_rate_mbps: tuple[float, ...]
    est_rate_mbps: tuple[float, ...]
    # hidden from policies: realised multiplier on the profiled inference time
    jitter: float = 1.0
    # servers reachable from this device in this slot; empty means all
    links: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.size_kbytes <= 0:
            raise ValueError(f"task size must be positive, got {self.size_kbytes}")
        if self.deadline_ms <= 0:
            raise ValueError(f"deadline must be positive, got {self.deadline_ms}")
        if len(self.true_rate_mbps) != len(self.est_rate_mbps):
            raise ValueError("true and estimated rate vectors differ in length")
        if min(self.true_rate_mbps + self.est_rate_mbps, default=1.0) <= 0:
            raise ValueError("rates must be positive")

    def connected(self, server: int) -> bool:
        return not self.links or self.links[server]


@dataclass(frozen=True)
class EarlyExitProfile:
    exit_id: int
    accuracy: float
    base_time_ms: tuple[float, ...]


@dataclass(frozen=True)
class ExitTable:
    """Ordered candidate exits with per-server-type inference times."""

    server_types: tuple[str, ...]
    exits: tuple[EarlyExitProfile, ...]

    def __post_init__(self):
        if not self.exits:
            raise ValueError("exit table is empty")
        for p in self.exits:
            if len(p.base_time_ms) != len(self.server_types):
                raise ValueError(f"exit {p.exit_id}: expected {len(self.server_types)} times")
            if not 0.0 <= p.accuracy <= 1.0:
                raise ValueError(f"exit {p.exit_id}: accuracy outside [0, 1]")
        for a, b in zip(self.exits, self.exits[1:]):
            if b.accuracy < a.accuracy:
                raise ValueError("accuracy must be non-decreasing along the exit list")
            if any(tb <= ta for ta, tb in zip(a.base_time_ms, b.base_time_ms)):
                raise ValueError("inference time must strictly increase with exit depth")

    def __len__(self) -> int:
        return len(self.exits)

    @property
    def exit_ids(self) -> tuple[int, ...]:
        return tuple(p.exit_id for p in self.exits)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([p.accuracy for p in self.exits])

    @property
    def times(self) -> np.ndarray:
        """(L, n_server_types) array of base inference times."""
        return np.array([p.base_time_ms for p in self.exits])

    def type_index(self, name: str) -> int:
        try:
            return self.server_types.index(name)
        except ValueError:
            raise KeyError(f"unknown server type {name!r}; known: {list(self.server_types)}") from None


def parse_exit_table(text: str) -> ExitTable:
    """Parse ``exit_id,accuracy,<type>,<type>...`` CSV text."""
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and not r[0].lstrip().startswith("#")]
    if len(rows) < 2:
        raise ValueError("exit table needs a header and at least one row")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["exit_id", "accuracy"] or len(header) < 3:
        raise ValueError(f"bad exit table header: {header}")
    exits = []
    for r in rows[1:]:
        if len(r) != len(header):
            raise ValueError(f"row has {len(r)} columns, header has {len(header)}: {r}")
        exits.append(EarlyExitProfile(int(r[0]), float(r[1]), tuple(float(x) for x in r[2:])))
    return ExitTable(tuple(header[2:]), tuple(exits))


def load_exit_table(path: str | Path | None = None) -> ExitTable:
    """Load an exit table; without a path, the bundled VGG-16/CIFAR-10 profile."""
    if path is None or str(path) == "":
        text = resources.files("grle.data").joinpath("vgg16_cifar10.csv").read_text()
    else:
        text = Path(path).read_text()
    return parse_exit_table(text)


@dataclass
class DeviceState:
    device_id: int
    last_arrival_ms: float = 0.0


@dataclass
class ServerState:
    server_id: int
    server_type: int
    free_at_ms: float = 0.0
    capacity_fraction: float = 1.0


@dataclass(frozen=True)
class Slot:
    """Everything generated at the start of slot ``k`` (1-based)."""

    k: int
    tasks: tuple[Task, ...]
    capacity: tuple[float, ...]

    @property
    def n_devices(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class OffloadingDecision:
    """Per-device (server, exit position) assignment.

    ``exits`` holds positions into the :class:`ExitTable`, not exit ids.
    """

    servers: tuple[int, ...]
    exits: tuple[int, ...]

    def __post_init__(self):
        if len(self.servers) != len(self.exits):
            raise ConstraintViolation("servers and exits differ in length")

    def __len__(self) -> int:
        return len(self.servers)

    def pairs(self):
        return zip(self.servers, self.exits)

    def validate(self, slot: Slot, n_servers: int, n_exits: int) -> None:
        if len(self) != slot.n_devices:
            raise ConstraintViolation(
                f"decision covers {len(self)} devices, slot has {slot.n_devices}")
        for m, (n, l) in enumerate(self.pairs()):
            if not 0 <= n < n_servers:
                raise ConstraintViolation(f"device {m}: server {n} out of range")
            if not 0 <= l < n_exits:
                raise ConstraintViolation(f"device {m}: exit position {l} out of range")
            if not slot.tasks[m].connected(n):
                raise ConstraintViolation(f"device {m} is not connected to server {n}")


@dataclass(frozen=True)
class SlotOutcome:
    device_id: int
    server_id: int
    exit_id: int
    t_com: float
    t_wait: float
    t_cmp: float
    t_total: float
    deadline_ms: float
    accuracy: float
    success: bool
    reward: float


@dataclass
class SimState:
    """Queue state carried between slots."""

    devices: list[DeviceState]
    servers: list[ServerState]

    @classmethod
    def initial(cls, n_devices: int, server_types: Sequence[int]) -> "SimState":
        return cls([DeviceState(m) for m in range(n_devices)],
                   [ServerState(n, t) for n, t in enumerate(server_types)])

    def copy(self) -> "SimState":
        return SimState([DeviceState(d.device_id, d.last_arrival_ms) for d in self.devices],
                        [ServerState(s.server_id, s.server_type, s.free_at_ms, s.capacity_fraction)
                         for s in self.servers])

    @property
    def n_servers(self) -> int:
        return len(self.servers)


def transmission_time(task: Task, server: int, estimated: bool = False) -> float:
    rate = task.est_rate_mbps[server] if estimated else task.true_rate_mbps[server]
    return task.size_kbytes * 8000.0 / (rate * 1000.0)


def arrival_time(device: DeviceState, task: Task, server: int, slot_len_ms: float,
                 estimated: bool = False) -> float:
    """Absolute arrival time at ``server``; advances ``device.last_arrival_ms``.

    A device sends its tasks one after another, so transmission starts at the
    later of the slot start and the arrival of its previous task.
    """
    t_com = transmission_time(task, server, estimated)
    if task.slot == 1:
        arrival = t_com
    else:
        arrival = max(device.last_arrival_ms, (task.slot - 1) * slot_len_ms) + t_com
    device.last_arrival_ms = arrival
    return arrival


def waiting_time(server: ServerState, arrival_ms: float) -> float:
    """FCFS wait: time until the server has finished all earlier-accepted work."""
    return max(0.0, server.free_at_ms - arrival_ms)


def computation_time(profile: EarlyExitProfile, server: ServerState, jitter: float = 1.0) -> float:
    if server.capacity_fraction <= 0:
        raise ValueError("capacity fraction must be positive")
    return profile.base_time_ms[server.server_type] * jitter / server.capacity_fraction


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def psi(t_total, deadline, mode: str = "normalized"):
    """Latency discount in (0, 1], decreasing in completion time.

    ``literal`` is ``1 - sigmoid(5t/deadline)``, which tops out at 0.5;
    ``normalized`` doubles it so that an instant completion scores 1.
    Works on floats and numpy arrays alike.
    """
    base = 1.0 - _sigmoid(5.0 * t_total / deadline)
    if mode == "normalized":
        return 2.0 * base
    if mode == "literal":
        return base
    raise ValueError(f"unknown psi mode {mode!r}; expected one of {PSI_MODES}")


def slot_reward(outcomes: Sequence[SlotOutcome]) -> float:
    total = 0.0
    for o in outcomes:
        total += o.reward
    return total


def apply_decision(state: SimState, slot: Slot, decision: OffloadingDecision, table: ExitTable,
                   slot_len_ms: float, *, estimated: bool = False,
                   psi_mode: str = "normalized") -> tuple[list[SlotOutcome], SimState]:
    """Run one slot of offloading against a copy of ``state``.

    With ``estimated=True`` the transition uses what a policy can observe
    (estimated rates, no inference-time jitter), which is how candidates are
    scored; the committed transition uses the true values.

    Returns outcomes in device order and the advanced state.
    """
    decision.validate(slot, state.n_servers, len(table))
    new = state.copy()
    arrivals = []
    for m, task in enumerate(slot.tasks):
        n = decision.servers[m]
        arrivals.append((arrival_time(new.devices[m], task, n, slot_len_ms, estimated), m))
    for n, server in enumerate(new.servers):
        server.capacity_fraction = slot.capacity[n]

    results: list[SlotOutcome | None] = [None] * slot.n_devices
    # Enqueue in arrival order; equal arrivals go by device index.
    for arrival, m in sorted(arrivals):
        task = slot.tasks[m]
        n, l = decision.servers[m], decision.exits[m]
        server = new.servers[n]
        profile = table.exits[l]
        t_com = transmission_time(task, n, estimated)
        t_wait = waiting_time(server, arrival)
        t_cmp = computation_time(profile, server, 1.0 if estimated else task.jitter)
        server.free_at_ms = arrival + t_wait + t_cmp
        t_total = t_com + t_wait + t_cmp
        results[m] = SlotOutcome(
            device_id=m, server_id=n, exit_id=profile.exit_id,
            t_com=t_com, t_wait=t_wait, t_cmp=t_cmp, t_total=t_total,
            deadline_ms=task.deadline_ms, accuracy=profile.accuracy,
            success=t_total <= task.deadline_ms,
            reward=profile.accuracy * float(psi(t_total, task.deadline_ms, psi_mode)),
        )
    return results, new


def decision_reward(state: SimState, slot: Slot, decision: OffloadingDecision, table: ExitTable,
                    slot_len_ms: float, *, estimated: bool = True,
                    psi_mode: str = "normalized") -> float:
    """Slot reward of a hypothetical decision; ``state`` is left untouched."""
    outcomes, _ = apply_decision(state, slot, decision, table, slot_len_ms,
                                 estimated=estimated, psi_mode=psi_mode)
    return slot_reward(outcomes)


def joint_rewards(state: SimState, slot: Slot, servers: np.ndarray, exits: np.ndarray,
                  table: ExitTable, slot_len_ms: float, *, estimated: bool = True,
                  psi_mode: str = "normalized") -> np.ndarray:
    """Vectorised slot reward for many joint decisions at once.

    ``servers`` and ``exits`` are (S, M) integer arrays, one row per decision.
    Row results are bit-identical to :func:`decision_reward`.
    """
    servers = np.asarray(servers, dtype=np.int64)
    exits = np.asarray(exits, dtype=np.int64)
    n_rows, n_dev = servers.shape
    if n_dev == 0:
        return np.zeros(n_rows)
    tasks = slot.tasks
    size = np.array([t.size_kbytes for t in tasks])
    deadline = np.array([t.deadline_ms for t in tasks])
    rate = np.array([t.est_rate_mbps if estimated else t.true_rate_mbps for t in tasks])
    jitter = np.ones(n_dev) if estimated else np.array([t.jitter for t in tasks])
    last = np.array([d.last_arrival_ms for d in state.devices])
    free0 = np.array([s.free_at_ms for s in state.servers])
    stype = np.array([s.server_type for s in state.servers])
    cap = np.array(slot.capacity, dtype=float)
    acc = table.accuracies
    times = table.times

    dev = np.arange(n_dev)
    t_com = size[None, :] * 8000.0 / (rate[dev[None, :], servers] * 1000.0)
    if slot.k == 1:
        arrival = t_com
    else:
        start = np.maximum(last, (slot.k - 1) * slot_len_ms)
        arrival = start[None, :] + t_com
    t_cmp = times[exits, stype[servers]] * jitter[None, :] / cap[servers]

    order = np.argsort(arrival, axis=1, kind="stable")
    rows = np.arange(n_rows)
    free = np.tile(free0, (n_rows, 1))
    t_total = np.empty_like(arrival)
    for j in range(n_dev):
        m = order[:, j]
        srv = servers[rows, m]
        a = arrival[rows, m]
        wait = np.maximum(0.0, free[rows, srv] - a)
        c = t_cmp[rows, m]
        free[rows, srv] = a + wait + c
        t_total[rows, m] = t_com[rows, m] + wait + c

    per_task = acc[exits] * psi(t_total, deadline[None, :], psi_mode)
    total = np.zeros(n_rows)
    for m in range(n_dev):
        total += per_task[:, m]
    return total
