import numpy as np
import pytest

from grle.model import SimState, Slot, Task, load_exit_table


@pytest.fixture(scope="session")
def table():
    return load_exit_table()


def make_task(m=0, k=1, size=100.0, rates=(80.0, 80.0), est=None, deadline=30.0, jitter=1.0,
              links=()):
    rates = tuple(float(r) for r in rates)
    est = rates if est is None else tuple(float(r) for r in est)
    return Task(m, k, size, deadline, rates, est, jitter, links)


def make_slot(tasks, k=1, capacity=None):
    n = len(tasks[0].true_rate_mbps) if tasks else 2
    return Slot(k, tuple(tasks), tuple(capacity or [1.0] * n))


def random_slot(rng, M, N=2, k=1, deadline=30.0):
    tasks = [make_task(m, k, rng.uniform(50, 100), rng.uniform(20, 100, N), deadline=deadline)
             for m in range(M)]
    return make_slot(tasks, k, list(rng.uniform(0.25, 1.0, N)))


def random_state(rng, M, N=2, now=0.0):
    state = SimState.initial(M, [n % 2 for n in range(N)])
    for d in state.devices:
        d.last_arrival_ms = now + rng.uniform(0, 20) * (rng.random() < 0.5)
    for s in state.servers:
        s.free_at_ms = now + rng.uniform(0, 30) * (rng.random() < 0.5)
    return state


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> str:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
