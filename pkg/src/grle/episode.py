"""Run a policy through a scenario slot by slot and record what happened."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import metrics
from .model import SimState, SlotOutcome, apply_decision, decision_reward, slot_reward
from .policies import exhaustive_oracle
from .scenarios import ScenarioConfig, generate_slot

TASK_COLUMNS = ("slot", "device", "server", "exit_id", "t_com", "t_wait", "t_cmp", "t_total",
                "deadline", "accuracy", "success", "reward")
SLOT_COLUMNS = ("slot", "reward", "est_reward", "oracle_reward", "q_hat", "q_hat_ma50", "loss",
                "candidates")
METRIC_COLUMNS = ("policy", "seed", "devices", "servers", "slots", "slot_len_ms", "capacity_mode",
                  "inference_jitter", "csi_error", "ssp", "avg_accuracy", "avg_throughput",
                  "mean_reward", "mean_q_hat", "final_loss")


@dataclass
class SlotRecord:
    k: int
    reward: float
    est_reward: float
    oracle_reward: float | None = None
    q_hat: float | None = None
    loss: float | None = None
    candidates: int = 1


@dataclass
class EpisodeLog:
    policy: str
    config: ScenarioConfig
    tasks: list[tuple[int, SlotOutcome]] = field(default_factory=list)
    slots: list[SlotRecord] = field(default_factory=list)

    @property
    def outcomes(self) -> list[SlotOutcome]:
        return [o for _, o in self.tasks]

    @property
    def q_hat(self) -> list[float]:
        return [s.q_hat for s in self.slots if s.q_hat is not None]

    @property
    def losses(self) -> list[float]:
        return [s.loss for s in self.slots if s.loss is not None]

    def report(self) -> metrics.MetricsReport:
        outs = self.outcomes
        q = self.q_hat
        return metrics.MetricsReport(
            ssp=metrics.ssp(outs),
            avg_accuracy=metrics.avg_accuracy(outs),
            avg_throughput=metrics.avg_throughput(outs, len(self.slots), self.config.slot_len_ms),
            mean_reward=metrics.sequential_mean([s.reward for s in self.slots]),
            normalized_reward=q,
            moving_average=metrics.moving_average(q, 50).tolist(),
        )

    def metrics_row(self) -> dict:
        r = self.report()
        c = self.config
        losses = self.losses
        return {
            "policy": self.policy, "seed": c.seed, "devices": c.devices, "servers": c.servers,
            "slots": len(self.slots), "slot_len_ms": c.slot_len_ms, "capacity_mode": c.capacity_mode,
            "inference_jitter": c.inference_jitter, "csi_error": c.csi_error,
            "ssp": r.ssp, "avg_accuracy": r.avg_accuracy, "avg_throughput": r.avg_throughput,
            "mean_reward": r.mean_reward,
            "mean_q_hat": "" if r.mean_q_hat is None else r.mean_q_hat,
            "final_loss": losses[-1] if losses else "",
        }

    def write_task_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TASK_COLUMNS)
            for k, o in self.tasks:
                w.writerow([k, o.device_id, o.server_id, o.exit_id, o.t_com, o.t_wait, o.t_cmp,
                            o.t_total, o.deadline_ms, o.accuracy, int(o.success), o.reward])

    def write_slot_csv(self, path: str | Path) -> None:
        ma = metrics.moving_average(self.q_hat, 50)
        j = 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SLOT_COLUMNS)
            for s in self.slots:
                smooth = ""
                if s.q_hat is not None:
                    smooth = float(ma[j])
                    j += 1
                w.writerow([s.k, s.reward, s.est_reward, _blank(s.oracle_reward), _blank(s.q_hat),
                            smooth, _blank(s.loss), s.candidates])


def _blank(x):
    return "" if x is None else x


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def run_episode(config: ScenarioConfig, policy, slots: int | None = None, *, oracle: bool = False,
                progress: Callable[[SlotRecord], None] | None = None) -> EpisodeLog:
    """Simulate ``slots`` slots (default ``config.slots``) under ``policy``.

    Each slot: the policy decides on what it can observe, the decision is
    committed with the true rates and inference times, then the policy gets
    to learn from it. With ``oracle=True`` every slot is also solved by
    exhaustive search, giving the normalised reward of the policy.
    """
    K = config.slots if slots is None else slots
    table = config.exit_table()
    tau = config.slot_len_ms
    state = SimState.initial(config.devices, config.server_type_indices(table))
    log = EpisodeLog(getattr(policy, "name", type(policy).__name__), config)
    for k in range(1, K + 1):
        slot = generate_slot(config, k)
        step = policy.decide(slot, state)
        est = step.est_reward
        if est is None:
            est = decision_reward(state, slot, step.decision, table, tau, estimated=True,
                                  psi_mode=config.psi_mode)
        oracle_r = q_hat = None
        if oracle:
            _, oracle_r = exhaustive_oracle(state, slot, table, tau, cap=config.oracle_cap,
                                            psi_mode=config.psi_mode)
            q_hat = metrics.normalized_reward(est, oracle_r)
        outcomes, next_state = apply_decision(state, slot, step.decision, table, tau,
                                              estimated=False, psi_mode=config.psi_mode)
        loss = policy.learn(k, step)
        state = next_state
        rec = SlotRecord(k, slot_reward(outcomes), est, oracle_r, q_hat, loss, step.n_candidates)
        log.slots.append(rec)
        log.tasks.extend((k, o) for o in outcomes)
        if progress is not None:
            progress(rec)
    return log

