"""Scenario configuration and per-slot workload generation."""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .model import ExitTable, Slot, Task, load_exit_table

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "GRLE_"
CAPACITY_MODES = ("fixed", "uniform")

# independent random substreams, so switching one regime on leaves the others untouched
STREAMS = {"size": 1, "channel": 2, "capacity": 3, "jitter": 4, "csi": 5, "topology": 6}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    devices: int = 4
    servers: int = 2
    slots: int = 3000
    slot_len_ms: float = 30.0
    deadline_ms: float = 30.0
    size_min_kb: float = 50.0
    size_max_kb: float = 100.0
    rate_min_mbps: float = 20.0
    rate_max_mbps: float = 100.0
    capacity_mode: str = "fixed"
    capacity_min: float = 0.25
    inference_jitter: float = 0.0
    csi_error: float = 0.0
    link_drop_prob: float = 0.0
    seed: int = 0
    server_types: list[str] = field(default_factory=lambda: ["RTX_2080TI", "GTX_1080TI"])
    profile_path: str = ""
    psi_mode: str = "normalized"
    learning_rate: float = 0.001
    buffer_size: int = 128
    batch_size: int = 64
    train_interval: int = 10
    s_max: int = 64
    gcn_hidden: list[int] = field(default_factory=lambda: [128, 64])
    mlp_hidden: int = 64
    oracle_cap: int = 1_000_000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.devices >= 0, "devices must be >= 0")
        need(self.servers >= 1, "servers must be >= 1")
        need(self.slots >= 1, "slots must be >= 1")
        need(self.slot_len_ms > 0 and self.deadline_ms > 0, "slot length and deadline must be positive")
        need(0 < self.size_min_kb <= self.size_max_kb, "bad task size range")
        need(0 < self.rate_min_mbps <= self.rate_max_mbps, "bad rate range")
        need(self.capacity_mode in CAPACITY_MODES, f"capacity_mode must be one of {CAPACITY_MODES}")
        need(0 < self.capacity_min <= 1, "capacity_min must be in (0, 1]")
        need(0 <= self.inference_jitter < 1, "inference_jitter must be in [0, 1)")
        need(0 <= self.csi_error < 1, "csi_error must be in [0, 1)")
        need(0 <= self.link_drop_prob < 1, "link_drop_prob must be in [0, 1)")
        need(len(self.server_types) >= 1, "server_types is empty")
        need(self.psi_mode in ("normalized", "literal"), "psi_mode must be normalized or literal")
        need(len(self.gcn_hidden) == 2, "gcn_hidden takes two widths")
        need(self.batch_size <= self.buffer_size, "batch_size exceeds buffer_size")
        need(self.train_interval >= 1 and self.s_max >= 1, "train_interval and s_max must be >= 1")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def exit_table(self) -> ExitTable:
        return load_exit_table(self.profile_path or None)

    def server_type_indices(self, table: ExitTable) -> tuple[int, ...]:
        names = [self.server_types[n % len(self.server_types)] for n in range(self.servers)]
        return tuple(table.type_index(name) for name in names)

    def to_toml(self) -> str:
        lines = ["# offloading scenario; every key is optional"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_toml_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def _coerce(name: str, raw: Any, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            if isinstance(raw, str):
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return bool(raw)
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = raw.split(",") if isinstance(raw, str) else list(raw)
            kind = type(default[0]) if default else str
            return [kind(x.strip() if isinstance(x, str) else x) for x in items]
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot use {raw!r} (expected {type(default).__name__})") from None


def config_from_mapping(values: Mapping[str, Any], base: ScenarioConfig | None = None) -> ScenarioConfig:
    base = base or ScenarioConfig()
    known = {f.name for f in dataclasses.fields(base)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    changes = {k: _coerce(k, v, getattr(base, k)) for k, v in values.items()}
    return base.replace(**changes)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """``GRLE_<KEY>`` variables, keyed by lower-case config field name."""
    environ = os.environ if environ is None else environ
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            name = k[len(ENV_PREFIX):].lower()
            if name in known:
                out[name] = v
    return out


def load_config(path: str | Path | None = None, environ: Mapping[str, str] | None = None,
                **overrides) -> ScenarioConfig:
    """Defaults, then the TOML file, then ``GRLE_*`` variables, then keyword overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values.update(tomllib.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    values.update(env_overrides(environ))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(values)


def _stream(config: ScenarioConfig, name: str, k: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, STREAMS[name], k])


def generate_slot(config: ScenarioConfig, k: int) -> Slot:
    """The tasks, link states and server capacities of slot ``k``; pure in (config, k)."""
    M, N = config.devices, config.servers
    sizes = _stream(config, "size", k).uniform(config.size_min_kb, config.size_max_kb, size=M)
    est = _stream(config, "channel", k).uniform(config.rate_min_mbps, config.rate_max_mbps, size=(M, N))
    if config.csi_error > 0:
        e = config.csi_error
        true = est * _stream(config, "csi", k).uniform(1 - e, 1 + e, size=(M, N))
    else:
        true = est
    if config.inference_jitter > 0:
        j = config.inference_jitter
        jitter = _stream(config, "jitter", k).uniform(1 - j, 1 + j, size=M)
    else:
        jitter = np.ones(M)
    if config.capacity_mode == "uniform":
        capacity = _stream(config, "capacity", k).uniform(config.capacity_min, 1.0, size=N)
    else:
        capacity = np.ones(N)
    if config.link_drop_prob > 0:
        rng = _stream(config, "topology", k)
        links = rng.random((M, N)) >= config.link_drop_prob
        keep = rng.integers(N, size=M)
        for m in range(M):
            if not links[m].any():
                links[m, keep[m]] = True
    else:
        links = None

    tasks = tuple(
        Task(device_id=m, slot=k, size_kbytes=float(sizes[m]), deadline_ms=config.deadline_ms,
             true_rate_mbps=tuple(float(x) for x in true[m]),
             est_rate_mbps=tuple(float(x) for x in est[m]),
             jitter=float(jitter[m]),
             links=() if links is None else tuple(bool(x) for x in links[m]))
        for m in range(M))
    return Slot(k, tasks, tuple(float(c) for c in capacity))
