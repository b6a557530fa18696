"""Simulation configuration and the flat key/value file format.

A config file holds one ``key = value`` pair per line. Keys are the
``SimConfig`` field names; ``#`` starts a comment. List-valued fields are
comma separated.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_type_hints

LIGHT_SPEED = 3e8  # m/s


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class SimConfig:
    n_vehicles: int = 10
    n_task_types: int = 3
    bandwidth_w: float = 20e6
    tx_power_p: float = 0.2
    # ``noise_dbm`` wins over ``noise_rho2`` when both are set
    noise_rho2: float | None = None
    noise_dbm: float | None = -110.0
    carrier_fc: float = 2e9
    vehicle_cpu_fv: float = 5e9
    server_cpu_fE: float = 400e9
    n_cores_NE: int = 10
    cycles_per_byte_ck: list[float] = field(default_factory=lambda: [0.25e6])
    task_size_range: list[float] = field(default_factory=lambda: [1000.0, 1500.0])
    max_delay_Tmax: list[float] = field(default_factory=lambda: [0.15])
    slot_dt: float = 0.1
    kappa_ve: float = 1e-28
    kappa_se: float = 1.0 / (400e9) ** 3
    beta: float = 1.0
    # None means 1 / server_cpu_fE
    eta: float | None = None
    gamma: float = 0.95
    soft_update_lambda: float = 0.01
    est_bias_df: float = 0.0
    bias_jitter: float = 0.0
    road_length: float = 1000.0
    bs_position: float | None = None
    bs_elevation: float = 10.0
    speed_range: list[float] = field(default_factory=lambda: [10.0, 15.0])
    shadow_sigma_db: float = 8.0
    alpha_min: float = 0.005
    tx_scaled_by_omega: bool = False
    seed: int = 1

    def __post_init__(self) -> None:
        k = self.n_task_types
        # per-type lists given with a single value broadcast to K entries
        for name in ("cycles_per_byte_ck", "max_delay_Tmax"):
            value = getattr(self, name)
            if isinstance(value, (int, float)):
                value = [float(value)]
            value = [float(v) for v in value]
            if len(value) == 1 and k > 1:
                value = value * k
            setattr(self, name, value)
        if self.bs_position is None:
            self.bs_position = self.road_length / 2.0
        self.validate()

    # derived quantities -------------------------------------------------
    @property
    def noise_watts(self) -> float:
        if self.noise_dbm is not None:
            return dbm_to_watts(self.noise_dbm)
        assert self.noise_rho2 is not None
        return self.noise_rho2

    @property
    def reward_eta(self) -> float:
        return 1.0 / self.server_cpu_fE if self.eta is None else self.eta

    @property
    def max_task_size(self) -> float:
        return self.task_size_range[1]

    def validate(self) -> None:
        if self.n_vehicles < 1:
            raise ConfigError("n_vehicles", "must be >= 1")
        if self.n_task_types < 1:
            raise ConfigError("n_task_types", "must be >= 1")
        for name in ("bandwidth_w", "carrier_fc", "vehicle_cpu_fv", "server_cpu_fE",
                     "slot_dt", "road_length", "kappa_ve", "kappa_se", "n_cores_NE"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be strictly positive")
        if self.tx_power_p < 0:
            raise ConfigError("tx_power_p", "must be nonnegative")
        if self.noise_dbm is None and (self.noise_rho2 is None or self.noise_rho2 <= 0):
            raise ConfigError("noise_rho2", "must be strictly positive when noise_dbm is unset")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma", "must lie in (0, 1)")
        if not 0.0 <= self.soft_update_lambda <= 1.0:
            raise ConfigError("soft_update_lambda", "must lie in [0, 1]")
        if self.beta < 0:
            raise ConfigError("beta", "must be nonnegative")
        if self.eta is not None and self.eta < 0:
            raise ConfigError("eta", "must be nonnegative")
        lo, hi = self.task_size_range
        if not 0 < lo <= hi:
            raise ConfigError("task_size_range", "need 0 < min <= max")
        vlo, vhi = self.speed_range
        if not 0 <= vlo <= vhi:
            raise ConfigError("speed_range", "need 0 <= min <= max")
        for name in ("cycles_per_byte_ck", "max_delay_Tmax"):
            value = getattr(self, name)
            if len(value) != self.n_task_types:
                raise ConfigError(name, f"expected {self.n_task_types} entries, got {len(value)}")
            if any(v <= 0 for v in value):
                raise ConfigError(name, "entries must be strictly positive")
        if not 0 <= self.bs_position <= self.road_length:
            raise ConfigError("bs_position", "must lie on the road")
        if self.shadow_sigma_db < 0:
            raise ConfigError("shadow_sigma_db", "must be nonnegative")
        if not 0 < self.alpha_min <= 1:
            raise ConfigError("alpha_min", "must lie in (0, 1]")

    def replace(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# flat key/value format

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(raw: str, hint: Any, name: str) -> Any:
    raw = raw.strip()
    text = str(hint)
    try:
        if raw.lower() in ("none", "null", ""):
            if "None" in text:
                return None
            raise ConfigError(name, "value required")
        if "list" in text:
            return [float(x) for x in raw.split(",") if x.strip()]
        if "bool" in text:
            if raw.lower() not in _BOOL:
                raise ConfigError(name, f"not a boolean: {raw!r}")
            return _BOOL[raw.lower()]
        if "int" in text and "float" not in text:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(name, f"cannot parse {raw!r}") from None


def field_types(cls: type = SimConfig) -> dict[str, Any]:
    hints = get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def parse_kv_text(text: str, cls: type = SimConfig) -> dict[str, Any]:
    """Parse key/value text into typed keyword arguments for ``cls``."""
    types = field_types(cls)
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(key, "unknown configuration key")
        out[key] = _parse_value(raw, types[key], key)
    return out


def load_config(path: str | Path, **overrides: Any) -> SimConfig:
    kwargs = parse_kv_text(Path(path).read_text())
    kwargs.update(overrides)
    return SimConfig(**kwargs)


def format_kv(obj: Any) -> str:
    lines = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, (list, tuple)):
            value = ", ".join(repr(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
