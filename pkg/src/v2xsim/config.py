"""Run configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

MODES = ("proposed", "baseline1", "baseline2")
RELAY_MODES = ("two_hop", "access_point")
SCENARIOS = (1, 2, 3)

RSU_SPACING_M = 1732.0


class ConfigError(ValueError):
    """Invalid configuration. ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SimConfig:
    scenario_id: int = 3
    mode: str = "proposed"
    sigma_m: float = 5.0
    duration_tti: int = 10000
    warmup_tti: int = 500
    reslice_period_tti: int = 100
    seed: int = 0
    highway_length_m: Optional[float] = None
    n_rsu: int = 2
    offload_threshold_db: float = 0.0
    relay_range_m: float = 250.0
    relay_mode: str = "access_point"
    squared_similarity: bool = False
    video_fraction: float = 1.0
    n_prb: int = 50
    rsu_tx_power_dbm: float = 46.0
    sl_tx_power_dbm: float = 20.0
    noise_figure_db: float = 9.0
    shadowing_std_v2i_db: float = 8.0
    shadowing_std_v2v_db: float = 3.0
    fading: bool = True
    pf_beta: float = 0.01
    harq_max_attempts: int = 4
    output_dir: str = "out"

    def __post_init__(self):
        self.validate()

    @property
    def length_m(self) -> float:
        if self.highway_length_m is None:
            return self.n_rsu * RSU_SPACING_M
        return float(self.highway_length_m)

    @property
    def total_tti(self) -> int:
        return self.warmup_tti + self.duration_tti

    def validate(self) -> None:
        if self.scenario_id not in SCENARIOS:
            raise ConfigError("scenario_id", f"must be one of {SCENARIOS}, got {self.scenario_id!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if not self.sigma_m > 0:
            raise ConfigError("sigma_m", "must be > 0")
        if self.duration_tti <= 0:
            raise ConfigError("duration_tti", "must be a positive number of TTIs")
        if self.reslice_period_tti <= 0:
            raise ConfigError("reslice_period_tti", "must be positive")
        if self.duration_tti < self.reslice_period_tti:
            raise ConfigError("duration_tti", "must be >= reslice_period_tti")
        if self.warmup_tti < 0:
            raise ConfigError("warmup_tti", "must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.n_rsu <= 0:
            raise ConfigError("n_rsu", "must be positive")
        if self.highway_length_m is not None:
            if not self.highway_length_m > 0:
                raise ConfigError("highway_length_m", "must be > 0")
            if self.highway_length_m < self.n_rsu * RSU_SPACING_M:
                raise ConfigError(
                    "highway_length_m",
                    f"too short for {self.n_rsu} RSUs spaced {RSU_SPACING_M:g} m apart",
                )
        if not 0.0 <= self.video_fraction <= 1.0:
            raise ConfigError("video_fraction", "must lie in [0, 1]")
        if self.n_prb <= 0:
            raise ConfigError("n_prb", "must be positive")
        if not 0.0 < self.pf_beta < 1.0:
            raise ConfigError("pf_beta", "must lie in (0, 1)")
        if self.harq_max_attempts < 1:
            raise ConfigError("harq_max_attempts", "must be >= 1")
        if self.relay_range_m <= 0:
            raise ConfigError("relay_range_m", "must be > 0")
        if self.relay_mode not in RELAY_MODES:
            raise ConfigError("relay_mode", f"must be one of {RELAY_MODES}, got {self.relay_mode!r}")

    def replace(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: Any, annotation: str) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if annotation == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if annotation == "int":
            return int(text, 0)
        if annotation == "float":
            return float(text)
        if annotation == "Optional[float]":
            return None if text.lower() in ("", "none") else float(text)
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r} as {annotation}") from None
    return text


_FIELD_TYPES = {f.name: str(f.type) for f in fields(SimConfig)}


def config_from_mapping(values: dict[str, Any], base: Optional[SimConfig] = None) -> SimConfig:
    """Build a config from string or typed values layered over ``base``."""
    base = base or SimConfig()
    changes = {}
    for key, raw in values.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown configuration key")
        changes[key] = _coerce(key, raw, _FIELD_TYPES[key])
    return dataclasses.replace(base, **changes)


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path, overrides: Optional[dict[str, Any]] = None) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"no such file: {path}")
    values = parse_config_text(path.read_text())
    values.update(overrides or {})
    return config_from_mapping(values)


def dump_config_text(config: SimConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
