"""Campaign configuration with a strict JSON loader.

Every leaf default carries a provenance tag in :data:`PROVENANCE`: ``rig``
for values taken from the physical test bench and sensor datasheet,
``assumed`` for modelling choices of this simulator.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .lidar.aging import AgingParams, Injection
from .lidar.camera import DutSpec
from .lidar.sensor import SensorParams
from .lidar.telemetry import TelemetryParams
from .thermal import SETTLE_BOUND_S, PiGains, PlantParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class LoadProfile:
    T_min: float = -10.0
    T_max: float = 85.0
    T_step: float = 5.0
    cycle_duration: float = 6.0  # hours
    policy: str = "triangular"  # "triangular" | "ascending"

    def __post_init__(self):
        if not self.T_min < self.T_max:
            raise ValueError("T_min must be below T_max")
        if self.T_step <= 0:
            raise ValueError("T_step must be positive")
        n = (self.T_max - self.T_min) / self.T_step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("T_max - T_min must be a multiple of T_step")
        if self.cycle_duration <= 0:
            raise ValueError("cycle_duration must be positive")
        if self.policy not in ("triangular", "ascending"):
            raise ValueError(f"unknown profile policy {self.policy!r}")

    def ascending(self) -> list[float]:
        n = int(round((self.T_max - self.T_min) / self.T_step))
        return [self.T_min + k * self.T_step for k in range(n + 1)]

    def setpoints(self) -> list[float]:
        """Set-points of one cycle; the triangular policy also records the
        interior points on the way down."""
        up = self.ascending()
        if self.policy == "ascending":
            return up
        return up + up[-2:0:-1]

    @property
    def dwell(self) -> float:
        """Seconds per set-point so that one cycle spans ``cycle_duration``."""
        return self.cycle_duration * 3600.0 / len(self.setpoints())


@dataclass(frozen=True)
class SweepConfig:
    phi_lo: float = -60.0
    phi_hi: float = 60.0
    step: float = 0.9375

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("sweep step must be positive")
        if not self.phi_lo <= self.phi_hi:
            raise ValueError("phi_lo must not exceed phi_hi")


@dataclass(frozen=True)
class StageParams:
    slew_rate: float = 30.0
    sigma_phi: float = 0.02
    limits: tuple[float, float] = (-180.0, 180.0)


@dataclass(frozen=True)
class CampaignConfig:
    profile: LoadProfile = field(default_factory=LoadProfile)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    frames_per_position: int = 10
    n_duts: int = 3
    cycles: int = 1
    eps: float = 0.5
    hold: float = 30.0
    settle_timeout: float = 10.0 * SETTLE_BOUND_S
    thermal_period: float = 1.0  # s between thermal/state messages
    ambient_c: float = 20.0
    seed: int = 0
    dut: DutSpec = field(default_factory=DutSpec)
    sensor: SensorParams = field(default_factory=SensorParams)
    plant: PlantParams = field(default_factory=PlantParams)
    gains: PiGains = field(default_factory=PiGains)
    stage: StageParams = field(default_factory=StageParams)
    aging: AgingParams = field(default_factory=AgingParams)
    telemetry: TelemetryParams = field(default_factory=TelemetryParams)
    injections: tuple[Injection, ...] = ()
    record_descending: bool = True  # off: descending steps are dwelled through without a sweep
    out_dir: str = "arl_out"

    def __post_init__(self):
        if self.frames_per_position < 1:
            raise ValueError("frames_per_position must be >= 1")
        if not 1 <= self.n_duts <= len(self.plant.r_plate_housing):
            raise ValueError("n_duts must match the housings on the plate")
        if self.cycles < 0:
            raise ValueError("cycles must be non-negative")
        if self.eps <= 0 or self.hold < 0 or self.settle_timeout <= 0:
            raise ValueError("eps and settle_timeout must be positive, hold non-negative")
        if self.thermal_period <= 0:
            raise ValueError("thermal_period must be positive")
        lo, hi = self.stage.limits
        if not (lo <= self.sweep.phi_lo and self.sweep.phi_hi <= hi):
            raise ValueError("sweep range must lie inside the stage limits")

    def with_updates(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)


# provenance ------------------------------------------------------------------

_RIG = {
    "profile.T_min", "profile.T_max", "profile.T_step", "profile.cycle_duration",
    "sweep.phi_lo", "sweep.phi_hi", "sweep.step", "frames_per_position", "n_duts",
    "dut.width", "dut.height", "dut.hfov_deg", "dut.vfov_deg", "dut.wavelength_nm",
    "dut.d_near", "dut.d_far", "dut.max_frame_rate_hz", "dut.intensity_bits",
}


def _leaf_paths(obj, prefix: str = "") -> list[str]:
    out = []
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        path = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(val):
            out += _leaf_paths(val, path + ".")
        else:
            out.append(path)
    return out


PROVENANCE = {p: ("rig" if p in _RIG else "assumed") for p in _leaf_paths(CampaignConfig())}


# serialisation ---------------------------------------------------------------

def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def to_dict(cfg: CampaignConfig, include_out_dir: bool = True) -> dict:
    d = _plain(cfg)
    if not include_out_dir:
        d.pop("out_dir")
    return d


def echo(cfg: CampaignConfig) -> dict:
    """Config as embedded in manifests and reports (output location excluded,
    so relocating a run does not change its hashes)."""
    return to_dict(cfg, include_out_dir=False)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(cfg: CampaignConfig) -> str:
    return hashlib.sha256(canonical_json(echo(cfg)).encode()).hexdigest()


# strict loading --------------------------------------------------------------

def _check_scalar(tp, value, path: str):
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if args and len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        if not args:
            return tuple(value)
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is dict or tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return dict(value)
    if tp is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return _check_scalar(tp, value, path)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]}")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        kwargs[key] = _convert(hints[key], value, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{path or '<root>'}: {e}") from None


def from_dict(data: dict) -> CampaignConfig:
    return _build(CampaignConfig, data, "")


def load(path) -> CampaignConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return from_dict(data)


def desk_preset(**changes) -> CampaignConfig:
    """Short campaign for quick checks: two set-points around room temperature,
    one cycle, parametric sensor mode, full sweep and frame count."""
    base = CampaignConfig(
        profile=LoadProfile(T_min=20.0, T_max=25.0, T_step=5.0, cycle_duration=0.5, policy="ascending"),
        sensor=SensorParams(mode="parametric"),
        cycles=1,
    )
    return dataclasses.replace(base, **changes)

