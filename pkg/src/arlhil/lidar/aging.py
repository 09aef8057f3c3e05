"""Parametric degradation laws of the simulated DUT.

Everything the simulator knows about wear lives here, so a measured model
can replace these functional forms without touching the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import PARAM_NAMES, Intrinsics

BOLTZMANN_EV = 8.617333262e-5  # eV/K


@dataclass(frozen=True)
class AgingParams:
    enabled: bool = True
    activation_energy_ev: float = 0.7
    reference_temp_c: float = 85.0
    tau_power: float = 3.0e5  # hot seconds for 1/e optical power
    widening_rate: float = 3.0e-6  # beam width growth per hot second
    dead_pixel_rate: float = 3.0e-4  # expected new dead pixels per hot second
    # per-cycle random-walk step of the intrinsics: relative for fx/fy,
    # pixels for cx/cy, absolute for k1
    drift_sigma: dict = field(
        default_factory=lambda: {"fx": 2e-3, "fy": 2e-3, "cx": 0.02, "cy": 0.02, "k1": 5e-4}
    )
    cycle_seconds: float = 6 * 3600.0

    def __post_init__(self):
        if self.tau_power <= 0 or self.cycle_seconds <= 0:
            raise ValueError("aging time constants must be positive")
        if self.widening_rate < 0 or self.dead_pixel_rate < 0:
            raise ValueError("aging rates must be non-negative")
        unknown = set(self.drift_sigma) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown drift parameters {sorted(unknown)}")


@dataclass(frozen=True)
class AgingState:
    cycle_count: int = 0
    hot_seconds: float = 0.0
    eta_P: float = 1.0
    widening: float = 1.0
    dead_pixels: frozenset = frozenset()
    delta_K: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)  # additive on (fx, fy, cx, cy, k1)
    range_bias: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.eta_P <= 1.0:
            raise ValueError("eta_P must lie in (0, 1]")
        if self.widening < 1.0:
            raise ValueError("beam widening must be >= 1")

    def intrinsics(self, nominal: Intrinsics) -> Intrinsics:
        return Intrinsics.from_array(nominal.as_array() + np.asarray(self.delta_K))

    def to_dict(self) -> dict:
        return {
            "cycle_count": self.cycle_count,
            "hot_seconds": self.hot_seconds,
            "eta_P": self.eta_P,
            "widening": self.widening,
            "dead_pixels": sorted([list(p) for p in self.dead_pixels]),
            "delta_K": dict(zip(PARAM_NAMES, self.delta_K)),
            "range_bias": self.range_bias,
        }


def arrhenius_factor(temp_c: float, params: AgingParams) -> float:
    """Acceleration of a dwell at ``temp_c`` relative to the reference temperature."""
    t = temp_c + 273.15
    t_ref = params.reference_temp_c + 273.15
    return math.exp(-params.activation_energy_ev / BOLTZMANN_EV * (1.0 / t - 1.0 / t_ref))


def advance_aging(
    aging: AgingState,
    dwell: float,
    temp_c: float,
    seed,
    params: AgingParams,
    shape: tuple[int, int],
    nominal: Intrinsics | None = None,
) -> AgingState:
    """Age the sensor by an operating dwell of ``dwell`` seconds at ``temp_c``.

    ``shape`` is the detector ``(H, W)``; ``nominal`` scales the relative
    focal-length drift (defaults to unit scale).
    """
    if dwell < 0:
        raise ValueError("dwell must be non-negative")
    if dwell == 0 or not params.enabled:
        return aging
    rng = np.random.default_rng(seed)
    d_hot = dwell * arrhenius_factor(temp_c, params)
    eta = aging.eta_P * math.exp(-d_hot / params.tau_power)
    widening = aging.widening + params.widening_rate * d_hot

    dead = set(aging.dead_pixels)
    n_new = int(rng.poisson(params.dead_pixel_rate * d_hot))
    if n_new:
        h, w = shape
        healthy = [(u, v) for v in range(h) for u in range(w) if (u, v) not in dead]
        picks = rng.choice(len(healthy), size=min(n_new, len(healthy)), replace=False)
        dead.update(healthy[i] for i in sorted(picks))

    scale = math.sqrt(dwell / params.cycle_seconds)
    ref = nominal.as_array() if nominal is not None else np.ones(5)
    units = np.array([ref[0], ref[1], 1.0, 1.0, 1.0])
    sig = np.array([params.drift_sigma.get(n, 0.0) for n in PARAM_NAMES]) * units
    step = rng.standard_normal(5) * sig * scale
    delta_K = tuple(float(x) for x in np.asarray(aging.delta_K) + step)

    return replace(
        aging,
        hot_seconds=aging.hot_seconds + d_hot,
        eta_P=max(eta, np.finfo(float).tiny),
        widening=widening,
        dead_pixels=frozenset(dead),
        delta_K=delta_K,
    )


@dataclass(frozen=True)
class Injection:
    """Known degradation applied at the start of ``cycle`` (all DUTs when ``dut`` is None)."""

    cycle: int
    dut: int | None = None
    eta_P: float | None = None  # multiplies the current power scale
    widening: float | None = None  # multiplies the current widening
    fx_scale: float | None = None
    fy_scale: float | None = None
    dead_pixels: tuple = ()
    range_bias: float | None = None

    def applies(self, cycle: int, dut: int) -> bool:
        return self.cycle == cycle and (self.dut is None or self.dut == dut)


def apply_injection(aging: AgingState, inj: Injection, nominal: Intrinsics) -> AgingState:
    dk = list(aging.delta_K)
    if inj.fx_scale is not None:
        dk[0] += (inj.fx_scale - 1.0) * nominal.fx
    if inj.fy_scale is not None:
        dk[1] += (inj.fy_scale - 1.0) * nominal.fy
    return replace(
        aging,
        eta_P=aging.eta_P * inj.eta_P if inj.eta_P is not None else aging.eta_P,
        widening=aging.widening * inj.widening if inj.widening is not None else aging.widening,
        dead_pixels=aging.dead_pixels | frozenset(tuple(p) for p in inj.dead_pixels),
        delta_K=tuple(dk),
        range_bias=inj.range_bias if inj.range_bias is not None else aging.range_bias,
    )
