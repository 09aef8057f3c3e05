"""Rotary stage carrying the DUT front end."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class StageRangeError(ValueError):
    pass


@dataclass(frozen=True)
class StageState:
    phi_actual: float = 0.0
    phi_set: float = 0.0
    slew_rate: float = 30.0  # deg/s
    sigma_phi: float = 0.02  # deg, positioning noise before truncation
    limits: tuple[float, float] = (-180.0, 180.0)

    def __post_init__(self):
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError("stage limits must be increasing")
        if self.slew_rate <= 0:
            raise ValueError("slew rate must be positive")
        if self.sigma_phi < 0:
            raise ValueError("positioning noise must be non-negative")
        # the realized angle may sit up to 3 sigma outside the commanded one
        margin = 3.0 * self.sigma_phi
        if not (lo <= self.phi_set <= hi and lo - margin <= self.phi_actual <= hi + margin):
            raise StageRangeError("stage angle outside limits")


@dataclass(frozen=True)
class Move:
    state: StageState
    duration: float  # virtual seconds of motion


def truncated_normal(rng: np.random.Generator, sigma: float, bound: float = 3.0) -> float:
    """Gaussian sample conditioned on ``|x| <= bound * sigma`` (rejection)."""
    if sigma == 0:
        return 0.0
    while True:
        z = rng.standard_normal()
        if abs(z) <= bound:
            return float(z * sigma)


def move_to(state: StageState, phi_cmd: float, rng: np.random.Generator | None = None) -> Move:
    """Rotate to ``phi_cmd``; the move lasts ``|dphi| / slew`` and lands with truncated noise."""
    lo, hi = state.limits
    if not lo <= phi_cmd <= hi:
        raise StageRangeError(f"command {phi_cmd} deg outside limits {state.limits}")
    duration = abs(phi_cmd - state.phi_actual) / state.slew_rate
    err = 0.0
    if state.sigma_phi > 0:
        if rng is None:
            raise ValueError("a random generator is required when sigma_phi > 0")
        err = truncated_normal(rng, state.sigma_phi)
    return Move(replace(state, phi_set=float(phi_cmd), phi_actual=float(phi_cmd) + err), duration)


def sweep_grid(phi_lo: float, phi_hi: float, step: float) -> np.ndarray:
    """Inclusive grid ``phi_lo, phi_lo + step, ...`` up to ``phi_hi``."""
    if step <= 0:
        raise ValueError("sweep step must be positive")
    n = int(np.floor((phi_hi - phi_lo) / step + 1e-9)) + 1
    return phi_lo + step * np.arange(n)
