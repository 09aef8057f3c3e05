"""Lumped thermal model of the climate front end and its cascaded PI control.

The chiller drives the coolant towards its command with a first-order lag;
the coolant exchanges heat with the cooling plate, the plate with the three
DUT housings, and the housings leak to the cabinet ambient through the
insulation.  The outer PI loop regulates the mean housing temperature by
setting a plate target; the inner loop regulates the plate by setting the
coolant command.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

T_CLAMP = (-40.0, 120.0)

# Longest closed-loop settling time (eps 0.5 K, hold 30 s) of the default
# plant and gains, frozen with a little headroom.  Measured: 20 -> 85 degC
# from a uniform 20 degC rig 299.7 s, the full-span 85 -> -10 degC return of
# an ascending-only profile 320.2 s, 5 K profile steps 170-180 s.
SETTLE_BOUND_S = 330.0


class ThermalStateError(ValueError):
    pass


@dataclass(frozen=True)
class ThermalState:
    T_amb: float
    T_plate: float
    T_housing: tuple[float, float, float]
    T_oil: float

    def __post_init__(self):
        values = (self.T_amb, self.T_plate, self.T_oil, *self.T_housing)
        if not all(math.isfinite(v) for v in values):
            raise ThermalStateError("temperatures must be finite")

    @classmethod
    def uniform(cls, temp: float, n_housings: int = 3) -> "ThermalState":
        return cls(T_amb=temp, T_plate=temp, T_housing=(temp,) * n_housings, T_oil=temp)

    @property
    def mean_housing(self) -> float:
        return sum(self.T_housing) / len(self.T_housing)

    def thermocouples(self) -> tuple[float, ...]:
        """Readings T0..T4: ambient, plate, three housings."""
        return (self.T_amb, self.T_plate, *self.T_housing)


@dataclass(frozen=True)
class PlantParams:
    tau_chiller: float = 40.0  # s, coolant lag towards its command
    r_oil_plate: float = 0.02  # K/W
    r_plate_housing: tuple[float, float, float] = (0.050, 0.055, 0.060)  # K/W, through the TIM
    r_housing_ambient: float = 3.4  # K/W, through the insulation
    c_plate: float = 1800.0  # J/K
    c_housing: float = 450.0  # J/K
    self_heating: float = 8.0  # W per DUT
    dt_max: float = 0.5  # s, largest admissible explicit Euler step

    def __post_init__(self):
        vals = (self.tau_chiller, self.r_oil_plate, self.r_housing_ambient,
                self.c_plate, self.c_housing, self.dt_max, *self.r_plate_housing)
        if not all(v > 0 for v in vals):
            raise ValueError("thermal resistances, capacities and step cap must be positive")
        if self.self_heating < 0:
            raise ValueError("self heating must be non-negative")

    def self_heating_offset(self) -> float:
        """Upper bound of the temperature rise self heating can add above the
        hottest external input (coolant command, ambient, initial state)."""
        n = len(self.r_plate_housing)
        return self.self_heating * (max(self.r_plate_housing) + n * self.r_oil_plate)


def plant_step(state: ThermalState, T_oil_cmd: float, params: PlantParams, dt: float) -> ThermalState:
    """Explicit Euler step of the lumped network."""
    if not math.isfinite(T_oil_cmd) or not math.isfinite(dt):
        raise ThermalStateError("non-finite plant input")
    if dt <= 0 or dt > params.dt_max:
        raise ValueError(f"dt must lie in (0, {params.dt_max}]")
    T_oil = state.T_oil + dt * (T_oil_cmd - state.T_oil) / params.tau_chiller
    q_plate = (state.T_oil - state.T_plate) / params.r_oil_plate
    housings = []
    for T_h, r in zip(state.T_housing, params.r_plate_housing):
        q_in = (state.T_plate - T_h) / r
        q_plate -= q_in
        q_leak = (state.T_amb - T_h) / params.r_housing_ambient
        housings.append(T_h + dt * (q_in + params.self_heating + q_leak) / params.c_housing)
    T_plate = state.T_plate + dt * q_plate / params.c_plate
    lo, hi = T_CLAMP
    clamp = lambda x: min(max(x, lo), hi)  # noqa: E731
    return ThermalState(
        T_amb=state.T_amb,
        T_plate=clamp(T_plate),
        T_housing=tuple(clamp(x) for x in housings),
        T_oil=clamp(T_oil),
    )


@dataclass(frozen=True)
class PiGains:
    kp_outer: float = 0.3
    ki_outer: float = 0.015
    kp_inner: float = 5.0
    ki_inner: float = 0.005
    clamp: tuple[float, float] = (-20.0, 100.0)  # chiller authority, degC
    anti_windup: str = "freeze"  # integrators hold while the output saturates

    def __post_init__(self):
        if min(self.kp_outer, self.ki_outer, self.kp_inner, self.ki_inner) < 0:
            raise ValueError("PI gains must be non-negative")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError("clamp low must be below clamp high")
        if self.anti_windup not in ("freeze", "none"):
            raise ValueError(f"unknown anti-windup mode {self.anti_windup!r}")


@dataclass
class CascadePI:
    """Cascaded PI: mean housing -> plate target -> coolant command.

    Both loops pass the set-point through as feed-forward, so zero error
    with empty integrators commands exactly ``T_set``.
    """

    gains: PiGains = field(default_factory=PiGains)
    i_outer: float = 0.0
    i_inner: float = 0.0
    saturated: bool = False

    def __call__(self, T_set: float, state: ThermalState, dt: float) -> float:
        g = self.gains
        lo, hi = g.clamp
        freeze = g.anti_windup == "freeze" and self.saturated

        e_out = T_set - state.mean_housing
        if not freeze:
            self.i_outer += g.ki_outer * e_out * dt
        plate_target = T_set + g.kp_outer * e_out + self.i_outer
        plate_target = min(max(plate_target, lo), hi)

        e_in = plate_target - state.T_plate
        if not freeze:
            self.i_inner += g.ki_inner * e_in * dt
        cmd = plate_target + g.kp_inner * e_in + self.i_inner
        clamped = min(max(cmd, lo), hi)
        self.saturated = clamped != cmd
        return clamped

    def reset(self) -> None:
        self.i_outer = self.i_inner = 0.0
        self.saturated = False


def pi_cascade(T_set: float, state: ThermalState, gains: PiGains, dt: float,
               controller: CascadePI | None = None) -> float:
    """One controller update; pass ``controller`` to keep integrator state."""
    ctl = controller if controller is not None else CascadePI(gains)
    return ctl(T_set, state, dt)


@dataclass
class SettlingMonitor:
    """Tracks how long all housings have stayed inside ``T_set +- eps``."""

    T_set: float
    eps: float = 0.5
    hold: float = 30.0
    entered: float | None = None
    settled_at: float | None = None

    def __post_init__(self):
        if self.eps <= 0 or self.hold < 0:
            raise ValueError("eps must be positive and hold non-negative")

    def update(self, t: float, state: ThermalState) -> bool:
        inside = all(abs(T - self.T_set) <= self.eps for T in state.T_housing)
        if not inside:
            self.entered = None
            return False
        if self.entered is None:
            self.entered = t
        if t - self.entered >= self.hold:
            if self.settled_at is None:
                self.settled_at = t
            return True
        return False


def settled(samples: Iterable[tuple[float, ThermalState]], T_set: float, eps: float = 0.5,
            hold: float = 30.0) -> bool:
    """True iff the trace ends with all housings inside the band for ``hold`` seconds."""
    mon = SettlingMonitor(T_set, eps, hold)
    ok = False
    for t, s in samples:
        ok = mon.update(t, s)
    return ok


@dataclass
class ThermalRig:
    """Plant plus controller integrated on a fixed step."""

    params: PlantParams = field(default_factory=PlantParams)
    gains: PiGains = field(default_factory=PiGains)
    dt: float = 0.1
    state: ThermalState = field(default_factory=lambda: ThermalState.uniform(20.0))
    T_set: float = 20.0
    t: float = 0.0

    def __post_init__(self):
        self.controller = CascadePI(self.gains)
        self.T_oil_cmd = self.T_set

    def step(self) -> ThermalState:
        self.T_oil_cmd = self.controller(self.T_set, self.state, self.dt)
        self.state = plant_step(self.state, self.T_oil_cmd, self.params, self.dt)
        self.t += self.dt
        return self.state

    def run(self, duration: float) -> ThermalState:
        return self.run_steps(int(round(duration / self.dt)))

    def run_steps(self, n: int) -> ThermalState:
        """``n`` calls of :meth:`step` with the arithmetic inlined on floats.

        Bit-identical to stepping one by one; it only skips building an
        intermediate state object per step.
        """
        if n <= 0:
            return self.state
        p, g, ctl, dt = self.params, self.gains, self.controller, self.dt
        lo, hi = g.clamp
        clo, chi = T_CLAMP
        anti = g.anti_windup == "freeze"
        s = self.state
        T_amb, T_plate, T_oil = s.T_amb, s.T_plate, s.T_oil
        Th = list(s.T_housing)
        nh = len(Th)
        rs = p.r_plate_housing
        T_set = self.T_set
        cmd = self.T_oil_cmd
        for _ in range(n):
            # controller (same operation order as CascadePI.__call__)
            freeze = anti and ctl.saturated
            e_out = T_set - sum(Th) / nh
            if not freeze:
                ctl.i_outer += g.ki_outer * e_out * dt
            target = T_set + g.kp_outer * e_out + ctl.i_outer
            target = min(max(target, lo), hi)
            e_in = target - T_plate
            if not freeze:
                ctl.i_inner += g.ki_inner * e_in * dt
            raw = target + g.kp_inner * e_in + ctl.i_inner
            cmd = min(max(raw, lo), hi)
            ctl.saturated = cmd != raw
            # plant (same operation order as plant_step)
            new_oil = T_oil + dt * (cmd - T_oil) / p.tau_chiller
            q_plate = (T_oil - T_plate) / p.r_oil_plate
            for i in range(nh):
                T_h = Th[i]
                q_in = (T_plate - T_h) / rs[i]
                q_plate -= q_in
                q_leak = (T_amb - T_h) / p.r_housing_ambient
                Th[i] = min(max(T_h + dt * (q_in + p.self_heating + q_leak) / p.c_housing, clo), chi)
            T_plate = min(max(T_plate + dt * q_plate / p.c_plate, clo), chi)
            T_oil = min(max(new_oil, clo), chi)
            self.t += dt
        self.T_oil_cmd = cmd
        self.state = ThermalState(T_amb=T_amb, T_plate=T_plate, T_housing=tuple(Th), T_oil=T_oil)
        return self.state

    def settle_time(self, T_set: float, eps: float = 0.5, hold: float = 30.0,
                    timeout: float = 24 * 3600.0) -> float:
        """Simulated seconds until ``settled`` first holds after commanding ``T_set``."""
        self.T_set = T_set
        mon = SettlingMonitor(T_set, eps, hold)
        t0 = self.t
        while self.t - t0 <= timeout:
            self.step()
            if mon.update(self.t, self.state):
                return self.t - t0
        raise TimeoutError(f"no settling at {T_set} within {timeout} s")


TRACE_COLUMNS = ("t_virtual_s", "T_set", "T_oil", "T0", "T1", "T2", "T3", "T4")


def write_trace_csv(path, rows: Iterable[tuple[float, float, ThermalState]]) -> None:
    """Export ``(t, T_set, state)`` samples with the thermocouple columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for t, T_set, s in rows:
            w.writerow([f"{t:.3f}", f"{T_set:.3f}", f"{s.T_oil:.6f}", *(f"{x:.6f}" for x in s.thermocouples())])


def with_housing(state: ThermalState, values) -> ThermalState:
    return replace(state, T_housing=tuple(float(v) for v in values))
