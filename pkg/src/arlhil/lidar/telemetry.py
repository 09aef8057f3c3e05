"""Synthetic internal operating data of the DUT."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aging import AgingState


@dataclass(frozen=True)
class TelemetryParams:
    dT_fpga: float = 12.0
    dT_tof: float = 8.0
    tec_setpoint: float = 25.0
    tec_authority: float = 40.0  # K of housing offset the TEC can hold
    i_tec_max: float = 2.0
    r_tec: float = 1.5
    v_tec_mid: float = 2.5
    i_laser0: float = 30.0
    v_laser0: float = 2.0
    r_laser: float = 0.02
    laser_tempco: float = -2e-3  # V/K
    t_pump0: float = 5e-6
    rails: dict = field(
        default_factory=lambda: {"1V0": 1.0, "1V8": 1.8, "3V3": 3.3, "5V0": 5.0, "12V": 12.0}
    )
    rail_noise: float = 2e-3  # relative std, truncated at 3 sigma


@dataclass(frozen=True)
class OperatingData:
    T_FPGA: float
    T_ToF: float
    T_Laser: float
    V_TECN: float
    V_TECP: float
    I_TEC: float
    V_Laser: float
    I_Laser: float
    t_pump: float
    V_rails: dict

    SCALARS = ("T_FPGA", "T_ToF", "T_Laser", "V_TECN", "V_TECP", "I_TEC", "V_Laser", "I_Laser", "t_pump")

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, k)) for k in self.SCALARS):
            raise ValueError("operating data must be finite")


def telemetry(housing_c: float, aging: AgingState, seed, params: TelemetryParams = TelemetryParams()) -> OperatingData:
    """Operating data for a DUT whose housing sits at ``housing_c``.

    The laser current follows an automatic power control that compensates
    the optical power loss, so ``I_Laser = I_0 / eta_P``.
    """
    rng = np.random.default_rng(seed)
    err = housing_c - params.tec_setpoint
    load = min(abs(err) / params.tec_authority, 1.0)
    if abs(err) <= params.tec_authority:
        t_laser = params.tec_setpoint
    else:
        t_laser = housing_c - math.copysign(params.tec_authority, err)
    i_tec = params.i_tec_max * load
    v_diff = math.copysign(params.r_tec * i_tec, err) if i_tec else 0.0
    i_laser = params.i_laser0 / aging.eta_P
    v_laser = params.v_laser0 + params.r_laser * i_laser + params.laser_tempco * (t_laser - params.tec_setpoint)
    rails = {}
    for name in sorted(params.rails):
        nominal = params.rails[name]
        z = float(np.clip(rng.standard_normal(), -3.0, 3.0))
        rails[name] = nominal * (1.0 + params.rail_noise * z)
    return OperatingData(
        T_FPGA=housing_c + params.dT_fpga,
        T_ToF=housing_c + params.dT_tof,
        T_Laser=t_laser,
        V_TECN=params.v_tec_mid - 0.5 * v_diff,
        V_TECP=params.v_tec_mid + 0.5 * v_diff,
        I_TEC=i_tec,
        V_Laser=v_laser,
        I_Laser=i_laser,
        t_pump=params.t_pump0 / aging.eta_P,
        V_rails=rails,
    )
