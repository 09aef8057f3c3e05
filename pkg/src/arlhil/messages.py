"""Payload types carried on the bus and stored in bags.

Each type declares the channel kind it belongs to through ``KIND``; the bus
rejects a payload published on a channel of another kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

from .lidar.sensor import Frame  # noqa: F401  (re-exported, KIND "frame")
from .lidar.telemetry import OperatingData


@dataclass(frozen=True)
class ThermalMsg:
    KIND: ClassVar[str] = "thermal"
    T_set: float
    T_oil: float
    T: tuple  # thermocouples T0..T4: ambient, plate, three housings

    @property
    def housings(self) -> tuple:
        return tuple(self.T[2:])


@dataclass(frozen=True)
class SetpointMsg:
    KIND: ClassVar[str] = "command"
    T_set: float


@dataclass(frozen=True)
class StageMsg:
    """Stage command (``phi_actual`` NaN) or completed move report."""

    KIND: ClassVar[str] = "stage"
    index: int
    phi_set: float
    phi_actual: float = float("nan")


@dataclass(frozen=True)
class TelemetryMsg:
    KIND: ClassVar[str] = "telemetry"
    dut_id: int
    data: OperatingData


@dataclass(frozen=True)
class CaptureRequest:
    KIND: ClassVar[str] = "command"
    pose_index: int
    phi_deg: float  # realized stage angle reported by the stage
    n_frames: int
    seq0: int


@dataclass(frozen=True)
class StatusMsg:
    KIND: ClassVar[str] = "command"
    fields: dict = field(default_factory=dict)
