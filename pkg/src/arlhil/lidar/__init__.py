"""Simulated flash LiDAR DUT: optics, scene, waveform, detection, aging, telemetry."""

from .aging import AgingParams, AgingState, Injection, advance_aging, apply_injection
from .camera import DutSpec, Intrinsics, ProjectionDomainError, project, unproject
from .scene import TargetScene, default_scene, raycast
from .sensor import Frame, SensorParams, capture_frame
from .telemetry import OperatingData, telemetry
from .waveform import detect_peaks, synth_waveform, tof_to_distance

__all__ = [
    "AgingParams", "AgingState", "Injection", "advance_aging", "apply_injection",
    "DutSpec", "Intrinsics", "ProjectionDomainError", "project", "unproject",
    "TargetScene", "default_scene", "raycast",
    "Frame", "SensorParams", "capture_frame",
    "OperatingData", "telemetry",
    "detect_peaks", "synth_waveform", "tof_to_distance",
]
