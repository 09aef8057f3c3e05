"""Metric suite computed from recorded bags and the declared scene."""

from .accuracy import DistanceAccuracy, distance_accuracy, intensity_deciles
from .calibration import (
    Calibration,
    CalibrationError,
    CalibrationInsufficient,
    CalibrationNotConverged,
    delta_K,
    detect_markers,
    recalibrate,
)
from .geometry import PixelRays
from .loader import BagData, CoverageError, DutSweep, load_bag
from .pipeline import AnalysisRun, analyze_bags, analyze_manifest
from .radiometry import BeamEstimate, StripeProfile, beam_profile, intensity_profile, intensity_profiles
from .report import BagReport, analyze_bag, write_report
from .stats import DeadPixels, TemporalStats, dead_pixels, temporal_stats
from .trend import AlignmentError, trend

__all__ = [
    "AlignmentError", "AnalysisRun", "BagData", "BagReport", "BeamEstimate", "Calibration",
    "CalibrationError", "CalibrationInsufficient", "CalibrationNotConverged", "CoverageError",
    "DeadPixels", "DistanceAccuracy", "DutSweep", "PixelRays", "StripeProfile", "TemporalStats",
    "analyze_bag", "analyze_bags", "analyze_manifest", "beam_profile", "dead_pixels", "delta_K",
    "detect_markers", "distance_accuracy", "intensity_deciles", "intensity_profile",
    "intensity_profiles", "load_bag", "recalibrate", "temporal_stats", "trend", "write_report",
]
