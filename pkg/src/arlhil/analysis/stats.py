"""Temporal frame statistics and dead-pixel detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loader import CoverageError, DutSweep


@dataclass
class TemporalStats:
    mean_I: np.ndarray
    std_I: np.ndarray
    mean_D: np.ndarray  # NaN where any frame had no return
    std_D: np.ndarray
    n_excluded: int  # pixels left out of the distance statistics


def temporal_stats(I, D) -> TemporalStats:
    """Per-pixel mean and sample std (n - 1) over the leading frame axis.

    Extra leading axes (e.g. sweep positions) are carried through, so
    ``I`` of shape ``(P, n, H, W)`` gives ``(P, H, W)`` statistics with the
    frame axis being axis -3.
    """
    I = np.asarray(I, dtype=float)
    D = np.asarray(D, dtype=float)
    if I.shape != D.shape or I.ndim < 3:
        raise ValueError("I and D must be equal-shape stacks (..., n, H, W)")
    n = I.shape[-3]
    if n < 2:
        raise ValueError("temporal statistics need at least two frames")
    ax = -3
    mean_I = I.mean(axis=ax)
    std_I = I.std(axis=ax, ddof=1)
    valid = np.isfinite(D).all(axis=ax)
    Dz = np.where(np.isfinite(D), D, 0.0)
    mean_D = Dz.mean(axis=ax)
    std_D = np.sqrt(((Dz - np.expand_dims(mean_D, ax)) ** 2).sum(axis=ax) / (n - 1))
    mean_D = np.where(valid, mean_D, np.nan)
    std_D = np.where(valid, std_D, np.nan)
    return TemporalStats(mean_I, std_I, mean_D, std_D, int((~valid).sum()))


@dataclass
class DeadPixels:
    count: int
    pixels: list  # sorted [(u, v), ...]
    threshold: float  # DN
    floor_median: float
    floor_sigma: float
    floor_samples: int


MIN_DEAD_THRESHOLD = 1.0  # DN; a noise-free floor of 0 DN must still separate dead from live


def dead_pixels(sweep: DutSweep, n_sigma: float = 3.0, min_floor_samples: int = 100,
                phis=None, rays=None) -> DeadPixels:
    """Pixels whose intensity stays below ``floor + n_sigma * sigma`` over the
    whole sweep.

    With the reported stage angles ``phis`` and the :class:`PixelRays` of the
    declared scene, the sweep must put a target in front of every pixel at
    some pose; otherwise a dark pixel could merely be looking at void.

    The noise floor is estimated from no-return intensities (``D`` NaN) of
    pixels that do return somewhere in the sweep, so dead pixels do not drag
    it down.
    """
    I, D = sweep.I, sweep.D
    if I.ndim != 4 or I.shape[0] < 1 or I.shape[1] < 1:
        raise CoverageError("dead-pixel search needs a full sweep of frame stacks")
    if phis is not None and rays is not None:
        seen = np.zeros(sweep.shape, dtype=bool)
        for phi in phis:
            seen |= np.isfinite(rays.cast(float(phi)).range)
        if not seen.all():
            raise CoverageError(f"sweep leaves {int((~seen).sum())} pixels without any target")
    ever_returns = np.isfinite(D).any(axis=(0, 1))
    no_ret = ~np.isfinite(D) & ever_returns
    samples = I[no_ret].astype(float)
    if samples.size >= min_floor_samples:
        med = float(np.median(samples))
        sig = float(samples.std())
    else:
        med, sig = 0.0, 0.0
    thr = max(med + n_sigma * sig, MIN_DEAD_THRESHOLD)
    peak = I.max(axis=(0, 1))
    vs, us = np.nonzero(peak < thr)
    pixels = sorted(zip(us.tolist(), vs.tolist()))
    return DeadPixels(len(pixels), pixels, thr, med, sig, int(samples.size))
