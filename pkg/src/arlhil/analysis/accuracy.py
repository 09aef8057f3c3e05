"""Distance accuracy against the geometric ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PixelRays


@dataclass
class DistanceAccuracy:
    dD: np.ndarray  # (P, H, W) mean_D - D_gt, NaN where excluded
    per_pixel: np.ndarray  # (H, W) mean over poses
    n_samples: int  # pixel-poses with a valid residual
    n_excluded: int  # pixel-poses with a distance but no target coverage
    deciles: list  # per mean-intensity decile summaries, low to high

    def summary(self) -> dict:
        v = self.dD[np.isfinite(self.dD)]
        if v.size == 0:
            return {"n_samples": 0, "n_excluded": self.n_excluded}
        return {
            "n_samples": self.n_samples,
            "n_excluded": self.n_excluded,
            "mean": float(v.mean()),
            "median": float(np.median(v)),
            "max_abs": float(np.abs(v).max()),
            "p95_abs": float(np.quantile(np.abs(v), 0.95)),
        }


def intensity_deciles(mean_I: np.ndarray, dD: np.ndarray, n_bins: int = 10) -> list[dict]:
    """Residual statistics binned by mean intensity into equal-count bins."""
    ok = np.isfinite(dD)
    I = mean_I[ok].ravel()
    d = dD[ok].ravel()
    if I.size < n_bins:
        return []
    order = np.argsort(I, kind="stable")
    out = []
    for k, idx in enumerate(np.array_split(order, n_bins)):
        di = d[idx]
        out.append({
            "decile": k,
            "I_lo": float(I[idx].min()),
            "I_hi": float(I[idx].max()),
            "n": int(idx.size),
            "mean": float(di.mean()),
            "std": float(di.std()),
            "median_abs": float(np.median(np.abs(di))),
        })
    return out


def distance_accuracy(mean_I: np.ndarray, mean_D: np.ndarray, phis, rays: PixelRays) -> DistanceAccuracy:
    """Residual of the frame-averaged distance against the range expected
    from the reported stage angles ``phis`` and the declared scene."""
    mean_D = np.asarray(mean_D, dtype=float)
    gt = np.stack([rays.distance(float(p)) for p in phis])
    dD = mean_D - gt
    measured = np.isfinite(mean_D)
    n_excluded = int((measured & ~np.isfinite(gt)).sum())
    with np.errstate(invalid="ignore"):
        counts = np.isfinite(dD).sum(axis=0)
        per_pixel = np.where(counts > 0, np.nansum(dD, axis=0) / np.maximum(counts, 1), np.nan)
    return DistanceAccuracy(
        dD=dD,
        per_pixel=per_pixel,
        n_samples=int(np.isfinite(dD).sum()),
        n_excluded=n_excluded,
        deciles=intensity_deciles(np.asarray(mean_I, dtype=float), dD),
    )
