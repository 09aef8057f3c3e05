"""Per-direction intensity profiles on the reflectance stripes and the
relative beam profile recovered from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..lidar.camera import project_vectors, unproject_vectors
from ..lidar.scene import stripe_roi_mask
from .geometry import PixelRays


@dataclass
class StripeProfile:
    stripe_index: int
    reflectance: float
    intensity: np.ndarray  # (H, W) mean of admitted samples, NaN on gaps
    compensated: np.ndarray  # (H, W) intensity * range^2 / (rho * cos incidence)
    count: np.ndarray  # (H, W) admitted samples per direction
    admitted: np.ndarray  # (P, H, W) bool, the geometric gate

    @property
    def gaps(self) -> list[tuple[int, int]]:
        vs, us = np.nonzero(self.count == 0)
        return sorted(zip(us.tolist(), vs.tolist()))


def stripe_gate(rays: PixelRays, phi_deg: float, stripe_index: int) -> np.ndarray:
    """Pixels whose centre ray lands inside the stripe ROI at ``phi_deg``."""
    return stripe_roi_mask(rays.cast(phi_deg), rays.scene, stripe_index)


def intensity_profile(mean_I: np.ndarray, phis, rays: PixelRays, stripe_index: int) -> StripeProfile:
    """Average the temporal-mean intensity of every pixel over the poses where
    its ray falls inside the ROI of one stripe. Directions never inside the
    ROI stay NaN and are listed as gaps."""
    return intensity_profiles(mean_I, phis, rays, [stripe_index])[0]


def intensity_profiles(mean_I: np.ndarray, phis, rays: PixelRays, stripes=None) -> list[StripeProfile]:
    """:func:`intensity_profile` for several stripes (default: all) with one
    ray cast per pose."""
    mean_I = np.asarray(mean_I, dtype=float)
    scene = rays.scene
    stripes = range(len(scene.stripes)) if stripes is None else stripes
    shape = mean_I.shape[-2:]
    acc = {i: (np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=int), np.zeros(mean_I.shape, dtype=bool))
           for i in stripes}
    for k, phi in enumerate(phis):
        hits = rays.cast(float(phi))
        for i, (s_I, s_c, count, admitted) in acc.items():
            m = stripe_roi_mask(hits, scene, i)
            if not m.any():
                continue
            admitted[k] = m
            comp = hits.range[m] ** 2 / (scene.stripes[i].reflectance * hits.cos_incidence[m])
            s_I[m] += mean_I[k][m]
            s_c[m] += mean_I[k][m] * comp
            count[m] += 1
    out = []
    for i, (s_I, s_c, count, admitted) in acc.items():
        with np.errstate(invalid="ignore", divide="ignore"):
            intensity = np.where(count > 0, s_I / count, np.nan)
            compensated = np.where(count > 0, s_c / count, np.nan)
        out.append(StripeProfile(i, scene.stripes[i].reflectance, intensity, compensated, count, admitted))
    return out


@dataclass
class BeamEstimate:
    normalized: np.ndarray  # (H, W), max 1, NaN where excluded
    absolute: np.ndarray  # (H, W) stripe-averaged compensated intensity
    per_stripe: dict  # reflectance -> (H, W) compensated profile
    residual: float  # max relative disagreement between stripes
    peak: float  # max of the absolute profile
    excluded: list  # directions without any usable stripe sample

    def ratio(self, baseline: "BeamEstimate", K=None, K_base=None) -> np.ndarray:
        """Per-direction ratio of the absolute profile to a baseline.

        With both intrinsics given, the baseline is resampled (bilinear) at
        the directions the current pixels look into, so intrinsic drift does
        not leak into the ratio; otherwise pixels are compared one to one.
        """
        base = baseline.absolute
        if K is not None and K_base is not None and K != K_base:
            h, w = self.absolute.shape
            vv, uu = np.mgrid[0:h, 0:w].astype(float)
            ub, vb = project_vectors(unproject_vectors(uu, vv, K), K_base)
            base = ndimage.map_coordinates(base, [vb, ub], order=1, mode="constant", cval=np.nan)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.absolute / base


def beam_profile(profiles: list[StripeProfile], exclude: np.ndarray | None = None) -> BeamEstimate:
    """Average the compensated stripe profiles and normalise the peak to 1.

    ``exclude`` masks directions (e.g. dead pixels) that must not enter the
    estimate or its normalisation.
    """
    if not profiles:
        raise ValueError("beam profile needs at least one stripe profile")
    stack = np.stack([p.compensated for p in profiles])
    if exclude is not None:
        stack = np.where(exclude[None], np.nan, stack)
    present = np.isfinite(stack)
    n = present.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        absolute = np.where(n > 0, np.where(present, stack, 0.0).sum(axis=0) / np.maximum(n, 1), np.nan)
        dev = np.abs(stack - absolute[None]) / absolute[None]
    multi = n >= 2
    residual = float(np.nanmax(np.where(present & multi[None], dev, np.nan))) if multi.any() else 0.0
    finite = np.isfinite(absolute)
    peak = float(absolute[finite].max()) if finite.any() else float("nan")
    normalized = absolute / peak if finite.any() else absolute
    vs, us = np.nonzero(~finite)
    return BeamEstimate(
        normalized=normalized,
        absolute=absolute,
        per_stripe={p.reflectance: s for p, s in zip(profiles, stack)},
        residual=residual,
        peak=peak,
        excluded=sorted(zip(us.tolist(), vs.tolist())),
    )
