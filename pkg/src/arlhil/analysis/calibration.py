"""Intrinsic recalibration from the marker panels.

Markers are detected in temporal-mean images of the poses where the panels
fill the field of view. Each detection is matched to a marker of the
declared layout, whose sensor-frame position follows exactly from the
reported stage angle, and the intrinsics are fitted to the resulting
2D-3D correspondences by minimising the reprojection error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from ..lidar.camera import PARAM_NAMES, Intrinsics, project_vectors, unproject_vectors, vectors_to_angles
from ..lidar.scene import TargetScene

CALIB_RANGES = ((-60.0, -30.0), (30.0, 60.0))
MIN_CORRESPONDENCES = 20
MAX_ITERATIONS = 100
BACKGROUND_WINDOW = (5, 7)  # rows, columns; wider than a marker, narrower than its spacing
SEED_FRACTION = 0.3  # of the local peak contrast
SEED_CONTRAST = 3.0  # minimum (I - background) / background
RING_FRACTION = 0.15  # max contrast on the window edge relative to the blob
MAX_BLOB = 5  # px; larger components hold merged markers
MATCH_TOLERANCE = 0.4  # of the grid spacing


class CalibrationError(RuntimeError):
    pass


class CalibrationInsufficient(CalibrationError):
    """Too few marker correspondences for a fit."""


class CalibrationNotConverged(CalibrationError):
    def __init__(self, message: str, result: "Calibration"):
        super().__init__(message)
        self.result = result


@dataclass
class Calibration:
    K: Intrinsics
    rms: float  # px
    n_correspondences: int
    n_poses: int
    iterations: int
    converged: bool
    residuals: np.ndarray = field(repr=False, default=None)


def calibration_poses(phis) -> np.ndarray:
    phis = np.asarray(phis, dtype=float)
    sel = np.zeros(phis.shape, dtype=bool)
    for lo, hi in CALIB_RANGES:
        sel |= (phis >= lo) & (phis <= hi)
    return np.flatnonzero(sel)


def detect_markers(image: np.ndarray) -> list[tuple[float, float]]:
    """Contrast-weighted centroids ``(u, v)`` of compact bright blobs."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    bg = ndimage.median_filter(img, size=BACKGROUND_WINDOW, mode="nearest")
    contrast = img - bg
    peak = ndimage.maximum_filter(contrast, size=BACKGROUND_WINDOW, mode="nearest")
    seeds = (contrast > SEED_FRACTION * peak) & (contrast > SEED_CONTRAST * bg) & (bg > 0)
    labels, n = ndimage.label(seeds)
    out = []
    for sl in ndimage.find_objects(labels):
        rs, cs = sl
        if rs.stop - rs.start > MAX_BLOB or cs.stop - cs.start > MAX_BLOB:
            continue
        r0, r1 = rs.start - 1, rs.stop + 1
        c0, c1 = cs.start - 1, cs.stop + 1
        if r0 < 0 or c0 < 0 or r1 > h or c1 > w:
            continue  # touches the border, footprint incomplete
        win = contrast[r0:r1, c0:c1]
        ring = np.concatenate([win[0], win[-1], win[1:-1, 0], win[1:-1, -1]])
        if ring.max() > RING_FRACTION * win.max():
            continue  # not isolated: cut by the border or touching a neighbour
        # flat-fielding by the local background removes the beam and
        # range falloff across the blob, which would otherwise pull the
        # centroid towards the image centre
        wgt = contrast[r0:r1, c0:c1] / bg[r0:r1, c0:c1]
        tot = wgt.sum()
        if tot <= 0:
            continue
        vv, uu = np.mgrid[r0:r1, c0:c1]
        out.append((float((wgt * uu).sum() / tot), float((wgt * vv).sum() / tot)))
    return out


def match_markers(dets: list[tuple[float, float]], phi_deg: float, K: Intrinsics,
                  scene: TargetScene) -> list[tuple[int, float, float]]:
    """Assign detections to marker indices (into ``scene.marker_points()``).

    Each detection is mapped to world azimuth and height on the cylinder
    using ``K`` and the stage angle, then snapped to the marker grid. Matches
    must fall within a fraction of the grid spacing, be unique, and keep the
    row and column ordering of the image.
    """
    if not dets:
        return []
    uv = np.array(dets)
    d = unproject_vectors(uv[:, 0], uv[:, 1], K)
    az, el = vectors_to_angles(d)
    az_w = np.degrees(az) + phi_deg
    height = scene.radius * np.tan(el)
    base = 0
    matches = {}
    for p in scene.panels:
        col = np.rint((az_w - p.marker_az0_deg) / p.marker_daz_deg)
        row = np.rint((height - p.marker_h0) / p.marker_dh)
        ok = (col >= 0) & (col < p.n_columns) & (row >= 0) & (row < p.n_rows)
        ok &= np.abs(az_w - (p.marker_az0_deg + col * p.marker_daz_deg)) <= MATCH_TOLERANCE * p.marker_daz_deg
        ok &= np.abs(height - (p.marker_h0 + row * p.marker_dh)) <= MATCH_TOLERANCE * p.marker_dh
        for i in np.flatnonzero(ok):
            m = base + int(row[i]) * p.n_columns + int(col[i])
            matches.setdefault(m, []).append(i)
        base += p.n_rows * p.n_columns
    pairs = [(m, idx[0]) for m, idx in sorted(matches.items()) if len(idx) == 1]
    if not _ordered(pairs, uv, scene):
        return []
    return [(m, float(uv[i, 0]), float(uv[i, 1])) for m, i in pairs]


def _ordered(pairs, uv, scene: TargetScene) -> bool:
    """Columns must increase with u and rows (upwards) with decreasing v."""
    index = scene.marker_index()
    by_row, by_col = {}, {}
    for m, i in pairs:
        panel, r, c = index[m]
        by_row.setdefault((panel, r), []).append((c, uv[i, 0]))
        by_col.setdefault((panel, c), []).append((r, -uv[i, 1]))
    for seq in list(by_row.values()) + list(by_col.values()):
        seq.sort()
        vals = [x for _, x in seq]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            return False
    return True


def _to_sensor(points: np.ndarray, phis_deg: np.ndarray) -> np.ndarray:
    """World points into the sensor frame, one stage angle per point."""
    p = np.radians(phis_deg)
    c, s = np.cos(p), np.sin(p)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return np.stack([c * x - s * z, y, s * x + c * z], axis=-1)


def _residuals(x, dirs, obs):
    K = Intrinsics.from_array(x)
    u, v = project_vectors(dirs, K)
    return np.concatenate([u - obs[:, 0], v - obs[:, 1]])


def fit_intrinsics(dirs: np.ndarray, obs: np.ndarray, K0: Intrinsics) -> tuple[Intrinsics, object]:
    """Levenberg-Marquardt fit of (fx, fy, cx, cy, k1) with a numeric Jacobian."""
    res = least_squares(_residuals, K0.as_array(), args=(dirs, obs), method="lm",
                        max_nfev=MAX_ITERATIONS * (len(PARAM_NAMES) + 1), x_scale="jac")
    return Intrinsics.from_array(res.x), res


def recalibrate(mean_I: np.ndarray, phis, scene: TargetScene, K_init: Intrinsics,
                rounds: int = 2) -> Calibration:
    """Fit intrinsics to the marker detections of the calibration poses.

    ``mean_I`` is the per-pose temporal-mean intensity ``(P, H, W)`` and
    ``phis`` the reported stage angles. Matching is repeated with the fitted
    intrinsics for ``rounds`` passes.
    """
    phis = np.asarray(phis, dtype=float)
    poses = calibration_poses(phis)
    dets = {int(k): detect_markers(mean_I[k]) for k in poses}
    points = scene.marker_points()
    K = K_init
    cal = None
    for _ in range(max(1, rounds)):
        idx, ang, obs = [], [], []
        for k in poses:
            for m, u, v in match_markers(dets[int(k)], float(phis[k]), K, scene):
                idx.append(m)
                ang.append(float(phis[k]))
                obs.append((u, v))
        if len(obs) < MIN_CORRESPONDENCES:
            raise CalibrationInsufficient(
                f"{len(obs)} marker correspondences, need at least {MIN_CORRESPONDENCES}")
        dirs = _to_sensor(points[idx], np.array(ang))
        obs = np.array(obs)
        K_fit, res = fit_intrinsics(dirs, obs, K_init)
        r = res.fun
        cal = Calibration(
            K=K_fit,
            rms=float(np.sqrt(np.mean(r * r))),
            n_correspondences=len(obs),
            n_poses=len(set(ang)),
            iterations=int(res.nfev),
            converged=bool(res.status > 0),
            residuals=r,
        )
        if not cal.converged:
            raise CalibrationNotConverged(
                f"no convergence after {res.nfev} evaluations, rms {cal.rms:.4f} px", cal)
        K = K_fit
    return cal


def delta_K(K: Intrinsics, K_base: Intrinsics) -> dict:
    """Relative deviation per parameter; k1 as an absolute difference."""
    out = {}
    for name in PARAM_NAMES:
        a, b = getattr(K, name), getattr(K_base, name)
        if name == "k1":
            out[name] = {"value": a - b, "kind": "absolute"}
        else:
            out[name] = {"value": (a - b) / b, "kind": "relative"}
    return out
