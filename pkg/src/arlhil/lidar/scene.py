"""Target chamber geometry: reflectance stripes and marker panels on a
cylindrical band around the stage axis, plus the ray caster."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, unproject_vectors

MISS = -1


@dataclass(frozen=True)
class Stripe:
    name: str
    reflectance: float
    az_lo_deg: float
    az_hi_deg: float

    @property
    def center_deg(self) -> float:
        return 0.5 * (self.az_lo_deg + self.az_hi_deg)

    def roi(self, fraction: float) -> tuple[float, float]:
        half = 0.5 * fraction * (self.az_hi_deg - self.az_lo_deg)
        return self.center_deg - half, self.center_deg + half


@dataclass(frozen=True)
class MarkerPanel:
    """Regular grid of circular markers, uniform in azimuth and height."""

    name: str
    az_lo_deg: float
    az_hi_deg: float
    marker_az0_deg: float
    marker_daz_deg: float
    n_columns: int
    marker_h0: float
    marker_dh: float
    n_rows: int
    marker_radius: float = 0.025
    rho_marker: float = 0.95
    rho_background: float = 0.05

    def marker_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Marker centre azimuths (deg) and heights (m), each shaped (rows, cols)."""
        az = self.marker_az0_deg + self.marker_daz_deg * np.arange(self.n_columns)
        h = self.marker_h0 + self.marker_dh * np.arange(self.n_rows)
        return np.meshgrid(az, h, indexing="xy")


@dataclass(frozen=True)
class TargetScene:
    radius: float = 1.1
    half_height: float = 0.35
    stripes: tuple[Stripe, ...] = field(default_factory=tuple)
    panels: tuple[MarkerPanel, ...] = field(default_factory=tuple)
    roi_fraction: float = 0.5

    def __post_init__(self):
        spans = sorted((s.az_lo_deg, s.az_hi_deg) for s in self.stripes)
        for (lo0, hi0), (lo1, _) in zip(spans, spans[1:]):
            if lo1 < hi0:
                raise ValueError("stripe extents overlap")
        for s in self.stripes:
            if not s.az_lo_deg < s.az_hi_deg:
                raise ValueError(f"stripe {s.name} has empty extent")

    @property
    def targets(self) -> list:
        return list(self.stripes) + list(self.panels)

    def stripe_by_reflectance(self, rho: float) -> int:
        for i, s in enumerate(self.stripes):
            if abs(s.reflectance - rho) < 1e-9:
                return i
        raise KeyError(f"no stripe with reflectance {rho}")

    def marker_points(self) -> np.ndarray:
        """World-frame marker centres (N, 3), panel by panel, row-major."""
        pts = []
        for p in self.panels:
            az, h = p.marker_angles()
            a = np.radians(az.ravel())
            pts.append(
                np.stack(
                    [self.radius * np.sin(a), -h.ravel(), self.radius * np.cos(a)],
                    axis=-1,
                )
            )
        return np.concatenate(pts) if pts else np.zeros((0, 3))

    def marker_index(self) -> list[tuple[int, int, int]]:
        """(panel, row, column) of every entry in :meth:`marker_points`."""
        out = []
        for pi, p in enumerate(self.panels):
            for r in range(p.n_rows):
                for c in range(p.n_columns):
                    out.append((pi, r, c))
        return out


def default_scene() -> TargetScene:
    stripes = (
        Stripe("rho18", 0.18, -4.5, -1.5),
        Stripe("rho50", 0.50, -1.5, 1.5),
        Stripe("rho80", 0.80, 1.5, 4.5),
    )
    heights = dict(marker_h0=-0.22, marker_dh=0.11, n_rows=5)
    panels = (
        MarkerPanel("intrinsic_left", -115.0, -10.0, -112.5, 5.0, 21, **heights),
        MarkerPanel("intrinsic_right", 10.0, 115.0, 12.5, 5.0, 21, **heights),
    )
    return TargetScene(radius=1.1, half_height=0.35, stripes=stripes, panels=panels)


@dataclass
class Hits:
    """Vectorised ray-cast result; ``range`` is NaN and ``target`` is MISS on misses."""

    range: np.ndarray
    reflectance: np.ndarray
    cos_incidence: np.ndarray
    target: np.ndarray
    on_marker: np.ndarray
    azimuth_deg: np.ndarray
    height: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.target != MISS


def rotate_to_world(vec: np.ndarray, phi_deg: float) -> np.ndarray:
    """Rotate sensor-frame vectors by the stage angle about the vertical axis."""
    p = math.radians(phi_deg)
    c, s = math.cos(p), math.sin(p)
    x, y, z = vec[..., 0], vec[..., 1], vec[..., 2]
    return np.stack([c * x + s * z, y, -s * x + c * z], axis=-1)


def rotate_to_sensor(vec: np.ndarray, phi_deg: float) -> np.ndarray:
    return rotate_to_world(vec, -phi_deg)


def _interval_table(scene: TargetScene):
    """Sorted azimuth boundaries and the target owning each interval between them."""
    spans = [(s.az_lo_deg, s.az_hi_deg, i) for i, s in enumerate(scene.stripes)]
    base = len(scene.stripes)
    spans += [(p.az_lo_deg, p.az_hi_deg, base + j) for j, p in enumerate(scene.panels)]
    edges = np.unique(np.array([x for lo, hi, _ in spans for x in (lo, hi)], dtype=float))
    owner = np.full(edges.size + 1, MISS, dtype=np.intp)
    mids = 0.5 * (edges[:-1] + edges[1:])
    # stripes take precedence over panels where extents overlap
    for lo, hi, idx in reversed(spans):
        sel = np.nonzero((mids >= lo) & (mids < hi))[0] + 1
        owner[sel] = idx
    return edges, owner


def _row_offsets(height: np.ndarray, p: MarkerPanel) -> np.ndarray:
    """Squared height offset of each point from its nearest marker row."""
    row = np.clip(np.rint((height - p.marker_h0) / p.marker_dh), 0, p.n_rows - 1)
    dh = height - (p.marker_h0 + row * p.marker_dh)
    return dh * dh


def _marker_halfwidth(dh2: np.ndarray, p: MarkerPanel, radius: float) -> np.ndarray:
    """Azimuthal half-width (deg) of the marker chord at a given row offset;
    negative where the point is above or below every marker."""
    with np.errstate(invalid="ignore"):
        hw = np.degrees(np.sqrt(p.marker_radius**2 - dh2) / radius)
    return np.where(dh2 <= p.marker_radius**2, hw, -1.0)


def _on_marker(az_deg: np.ndarray, halfwidth: np.ndarray, p: MarkerPanel) -> np.ndarray:
    col = np.clip(np.rint((az_deg - p.marker_az0_deg) / p.marker_daz_deg), 0, p.n_columns - 1)
    return np.abs(az_deg - (p.marker_az0_deg + col * p.marker_daz_deg)) <= halfwidth


def surface_lookup(az_deg: np.ndarray, height: np.ndarray, scene: TargetScene,
                   table=None, row_dh2=None):
    """Target index, reflectance and marker flag of band points ``(azimuth, height)``.

    ``table`` and ``row_dh2`` are optional precomputed results of
    ``_interval_table`` and ``_row_offsets`` (per panel).
    """
    edges, owner = _interval_table(scene) if table is None else table
    az_deg = np.asarray(az_deg, dtype=float)
    height = np.asarray(height, dtype=float)
    target = owner[np.searchsorted(edges, az_deg, side="right")]
    target = np.where(np.abs(height) <= scene.half_height, target, MISS)
    refl = np.array([s.reflectance for s in scene.stripes] + [p.rho_background for p in scene.panels] + [0.0])
    rho = np.array(refl[target], dtype=float)  # MISS (-1) picks the trailing 0.0
    on_marker = np.zeros(az_deg.shape, dtype=bool)
    base = len(scene.stripes)
    for j, p in enumerate(scene.panels):
        m = target == base + j
        if not m.any():
            continue
        dh2 = _row_offsets(height[m], p) if row_dh2 is None else row_dh2[j][m]
        mk = _on_marker(az_deg[m], _marker_halfwidth(dh2, p, scene.radius), p)
        rho[m] = np.where(mk, p.rho_marker, p.rho_background)
        on_marker[m] = mk
    return target, rho, on_marker


def wrap_deg(a):
    a = np.asarray(a, dtype=float)
    if a.size and -180.0 <= a.min() and a.max() < 180.0:
        return a
    return (a + 180.0) % 360.0 - 180.0


def cast_world(dirs: np.ndarray, scene: TargetScene) -> Hits:
    """Intersect world-frame unit rays from the stage axis with the target band."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    horiz = np.hypot(x, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(horiz > 0, scene.radius / np.where(horiz > 0, horiz, 1.0), np.inf)
    height = -y * t
    az = np.degrees(np.arctan2(x, z))
    return _hits(az, height, t, horiz, scene)


def _hits(az, height, t, horiz, scene: TargetScene, table=None, row_dh2=None) -> Hits:
    target, rho, on_marker = surface_lookup(az, height, scene, table, row_dh2)
    hit = target != MISS
    # the cylinder normal is horizontal and radial: cos(incidence) = |horizontal part|
    return Hits(
        range=np.where(hit, t, np.nan),
        reflectance=rho,
        cos_incidence=np.where(hit, horiz, np.nan),
        target=target,
        on_marker=on_marker,
        azimuth_deg=az,
        height=np.where(hit, height, np.nan),
    )


class BandGeometry:
    """Stage-angle independent part of casting a fixed bundle of sensor rays.

    Rotating the stage only shifts the world azimuth of every ray, so range,
    height and incidence are computed once per bundle.
    """

    def __init__(self, dirs: np.ndarray, scene: TargetScene):
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        self.horiz = np.hypot(x, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.t = np.where(self.horiz > 0, scene.radius / np.where(self.horiz > 0, self.horiz, 1.0), np.inf)
        self.height = -y * self.t
        self.az = np.degrees(np.arctan2(x, z))
        self.scene = scene
        self._table = _interval_table(scene)
        self._row_dh2 = [_row_offsets(self.height, p) for p in scene.panels]
        # flat views for the reflectance-only fast path
        self._az_flat = self.az.ravel()
        self._off_band = np.flatnonzero(np.abs(self.height.ravel()) > scene.half_height)
        self._refl = np.array([s.reflectance for s in scene.stripes]
                              + [p.rho_background for p in scene.panels] + [0.0])
        # only rays close to a marker row can ever land on a marker
        self._candidates = []
        for p, dh2 in zip(scene.panels, self._row_dh2):
            idx = np.flatnonzero(dh2.ravel() <= p.marker_radius**2)
            self._candidates.append((idx, _marker_halfwidth(dh2.ravel()[idx], p, scene.radius)))

    def cast(self, phi_deg: float) -> Hits:
        return _hits(wrap_deg(self.az + phi_deg), self.height, self.t, self.horiz, self.scene,
                     self._table, self._row_dh2)

    def reflectance(self, phi_deg: float) -> tuple[np.ndarray, np.ndarray]:
        """Target index and reflectance of every ray at stage angle ``phi_deg``.

        Same result as :meth:`cast` restricted to those two fields, without
        building the full hit record.
        """
        scene = self.scene
        edges, owner = self._table
        az = wrap_deg(self._az_flat + phi_deg)
        target = owner[np.searchsorted(edges, az, side="right")]
        target[self._off_band] = MISS
        rho = self._refl[target]
        base = len(scene.stripes)
        for j, (p, (idx, hw)) in enumerate(zip(scene.panels, self._candidates)):
            sel = target[idx] == base + j
            if not sel.any():
                continue
            idx = idx[sel]
            rho[idx[_on_marker(az[idx], hw[sel], p)]] = p.rho_marker
        shape = self.az.shape
        return target.reshape(shape), rho.reshape(shape)


def raycast(u, v, phi_deg: float, scene: TargetScene, K: Intrinsics) -> Hits:
    """Cast the rays through pixel coordinates ``(u, v)`` at stage angle ``phi_deg``."""
    dirs = unproject_vectors(u, v, K)
    return cast_world(rotate_to_world(dirs, phi_deg), scene)


def stripe_roi_mask(hits: Hits, scene: TargetScene, stripe_index: int) -> np.ndarray:
    """Rays landing inside the world-frame ROI band of a stripe."""
    lo, hi = scene.stripes[stripe_index].roi(scene.roi_fraction)
    return (hits.target == stripe_index) & (hits.azimuth_deg >= lo) & (hits.azimuth_deg <= hi)
