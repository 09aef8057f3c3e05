"""Equidistant fisheye intrinsics for the flash LiDAR imager.

Pixel convention: ``u`` runs left to right over columns, ``v`` top to bottom
over rows, pixel centres sit on integer coordinates and the image spans
``[-0.5, W - 0.5] x [-0.5, H - 0.5]``.  Sensor frame: x right, y down,
z along the optical axis.  Azimuth is positive towards +x, elevation is
positive upwards (towards -y).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np


class ProjectionDomainError(ValueError):
    """Direction lies outside the validity of the projection model."""


@dataclass(frozen=True)
class DutSpec:
    width: int = 128
    height: int = 32
    hfov_deg: float = 120.0
    vfov_deg: float = 27.5
    wavelength_nm: float = 1064.0
    d_near: float = 0.5
    d_far: float = 25.0
    max_frame_rate_hz: float = 25.0
    intensity_bits: int = 12

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not self.d_near < self.d_far:
            raise ValueError("d_near must be smaller than d_far")
        if self.intensity_bits < 1 or self.intensity_bits > 16:
            raise ValueError("intensity depth must fit in 16 bits")

    @property
    def max_dn(self) -> int:
        return (1 << self.intensity_bits) - 1

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(H, W)`` of one detection image."""
        return (self.height, self.width)

    def nominal_intrinsics(self) -> "Intrinsics":
        """Intrinsics whose focal lengths make the image span exactly the FOV."""
        fx = (self.width / 2.0) / math.radians(self.hfov_deg / 2.0)
        fy = (self.height / 2.0) / math.radians(self.vfov_deg / 2.0)
        return Intrinsics(
            fx=fx,
            fy=fy,
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
            k1=0.0,
        )


PARAM_NAMES = ("fx", "fy", "cx", "cy", "k1")


@dataclass(frozen=True)
class Intrinsics:
    """Equidistant model ``r_d = theta * (1 + k1 * theta**2)`` scaled by (fx, fy)."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not all(math.isfinite(x) for x in self.as_array()):
            raise ValueError("intrinsics must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.k1], dtype=float)

    @classmethod
    def from_array(cls, values) -> "Intrinsics":
        fx, fy, cx, cy, k1 = (float(x) for x in values)
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, k1=k1)

    def to_dict(self) -> dict:
        return asdict(self)

    def perturbed(self, delta: dict[str, float]) -> "Intrinsics":
        return replace(self, **{k: getattr(self, k) + v for k, v in delta.items()})

    def check(self, spec: DutSpec, max_angle: float | None = None) -> None:
        """Raise if the principal point is outside the image or the
        distortion is not monotone up to ``max_angle`` (default: half HFOV)."""
        if not (-0.5 <= self.cx <= spec.width - 0.5 and -0.5 <= self.cy <= spec.height - 0.5):
            raise ValueError("principal point outside the image")
        theta = math.radians(spec.hfov_deg / 2.0) if max_angle is None else max_angle
        if 1.0 + 3.0 * self.k1 * theta * theta <= 0.0:
            raise ValueError("distortion not monotone over the field of view")


def angles_to_vectors(azimuth, elevation) -> np.ndarray:
    """Unit direction vectors (..., 3) for azimuth/elevation in radians."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    ce = np.cos(el)
    return np.stack([ce * np.sin(az), -np.sin(el), ce * np.cos(az)], axis=-1)


def vectors_to_angles(vec) -> tuple[np.ndarray, np.ndarray]:
    vec = np.asarray(vec, dtype=float)
    x, y, z = vec[..., 0], vec[..., 1], vec[..., 2]
    az = np.arctan2(x, z)
    el = np.arctan2(-y, np.hypot(x, z))
    return az, el


def project_vectors(vec, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project direction vectors to continuous pixel coordinates."""
    vec = np.asarray(vec, dtype=float)
    x, y, z = vec[..., 0], vec[..., 1], vec[..., 2]
    rho = np.hypot(x, y)
    theta = np.arctan2(rho, z)
    if np.any(theta >= math.pi / 2):
        raise ProjectionDomainError("off-axis angle must stay below 90 degrees")
    rd = theta * (1.0 + K.k1 * theta * theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rho > 0, rd / np.where(rho > 0, rho, 1.0), 0.0)
    return K.cx + K.fx * scale * x, K.cy + K.fy * scale * y


def project(azimuth, elevation, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Map sensor-frame azimuth/elevation (radians) to pixel ``(u, v)``."""
    return project_vectors(angles_to_vectors(azimuth, elevation), K)


def _undistort(rd: np.ndarray, k1: float, iterations: int = 30) -> np.ndarray:
    # Newton on theta + k1*theta^3 = rd, starting from the undistorted guess
    theta = rd.copy()
    if k1 == 0.0:
        return theta
    for _ in range(iterations):
        f = theta * (1.0 + k1 * theta * theta) - rd
        step = f / (1.0 + 3.0 * k1 * theta * theta)
        theta = theta - step
        if np.all(np.abs(step) < 1e-15):
            break
    return theta


def unproject_vectors(u, v, K: Intrinsics) -> np.ndarray:
    """Unit ray directions (..., 3) for continuous pixel coordinates."""
    mx = (np.asarray(u, dtype=float) - K.cx) / K.fx
    my = (np.asarray(v, dtype=float) - K.cy) / K.fy
    rd = np.hypot(mx, my)
    theta = _undistort(rd, K.k1)
    if np.any(theta >= math.pi / 2):
        raise ProjectionDomainError("pixel maps beyond the model validity")
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(rd > 0, np.sin(theta) / np.where(rd > 0, rd, 1.0), 1.0)
    return np.stack([s * mx, s * my, np.cos(theta)], axis=-1)


def unproject(u, v, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`project`: pixel to azimuth/elevation in radians."""
    return vectors_to_angles(unproject_vectors(u, v, K))


def pixel_grid(spec: DutSpec, supersample: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Pixel sample coordinates shaped ``(H, W, s*s)``.

    With ``supersample > 1`` each pixel footprint is covered by an s x s
    grid of sub-samples at the sub-cell centres.
    """
    s = int(supersample)
    offs = (np.arange(s) + 0.5) / s - 0.5
    du, dv = np.meshgrid(offs, offs, indexing="xy")
    vv, uu = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    u = uu[..., None] + du.ravel()[None, None, :]
    v = vv[..., None] + dv.ravel()[None, None, :]
    return u, v
