"""Ground truth recomputed from the reported stage angle and the declared scene."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from ..lidar.camera import Intrinsics, pixel_grid, unproject_vectors
from ..lidar.scene import BandGeometry, Hits, TargetScene


class PixelRays:
    """Rays of every pixel under an intrinsics estimate.

    ``cast`` uses the pixel centre ray. ``distance`` averages the range over
    an ``s x s`` grid of footprint rays, weighted by the radiometric factor
    ``rho * cos(incidence) / range^2`` of the declared scene, so pixels whose
    footprint straddles a marker edge get the range the mixed return actually
    comes from.
    """

    def __init__(self, shape: tuple[int, int], K: Intrinsics, scene: TargetScene, footprint: int = 4):
        h, w = shape
        vv, uu = np.mgrid[0:h, 0:w].astype(float)
        self.shape = (h, w)
        self.K = K
        self.scene = scene
        self.band = BandGeometry(unproject_vectors(uu, vv, K), scene)
        su, sv = pixel_grid(SimpleNamespace(height=h, width=w), footprint)
        self.sub = BandGeometry(unproject_vectors(su, sv, K), scene)
        with np.errstate(divide="ignore"):
            self._spread = self.sub.horiz / self.sub.t**2
        self._spread_t = self._spread * self.sub.t

    def cast(self, phi_deg: float) -> Hits:
        return self.band.cast(phi_deg)

    def distance(self, phi_deg: float) -> np.ndarray:
        """Expected range per pixel at stage angle ``phi_deg``; NaN without target coverage."""
        _, rho = self.sub.reflectance(phi_deg)
        w = (rho * self._spread).sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(w > 0, (rho * self._spread_t).sum(axis=-1) / w, np.nan)

