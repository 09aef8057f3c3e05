"""Frame formation of the simulated flash LiDAR.

A pose is rendered once (ray casting over supersampled pixel footprints and
radiometry); any number of noisy frames are then drawn from it, either by
synthesising and detecting full return waveforms or, in parametric mode,
from closed-form detection statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.special import ndtri

from .aging import AgingState
from .camera import DutSpec, Intrinsics, pixel_grid, unproject_vectors, vectors_to_angles
from .scene import MISS, BandGeometry, TargetScene
from .waveform import SPEED_OF_LIGHT, WaveformParams, detect_peaks, pulse_train

# Detection statistics of the waveform path (Gaussian pulse, FWHM/4
# sampling), fitted once by Monte Carlo over 2e4 pulses per operating point
# and cross-checked in tests/test_sensor.py: std of the detected amplitude per
# unit peak noise, and std of the detected ToF in pulse sigmas per unit
# noise-to-amplitude ratio.
PARAMETRIC_AMP_GAIN = 0.95
PARAMETRIC_TOF_GAIN = 1.83


@dataclass(frozen=True)
class BeamProfile:
    kind: str = "gaussian"  # "gaussian" | "uniform"
    sigma_az_deg: float = 45.0
    sigma_el_deg: float = 25.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown beam kind {self.kind!r}")
        if self.sigma_az_deg <= 0 or self.sigma_el_deg <= 0:
            raise ValueError("beam widths must be positive")

    def __call__(self, az_rad, el_rad, widening: float = 1.0) -> np.ndarray:
        az = np.asarray(az_rad, dtype=float)
        if self.kind == "uniform":
            return np.ones_like(az)
        el = np.asarray(el_rad, dtype=float)
        sa = math.radians(self.sigma_az_deg) * widening
        se = math.radians(self.sigma_el_deg) * widening
        return np.exp(-0.5 * ((az / sa) ** 2 + (el / se) ** 2))


@dataclass(frozen=True)
class SensorParams:
    mode: str = "waveform"  # "waveform" | "parametric"
    gain: float = 3800.0  # DN * m^2 for unit reflectance, power and beam
    beam: BeamProfile = field(default_factory=BeamProfile)
    sigma_dark: float = 4.0  # DN at T_ToF = 25 C
    dark_tempco: float = 0.015  # 1/K, exponential growth of the dark noise
    shot_coeff: float = 0.35  # DN^0.5
    noise: bool = True
    supersample: int = 4
    waveform: WaveformParams = field(default_factory=WaveformParams)
    dT_tof: float = 8.0

    def __post_init__(self):
        if self.mode not in ("waveform", "parametric"):
            raise ValueError(f"unknown sensor mode {self.mode!r}")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")
        if self.gain <= 0 or self.sigma_dark <= 0:
            raise ValueError("gain and dark noise must be positive")

    def dark_noise(self, housing_c: float) -> float:
        """Dark noise std (DN) at the ToF die temperature of a housing temperature."""
        return self.sigma_dark * math.exp(self.dark_tempco * (housing_c + self.dT_tof - 25.0))


@dataclass
class FrameTruth:
    """Simulation-only ground truth; never serialised into detection channels."""

    phi_deg: float
    range: np.ndarray
    target: np.ndarray
    amplitude: np.ndarray


@dataclass
class Frame:
    KIND: ClassVar[str] = "frame"
    dut_id: int
    seq: int
    t: float
    I: np.ndarray  # (H, W) uint16
    D: np.ndarray  # (H, W) float32, NaN for no return
    I2: np.ndarray | None = None
    D2: np.ndarray | None = None
    truth: FrameTruth | None = None


class SensorGeometry:
    """Ray bundle of one set of intrinsics against one scene.

    Everything that does not depend on the stage angle (sub-ray directions,
    ranges, incidence, beam pattern) is computed here once.
    """

    def __init__(self, spec: DutSpec, K: Intrinsics, supersample: int, scene: TargetScene):
        self.spec = spec
        self.K = K
        self.scene = scene
        u, v = pixel_grid(spec, supersample)
        dirs = unproject_vectors(u, v, K)  # (H, W, S, 3)
        self.az, self.el = vectors_to_angles(dirs)
        self.band = BandGeometry(dirs, scene)
        vv, uu = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
        self.centre = BandGeometry(unproject_vectors(uu, vv, K), scene)
        with np.errstate(divide="ignore"):
            self.spread = self.band.horiz / self.band.t**2  # cos(incidence) / range^2
        self._beam_cache: dict[float, np.ndarray] = {}

    def beam(self, profile: BeamProfile, widening: float) -> np.ndarray:
        key = (profile, widening)
        if key not in self._beam_cache:
            self._beam_cache[key] = profile(self.az, self.el, widening) * self.spread
        return self._beam_cache[key]


@dataclass
class PoseRender:
    """Noise-free expectation of one pose."""

    phi_deg: float
    amplitude: np.ndarray  # (H, W) expected peak amplitude, DN
    range: np.ndarray  # (H, W) amplitude-weighted range incl. bias, NaN on miss
    sub_amplitude: np.ndarray  # (H, W, S) per sub-ray pulse amplitude
    sub_hit: np.ndarray  # (H, W, S) bool
    sub_t: np.ndarray  # (H, W, S) range of each sub-ray to the target band
    range_bias: float
    truth_range: np.ndarray
    truth_target: np.ndarray
    dead: np.ndarray  # (H, W) bool

    @property
    def sub_range(self) -> np.ndarray:
        """Per sub-ray range incl. bias, NaN on miss."""
        return np.where(self.sub_hit, self.sub_t + self.range_bias, np.nan)


def render_pose(phi_deg: float, geometry: SensorGeometry, aging: AgingState,
                params: SensorParams) -> PoseRender:
    target, rho = geometry.band.reflectance(phi_deg)
    centre = geometry.centre.cast(phi_deg)
    s = rho.shape[-1]
    a_sub = (params.gain * aging.eta_P / s) * geometry.beam(params.beam, aging.widening) * rho
    amp = a_sub.sum(axis=-1)
    # a_sub vanishes on misses, and every ray inside the field of view has a finite band range
    with np.errstate(invalid="ignore", divide="ignore"):
        rng = np.where(amp > 0, (a_sub * geometry.band.t).sum(axis=-1) / amp, np.nan)
    dead = np.zeros(geometry.spec.shape, dtype=bool)
    for u, v in aging.dead_pixels:
        dead[v, u] = True
    return PoseRender(
        phi_deg=phi_deg,
        amplitude=amp,
        range=rng + aging.range_bias,
        sub_amplitude=a_sub,
        sub_hit=target != MISS,
        sub_t=geometry.band.t,
        range_bias=aging.range_bias,
        truth_range=centre.range,
        truth_target=centre.target,
        dead=dead,
    )


def _quantize(x: np.ndarray, max_dn: int) -> np.ndarray:
    return np.clip(np.rint(x), 0, max_dn).astype(np.uint16)


def _frames_waveform(pose: PoseRender, n: int, sigma_dark: float, params: SensorParams,
                     rng: np.random.Generator):
    """Per-frame (ToF, amplitude) of both returns, shaped (n, pixels, 2), plus
    the series maximum used as no-return intensity."""
    wp = params.waveform
    h, w, s = pose.sub_amplitude.shape
    clean = pulse_train(pose.sub_amplitude.reshape(h * w, s),
                        2.0 * pose.sub_range.reshape(h * w, s) / SPEED_OF_LIGHT, wp)
    noise_sd = np.sqrt(sigma_dark**2 + params.shot_coeff**2 * np.maximum(clean, 0.0))
    thr = wp.threshold_sigmas * sigma_dark
    t = np.empty((n, h * w, 2))
    a = np.empty((n, h * w, 2))
    floor = np.empty((n, h * w))
    for k in range(n):
        series = clean + noise_sd * rng.standard_normal(clean.shape) if params.noise else clean
        t[k], a[k] = detect_peaks(series, thr, wp, max_returns=2)
        floor[k] = series.max(axis=-1)
    return t, a, floor


def _frames_parametric(pose: PoseRender, n: int, sigma_dark: float, params: SensorParams,
                       rng: np.random.Generator):
    """First-return statistics drawn in closed form; the second return of a
    single-surface pixel is always empty."""
    wp = params.waveform
    amp = pose.amplitude.ravel()
    npix = amp.size
    thr = wp.threshold_sigmas * sigma_dark
    tof0 = 2.0 * pose.range.ravel() / SPEED_OF_LIGHT
    if params.noise:
        sig_n = np.sqrt(sigma_dark**2 + params.shot_coeff**2 * amp)
        with np.errstate(divide="ignore", invalid="ignore"):
            sig_t = PARAMETRIC_TOF_GAIN * wp.sigma * sig_n / np.where(amp > 0, amp, 1.0)
        z = rng.standard_normal((2, n, npix))
        a_det = amp + (PARAMETRIC_AMP_GAIN * sig_n) * z[0]
        tof = tof0 + sig_t * z[1]
    else:
        a_det = np.broadcast_to(amp, (n, npix))
        tof = np.broadcast_to(tof0, (n, npix))
    found = (a_det > thr) & (amp > 0) & np.isfinite(tof0)
    floor = np.maximum(a_det, 0.0)
    if params.noise:
        miss = ~found
        n_miss = int(np.count_nonzero(miss))
        if n_miss:
            # no-return intensity: maximum of n_samples dark-noise samples
            u = rng.random(n_miss)
            dark_max = sigma_dark * ndtri(np.maximum(u, 1e-300) ** (1.0 / wp.n_samples))
            floor[miss] = np.maximum(floor[miss], dark_max)
    tof = np.where(found, tof, np.nan)
    return tof, a_det, None, None, floor


def _split_waveform(t, a, floor):
    return t[..., 0], a[..., 0], t[..., 1], a[..., 1], floor


def capture_frames(pose: PoseRender, n: int, housing_c: float, params: SensorParams,
                   spec: DutSpec, seed, *, dut_id: int = 0, seq0: int = 0,
                   t0: float = 0.0, period: float | None = None) -> list[Frame]:
    """Draw ``n`` consecutive frames from a rendered pose.

    ``seed`` identifies the (pose, DUT) burst; the noise therefore depends
    only on the identity of the burst, not on the order bursts are drawn in.
    """
    sigma_dark = params.dark_noise(housing_c)
    period = 1.0 / spec.max_frame_rate_hz if period is None else period
    rng = np.random.default_rng(seed)
    if params.mode == "waveform":
        t1, a1, t2, a2, floor = _split_waveform(*_frames_waveform(pose, n, sigma_dark, params, rng))
    else:
        t1, a1, t2, a2, floor = _frames_parametric(pose, n, sigma_dark, params, rng)

    shape = (n,) + spec.shape

    def distance(t):
        d = SPEED_OF_LIGHT * t / 2.0
        with np.errstate(invalid="ignore"):
            d[(d < spec.d_near) | (d > spec.d_far)] = np.nan
        return d

    d1 = distance(t1)
    got = np.isfinite(d1)
    I = _quantize(np.where(got, a1, floor), spec.max_dn).reshape(shape)
    D = d1.astype(np.float32).reshape(shape)
    if t2 is None:
        I2 = np.zeros(shape, dtype=np.uint16)
        D2 = np.full(shape, np.nan, dtype=np.float32)
    else:
        d2 = distance(t2)
        I2 = _quantize(np.where(np.isfinite(d2), a2, 0.0), spec.max_dn).reshape(shape)
        D2 = d2.astype(np.float32).reshape(shape)
    if pose.dead.any():
        for arr, fill in ((I, 0), (D, np.nan), (I2, 0), (D2, np.nan)):
            arr[:, pose.dead] = fill

    truth = FrameTruth(pose.phi_deg, pose.truth_range, pose.truth_target, pose.amplitude)
    return [
        Frame(dut_id=dut_id, seq=seq0 + k, t=t0 + k * period, I=I[k], D=D[k], I2=I2[k], D2=D2[k], truth=truth)
        for k in range(n)
    ]


def capture_frame(phi_deg: float, scene: TargetScene, K: Intrinsics, aging: AgingState,
                  housing_c: float, seed, params: SensorParams = SensorParams(),
                  spec: DutSpec = DutSpec(), *, dut_id: int = 0, seq: int = 0, t: float = 0.0) -> Frame:
    """Single frame at stage angle ``phi_deg`` (renders the pose from scratch)."""
    geom = SensorGeometry(spec, K, params.supersample, scene)
    pose = render_pose(phi_deg, geom, aging, params)
    return capture_frames(pose, 1, housing_c, params, spec, seed, dut_id=dut_id, seq0=seq, t0=t)[0]


def burst_seed(root: int, *counters: int) -> np.random.SeedSequence:
    """Counter-based seed for one capture burst."""
    return np.random.SeedSequence([int(root)] + [int(c) for c in counters])
