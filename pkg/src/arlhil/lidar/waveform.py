"""Return-pulse synthesis, first-two-peak detection and ToF conversion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def tof_to_distance(t):
    """Distance in metres for a round-trip time of flight ``t`` in seconds."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("time of flight must be non-negative")
    d = SPEED_OF_LIGHT * arr / 2.0
    return float(d) if np.ndim(d) == 0 else d


def distance_to_tof(d):
    return 2.0 * np.asarray(d, dtype=float) / SPEED_OF_LIGHT


def gate_range(d, d_near: float, d_far: float):
    """Replace distances outside the measurement range by the NaN sentinel."""
    d = np.asarray(d, dtype=float)
    return np.where((d >= d_near) & (d <= d_far), d, np.nan)


@dataclass(frozen=True)
class WaveformParams:
    sample_period: float = 1e-9
    fwhm: float = 4e-9
    d_far: float = 25.0
    margin: float = 10e-9
    threshold_sigmas: float = 5.0

    @property
    def sigma(self) -> float:
        return self.fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))

    @property
    def n_samples(self) -> int:
        span = 2.0 * self.d_far / SPEED_OF_LIGHT + self.margin
        return int(math.ceil(span / self.sample_period)) + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_period

    @property
    def search_window(self) -> int:
        """Samples scanned for the maximum after a threshold crossing."""
        return int(math.ceil(2.0 * self.fwhm / self.sample_period)) + 1


def pulse_train(amplitudes, tofs, params: WaveformParams) -> np.ndarray:
    """Noise-free superposition of Gaussian pulses.

    ``amplitudes`` and ``tofs`` share a shape ``(..., k)``; every trailing
    entry contributes one pulse (NaN ToF or zero amplitude contributes
    nothing).  Returns ``(..., n_samples)``.
    """
    a = np.asarray(amplitudes, dtype=float)
    t0 = np.asarray(tofs, dtype=float)
    valid = np.isfinite(t0) & (a != 0)
    a = np.where(valid, a, 0.0)
    t0 = np.where(valid, t0, 0.0)
    t = params.times
    a2 = a.reshape(-1, a.shape[-1]) if a.ndim else a.reshape(1, 1)
    t2 = t0.reshape(a2.shape)
    out = np.zeros((a2.shape[0], t.size))
    for k in range(a2.shape[1]):
        z = (t[None, :] - t2[:, k : k + 1]) / params.sigma
        out += a2[:, k : k + 1] * np.exp(-0.5 * z * z)
    return out.reshape(a.shape[:-1] + (t.size,)) if a.ndim else out[0]


def add_noise(clean: np.ndarray, sigma_dark, shot_coeff: float, rng: np.random.Generator) -> np.ndarray:
    """Dark noise plus a signal-dependent shot term ``shot_coeff * sqrt(signal)``."""
    sd = np.asarray(sigma_dark, dtype=float)
    if sd.ndim:
        sd = sd[..., None]
    var = sd * sd + shot_coeff * shot_coeff * np.maximum(clean, 0.0)
    return clean + np.sqrt(var) * rng.standard_normal(clean.shape)


def synth_waveform(amplitudes, tofs, params: WaveformParams, sigma_dark=0.0,
                   shot_coeff: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    clean = pulse_train(amplitudes, tofs, params)
    if rng is None or (np.all(np.asarray(sigma_dark) == 0) and shot_coeff == 0):
        return clean
    return add_noise(clean, sigma_dark, shot_coeff, rng)


def _interpolate(series: np.ndarray, p: np.ndarray, ok: np.ndarray):
    """Three-point parabolic vertex fit around index ``p``.

    The parabola is fitted to log samples when all three are positive
    (exact for a Gaussian pulse), else to the raw samples.
    """
    n = series.shape[-1]
    pc = np.clip(p, 1, n - 2)
    y0 = np.take_along_axis(series, (pc - 1)[:, None], axis=-1)[:, 0]
    y1 = np.take_along_axis(series, pc[:, None], axis=-1)[:, 0]
    y2 = np.take_along_axis(series, (pc + 1)[:, None], axis=-1)[:, 0]
    interior = ok & (p >= 1) & (p <= n - 2)

    pos = (y0 > 0) & (y1 > 0) & (y2 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        l0, l1, l2 = np.log(np.where(pos, y0, 1.0)), np.log(np.where(pos, y1, 1.0)), np.log(np.where(pos, y2, 1.0))
        den_l = l0 - 2.0 * l1 + l2
        den_r = y0 - 2.0 * y1 + y2
        use_log = pos & (den_l < 0)
        den = np.where(use_log, den_l, den_r)
        a0, a1, a2 = np.where(use_log, l0, y0), np.where(use_log, l1, y1), np.where(use_log, l2, y2)
        delta = np.where(den < 0, 0.5 * (a0 - a2) / np.where(den < 0, den, -1.0), 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    vertex = a1 - 0.25 * (a0 - a2) * delta
    amp = np.where(use_log, np.exp(np.where(use_log, vertex, 0.0)), vertex)
    delta = np.where(interior, delta, 0.0)
    amp = np.where(interior, amp, np.take_along_axis(series, np.clip(p, 0, n - 1)[:, None], axis=-1)[:, 0])
    return delta, amp


def detect_peaks(series, threshold, params: WaveformParams = WaveformParams(), max_returns: int = 2):
    """Detect up to ``max_returns`` significant pulse returns per series.

    A return starts where the series rises above ``threshold``; its peak is
    the maximum within :attr:`WaveformParams.search_window` samples of the
    crossing, refined by a three-point parabolic fit.  The next return is
    searched only after the series fell back below the threshold.

    Args:
        series: ``(n_samples,)`` or ``(n_series, n_samples)`` array.
        threshold: scalar or one value per series.

    Returns:
        ``(times, amplitudes)`` each shaped ``(..., max_returns)``; missing
        returns are NaN.  Returns are ordered by time.
    """
    s = np.asarray(series, dtype=float)
    single = s.ndim == 1
    s2 = s.reshape(-1, s.shape[-1])
    m, n = s2.shape
    thr = np.broadcast_to(np.asarray(threshold, dtype=float), (m,))
    above = s2 > thr[:, None]
    idx = np.arange(n)[None, :]
    win = params.search_window
    times = np.full((m, max_returns), np.nan)
    amps = np.full((m, max_returns), np.nan)
    start = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    rows = np.arange(m)
    for k in range(max_returns):
        cand = above & (idx >= start[:, None])
        found = active & cand.any(axis=1)
        i0 = np.argmax(cand, axis=1)
        wi = np.clip(i0[:, None] + np.arange(win)[None, :], 0, n - 1)
        wv = s2[rows[:, None], wi]
        p = wi[rows, np.argmax(wv, axis=1)]
        delta, amp = _interpolate(s2, p, found)
        times[found, k] = (p[found] + delta[found]) * params.sample_period
        amps[found, k] = amp[found]
        # resume after the pulse has dropped back below threshold
        below = ~above & (idx > p[:, None])
        has_below = below.any(axis=1)
        start = np.argmax(below, axis=1)
        active = found & has_below
    if single:
        return times[0], amps[0]
    shape = s.shape[:-1] + (max_returns,)
    return times.reshape(shape), amps.reshape(shape)
