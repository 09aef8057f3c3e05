"""Pulse synthesis, first-two-peak detection and ToF conversion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arlhil.lidar.waveform import (
    SPEED_OF_LIGHT,
    WaveformParams,
    detect_peaks,
    distance_to_tof,
    gate_range,
    synth_waveform,
    tof_to_distance,
)

WP = WaveformParams()


def test_tof_examples():
    assert tof_to_distance(0.0) == 0.0
    assert tof_to_distance(166.782e-9) == pytest.approx(25.0, abs=1e-4)
    assert tof_to_distance(7.3384e-9) == pytest.approx(1.1, abs=1e-4)
    assert 2 * 1.1 / SPEED_OF_LIGHT == pytest.approx(7.3384e-9, abs=1e-13)


def test_negative_tof_rejected():
    with pytest.raises(ValueError):
        tof_to_distance(-1e-9)


@given(st.floats(0.0, 1e-6))
def test_tof_is_exactly_half_light_path(t):
    assert tof_to_distance(t) == SPEED_OF_LIGHT * t / 2.0


def test_gate_range_uses_sentinel():
    d = gate_range([0.2, 1.1, 30.0], 0.5, 25.0)
    assert np.isnan(d[0]) and d[1] == 1.1 and np.isnan(d[2])


def test_noise_free_peak_sample():
    s = synth_waveform([100.0], [distance_to_tof(1.1)], WP)
    assert int(np.argmax(s)) == round(2 * 1.1 / SPEED_OF_LIGHT / 1e-9) == 7


def test_miss_is_pure_noise():
    rng = np.random.default_rng(0)
    s = synth_waveform([0.0], [np.nan], WP, sigma_dark=4.0, rng=rng)
    assert s.shape == (WP.n_samples,)
    assert abs(s.mean()) < 1.0 and 3.0 < s.std() < 5.0
    assert np.all(synth_waveform([0.0], [np.nan], WP) == 0.0)


def test_single_pulse_round_trip():
    t0 = 7.34e-9
    s = synth_waveform([500.0], [t0], WP)
    t, a = detect_peaks(s, 20.0, WP)
    assert abs(t[0] - t0) <= 0.5e-9
    assert np.isnan(t[1])
    assert a[0] == pytest.approx(500.0, rel=1e-9)


def test_noise_free_detection_is_exact():
    tofs = distance_to_tof(np.linspace(0.6, 24.0, 50))
    s = synth_waveform(np.full((50, 1), 300.0), tofs[:, None], WP)
    t, _ = detect_peaks(s, 20.0, WP)
    assert np.max(np.abs(t[:, 0] - tofs)) < 1e-15


def test_two_staggered_surfaces_give_two_pulses():
    tofs = distance_to_tof([1.1, 3.0])
    s = synth_waveform([200.0, 80.0], tofs, WP)
    t, a = detect_peaks(s, 20.0, WP)
    assert t == pytest.approx(tofs, abs=1e-12)
    assert a == pytest.approx([200.0, 80.0], rel=1e-6)


def test_three_pulses_keep_first_two_in_time_order():
    tofs = distance_to_tof([5.0, 1.5, 9.0])
    s = synth_waveform([50.0, 300.0, 400.0], tofs, WP)
    t, a = detect_peaks(s, 20.0, WP)
    assert t.shape == (2,)
    assert t == pytest.approx(sorted(tofs)[:2], abs=1e-12)
    assert a == pytest.approx([300.0, 50.0], rel=1e-6)


def test_all_noise_below_threshold_gives_no_returns():
    rng = np.random.default_rng(3)
    s = synth_waveform([0.0], [np.nan], WP, sigma_dark=4.0, rng=rng)
    t, a = detect_peaks(s, 5 * 4.0 * 3, WP)
    assert np.isnan(t).all() and np.isnan(a).all()


def test_batch_detection_matches_single():
    rng = np.random.default_rng(4)
    amps = rng.uniform(30, 800, (20, 1))
    tofs = distance_to_tof(rng.uniform(0.5, 20, (20, 1)))
    s = synth_waveform(amps, tofs, WP, sigma_dark=4.0, shot_coeff=0.35, rng=rng)
    tb, ab = detect_peaks(s, 20.0, WP)
    for k in range(20):
        t1, a1 = detect_peaks(s[k], 20.0, WP)
        assert np.array_equal(t1, tb[k], equal_nan=True) and np.array_equal(a1, ab[k], equal_nan=True)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.6, 24.0), st.floats(40.0, 4000.0))
def test_detected_time_within_interpolation_bound(d, amp):
    s = synth_waveform([amp], [distance_to_tof(d)], WP)
    t, _ = detect_peaks(s, 20.0, WP)
    assert abs(tof_to_distance(t[0]) - d) < 1e-6
