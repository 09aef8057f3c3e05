"""Frame formation of the simulated DUT, in waveform and parametric mode."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from arlhil.lidar.aging import AgingState
from arlhil.lidar.camera import DutSpec
from arlhil.lidar.scene import MISS, default_scene
from arlhil.lidar.sensor import (
    BeamProfile,
    SensorGeometry,
    SensorParams,
    _frames_waveform,
    burst_seed,
    capture_frame,
    capture_frames,
    render_pose,
)
from arlhil.lidar.waveform import SPEED_OF_LIGHT

SPEC = DutSpec()
SCENE = default_scene()
K0 = SPEC.nominal_intrinsics()
FRESH = AgingState()
QUIET = SensorParams(noise=False)


def burst(phi, params, n=1, aging=FRESH, seed=0, housing=25.0):
    geom = SensorGeometry(SPEC, K0, params.supersample, SCENE)
    pose = render_pose(phi, geom, aging, params)
    return pose, capture_frames(pose, n, housing, params, SPEC, np.random.SeedSequence(seed))


@pytest.mark.parametrize("mode", ["waveform", "parametric"])
def test_frame_shape_and_dtypes(mode):
    f = capture_frame(0.0, SCENE, K0, FRESH, 25.0, 1, SensorParams(mode=mode))
    assert f.I.shape == f.D.shape == (32, 128)
    assert f.I.dtype == np.uint16 and f.D.dtype == np.float32
    assert f.I.max() <= 4095
    ok = np.isfinite(f.D)
    assert ok.any() and np.all((f.D[ok] >= 0.5) & (f.D[ok] <= 25.0))
    assert f.truth is not None and f.truth.range.shape == (32, 128)


@pytest.mark.parametrize("mode", ["waveform", "parametric"])
def test_miss_region_gives_noise_floor_and_sentinel(mode):
    _, frames = burst(180.0, SensorParams(mode=mode), n=3)
    for f in frames:
        assert np.isnan(f.D).all()
        assert f.I.max() < 5 * 4.0 * 2
    _, frames = burst(180.0, SensorParams(mode=mode, noise=False))
    assert (frames[0].I == 0).all()


@pytest.mark.parametrize("mode", ["waveform", "parametric"])
def test_reflectance_ratio_same_geometry(mode):
    # put each stripe centre on the boresight so both use the same pixels
    params = SensorParams(mode=mode, noise=False, beam=BeamProfile("uniform"))
    means = {}
    for rho in (0.18, 0.80):
        s = SCENE.stripes[SCENE.stripe_by_reflectance(rho)]
        _, (f,) = burst(s.center_deg, params)
        means[rho] = f.I[8:24, 63:65].astype(float).mean()
    assert means[0.80] / means[0.18] == pytest.approx(80 / 18, rel=0.02)


@pytest.mark.parametrize("mode", ["waveform", "parametric"])
def test_injected_dead_pixel_in_every_capture(mode):
    aging = replace(FRESH, dead_pixels=frozenset({(5, 7)}))
    for phi in (-40.0, 0.0, 40.0):
        _, frames = burst(phi, SensorParams(mode=mode), n=3, aging=aging)
        for f in frames:
            assert f.I[7, 5] == 0 and np.isnan(f.D[7, 5])
            assert f.I2[7, 5] == 0 and np.isnan(f.D2[7, 5])


def test_saturation_is_a_clamp():
    params = SensorParams(mode="waveform", gain=3.8e6)
    _, (f,) = burst(0.0, params)
    hit = np.isfinite(f.D)
    assert (f.I[hit] == 4095).mean() > 0.9
    assert f.I.max() == 4095


def test_distance_is_exactly_half_the_detected_light_path():
    params = SensorParams(mode="waveform")
    pose, frames = burst(20.0, params, n=2, seed=5)
    rng = np.random.default_rng(np.random.SeedSequence(5))
    t, _, _ = _frames_waveform(pose, 2, params.dark_noise(25.0), params, rng)
    for k, f in enumerate(frames):
        d = (SPEED_OF_LIGHT * t[k, :, 0] / 2.0).reshape(32, 128)
        ok = np.isfinite(f.D)
        assert np.array_equal(f.D[ok], d[ok].astype(np.float32))


def test_noise_free_distances_match_truth():
    _, (f,) = burst(0.0, SensorParams(mode="waveform", noise=False))
    pose, _ = burst(0.0, QUIET)
    ok = np.isfinite(f.D)
    # mixed footprints straddle band edges; compare against the weighted range
    err = np.abs(f.D[ok] - pose.range[ok])
    assert err.max() < 1e-5


def test_capture_is_a_pure_function_of_seed():
    a = burst(10.0, SensorParams(mode="waveform"), n=2, seed=11)[1]
    b = burst(10.0, SensorParams(mode="waveform"), n=2, seed=11)[1]
    c = burst(10.0, SensorParams(mode="waveform"), n=2, seed=12)[1]
    for x, y in zip(a, b):
        assert np.array_equal(x.I, y.I) and np.array_equal(x.D, y.D, equal_nan=True)
    assert not np.array_equal(a[0].I, c[0].I)


def test_burst_seed_is_counter_based():
    a = np.random.default_rng(burst_seed(42, 2, 0, 3, 7, 1)).random(3)
    b = np.random.default_rng(burst_seed(42, 2, 0, 3, 7, 1)).random(3)
    c = np.random.default_rng(burst_seed(42, 2, 0, 3, 8, 1)).random(3)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_second_return_recorded_for_mixed_footprints():
    params = SensorParams(mode="waveform", noise=False)
    _, (f,) = burst(0.0, params)
    assert f.I2.shape == (32, 128)
    # band top and bottom edge pixels see target and nothing; no second surface there
    assert np.isnan(f.D2).mean() > 0.9


def test_parametric_statistics_match_waveform_detection():
    """The closed-form noise gains reproduce the waveform detector's spread."""
    std = {}
    for mode in ("waveform", "parametric"):
        params = SensorParams(mode=mode, supersample=1)
        _, frames = burst(0.0, params, n=100, seed=2)
        I = np.stack([f.I for f in frames]).astype(float)
        D = np.stack([f.D for f in frames]).astype(float)
        ok = np.isfinite(D).all(0)
        std[mode] = (I.std(0, ddof=1), D.std(0, ddof=1), ok)
    m = std["waveform"][2] & std["parametric"][2]
    assert m.sum() > 1000
    ratio_I = np.median(std["parametric"][0][m] / std["waveform"][0][m])
    ratio_D = np.median(std["parametric"][1][m] / std["waveform"][1][m])
    assert ratio_I == pytest.approx(1.0, abs=0.1)
    assert ratio_D == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("mode", ["waveform", "parametric"])
def test_intensity_noise_coupling(mode):
    # a marker panel pose spans far more than 10 dB between markers and background
    pose, frames = burst(45.0, SensorParams(mode=mode), n=100, seed=9)
    I = np.stack([f.I for f in frames]).astype(float)
    D = np.stack([f.D for f in frames]).astype(float)
    ok = np.isfinite(D).all(0)
    mean_I = I.mean(0)[ok]
    assert 10 * np.log10(mean_I.max() / mean_I.min()) >= 10
    rho = spearmanr(mean_I, D.std(0, ddof=1)[ok]).statistic
    assert rho <= -0.5


def test_radiometric_consistency_across_stripes():
    """I * r^2 / (rho * cos) agrees across stripes for one pixel direction."""
    comp = []
    for s in SCENE.stripes:
        pose, (f,) = burst(s.center_deg, QUIET)
        v, u = 16, 64
        assert pose.truth_target[v, u] == SCENE.stripes.index(s)
        comp.append(f.I[v, u] * 1.1**2 / s.reflectance)
    comp = np.array(comp)
    assert np.ptp(comp) / comp.mean() < 0.02


def test_dark_noise_grows_with_temperature():
    p = SensorParams()
    assert p.dark_noise(85.0) > p.dark_noise(25.0) > p.dark_noise(-10.0)


def test_invalid_params():
    with pytest.raises(ValueError):
        SensorParams(mode="magic")
    with pytest.raises(ValueError):
        BeamProfile("flat")
    with pytest.raises(ValueError):
        SensorParams(supersample=0)


def test_truth_sidecar_marks_targets():
    pose, (f,) = burst(0.0, QUIET)
    assert (pose.truth_target[16, 60:68] != MISS).all()
    assert f.truth.phi_deg == 0.0
