"""Metric suite: oracles, injection/recovery on simulated campaigns, trends."""

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from arlhil.analysis import (
    AlignmentError,
    CalibrationInsufficient,
    PixelRays,
    analyze_bag,
    analyze_bags,
    beam_profile,
    dead_pixels,
    delta_K,
    intensity_profiles,
    load_bag,
    recalibrate,
    temporal_stats,
    trend,
)
from arlhil.analysis.loader import CoverageError
from arlhil.analysis.radiometry import stripe_gate
from arlhil.analysis.trend import classify, hot_seconds_series
from arlhil.config import config_hash, desk_preset, from_dict
from arlhil.lidar.aging import AgingParams, Injection
from arlhil.lidar.camera import DutSpec, Intrinsics, unproject
from arlhil.lidar.scene import default_scene
from arlhil.lidar.sensor import BeamProfile, SensorParams
from arlhil.orchestrator import run_campaign

from conftest import tiny_config

K0 = DutSpec().nominal_intrinsics()
SCENE = default_scene()
PARAMS = ("fx", "fy", "cx", "cy", "k1")


def quiet(**changes):
    """Desk campaign with the noise and the aging switched off."""
    base = dict(sensor=SensorParams(mode="parametric", noise=False), aging=AgingParams(enabled=False))
    base.update(changes)
    return desk_preset(**base)


def bag_paths(out, manifest, step=None):
    return [out / b["path"] for b in manifest["bags"] if step is None or b["step_index"] == step]


def configured_beam(K=K0, profile=None):
    vv, uu = np.mgrid[0:32, 0:128].astype(float)
    az, el = unproject(uu, vv, K)
    B = (profile or BeamProfile())(az, el)
    return B / B.max()


# campaigns ------------------------------------------------------------------

@pytest.fixture(scope="module")
def injected(tmp_path_factory):
    """Two noise-free cycles; at cycle 1 every DUT loses 10 % optical power,
    DUT 1 gets fx scaled by 1.02 and DUT 2 a +5 cm range bias."""
    out = tmp_path_factory.mktemp("injected")
    cfg = quiet(cycles=2, injections=(Injection(cycle=1, eta_P=0.9), Injection(cycle=1, dut=1, fx_scale=1.02),
                                      Injection(cycle=1, dut=2, range_bias=0.05)))
    manifest = run_campaign(cfg, out)
    paths = bag_paths(out, manifest, step=0)
    run = analyze_bags(paths, out / "reports", manifest["config"], manifest["config_sha256"])
    assert not run.errors
    truth = {(b["cycle"], b["step_index"]): json.loads((out / b["truth"]).read_text()) for b in manifest["bags"]}
    return run, truth, paths


@pytest.fixture(scope="module")
def fast_aging(tmp_path_factory):
    """Three cycles with a short power lifetime so the decay is visible at
    room temperature."""
    out = tmp_path_factory.mktemp("aging")
    cfg = quiet(cycles=3, aging=AgingParams(tau_power=300.0, widening_rate=0.0, dead_pixel_rate=0.0))
    manifest = run_campaign(cfg, out)
    run = analyze_bags(bag_paths(out, manifest), out / "reports", manifest["config"], manifest["config_sha256"])
    assert not run.errors
    return run, manifest, out, cfg


def dut(report, dut_id):
    return next(d for d in report.duts if d.dut_id == dut_id)


# temporal statistics ---------------------------------------------------------

def naive_stats(I, D):
    n, h, w = I.shape
    mI, sI = np.zeros((h, w)), np.zeros((h, w))
    mD, sD = np.full((h, w), np.nan), np.full((h, w), np.nan)
    for v in range(h):
        for u in range(w):
            xs = [float(I[k, v, u]) for k in range(n)]
            m = sum(xs) / n
            mI[v, u], sI[v, u] = m, math.sqrt(sum((x - m) ** 2 for x in xs) / (n - 1))
            ds = [float(D[k, v, u]) for k in range(n)]
            if all(math.isfinite(d) for d in ds):
                m = sum(ds) / n
                mD[v, u], sD[v, u] = m, math.sqrt(sum((d - m) ** 2 for d in ds) / (n - 1))
    return mI, sI, mD, sD


def test_temporal_stats_example():
    I = np.arange(1, 11, dtype=np.uint16).reshape(10, 1, 1)
    s = temporal_stats(I, I.astype(np.float32))
    assert s.mean_I[0, 0] == 5.5
    assert s.std_I[0, 0] == pytest.approx(3.0277, abs=1e-4)
    assert s.std_D[0, 0] == s.std_I[0, 0]


def test_identical_frames_have_zero_spread():
    I = np.full((10, 3, 4), 812, dtype=np.uint16)
    s = temporal_stats(I, np.full(I.shape, 1.1, dtype=np.float32))
    assert not s.std_I.any() and not s.std_D.any()


def test_sentinel_distances_are_excluded_and_counted():
    I = np.ones((3, 2, 2), dtype=np.uint16)
    D = np.ones((3, 2, 2), dtype=np.float32)
    D[1, 0, 1] = np.nan
    s = temporal_stats(I, D)
    assert s.n_excluded == 1 and np.isnan(s.mean_D[0, 1]) and np.isnan(s.std_D[0, 1])
    assert s.mean_D[1, 1] == 1.0


def test_one_frame_is_rejected():
    with pytest.raises(ValueError):
        temporal_stats(np.ones((1, 2, 2)), np.ones((1, 2, 2)))


stacks = st.tuples(st.integers(2, 12), st.integers(1, 5), st.integers(1, 6)).flatmap(
    lambda s: st.tuples(arrays(np.uint16, s, elements=st.integers(0, 4095)),
                        arrays(np.float32, s, elements=st.one_of(st.floats(0.5, 25.0, width=32),
                                                                 st.just(np.nan)))))


@settings(max_examples=100, deadline=None)
@given(stacks)
def test_temporal_stats_matches_naive_oracle(stack):
    I, D = stack
    s = temporal_stats(I, D)
    for got, want in zip((s.mean_I, s.std_I, s.mean_D, s.std_D), naive_stats(I, D)):
        assert np.array_equal(np.isnan(got), np.isnan(want))
        ok = np.isfinite(want)
        np.testing.assert_allclose(got[ok], want[ok], rtol=1e-9, atol=1e-12)
        assert (s.std_I >= 0).all()


# dead pixels -----------------------------------------------------------------

def test_no_dead_pixels_without_injection(injected):
    run, _, _ = injected
    assert all(d.scalars["N_dead"] == 0 for r in run.reports for d in r.duts)


def test_injected_dead_pixels_recovered(tmp_path):
    dead = ((5, 7), (100, 0), (31, 31))
    m = run_campaign(quiet(injections=(Injection(cycle=0, dead_pixels=dead),)), tmp_path)
    data = load_bag(tmp_path / m["bags"][0]["path"])
    rays = PixelRays((32, 128), K0, SCENE)
    for sweep in data.duts.values():
        found = dead_pixels(sweep, phis=data.phi_actual, rays=rays)
        assert found.pixels == sorted(dead) and found.count == 3


def test_pixel_seeing_void_is_not_dead(desk_run):
    out, _, manifest, _ = desk_run
    sweep = load_bag(out / manifest["bags"][0]["path"]).duts[0]
    # the top-left pixel looks past the targets at the sweep ends
    dark_at_some_pose = (sweep.I[:, :, 0, 0].max(axis=1) < 50).any()
    assert dark_at_some_pose
    data = load_bag(out / manifest["bags"][0]["path"])
    found = dead_pixels(sweep, phis=data.phi_actual, rays=PixelRays((32, 128), K0, SCENE))
    assert (0, 0) not in found.pixels


def test_incomplete_sweep_is_a_coverage_error(tmp_path):
    m = run_campaign(tiny_config(), tmp_path)
    data = load_bag(tmp_path / m["bags"][0]["path"])
    with pytest.raises(CoverageError, match="without any target"):
        dead_pixels(data.duts[0], phis=data.phi_actual, rays=PixelRays((32, 128), K0, SCENE))


# distance accuracy -----------------------------------------------------------

def test_noise_free_distance_error_below_a_millimetre(injected):
    run, _, _ = injected
    for d in run.reports[0].duts:
        acc = d.blocks["distance_accuracy"]
        assert acc["n_samples"] > 100_000
        assert acc["max_abs"] < 1e-3


def test_range_bias_recovered(injected):
    run, _, _ = injected
    later = run.reports[1]
    assert dut(later, 2).blocks["distance_accuracy"]["mean"] == pytest.approx(0.05, abs=2e-3)
    assert abs(dut(later, 0).blocks["distance_accuracy"]["mean"]) < 1e-3


def test_low_intensity_decile_is_less_accurate(desk_reports):
    for d in desk_reports.reports[0].duts:
        dec = d.blocks["distance_accuracy"]["deciles"]
        assert len(dec) == 10
        assert dec[0]["median_abs"] > dec[-1]["median_abs"]
        assert dec[0]["std"] > dec[-1]["std"]


def test_noisy_spread_falls_with_intensity(desk_reports):
    for d in desk_reports.reports[0].duts:
        assert d.scalars["spearman_I_sigma_D"] <= -0.5


# intensity and beam profiles ---------------------------------------------------

@pytest.fixture(scope="module")
def fresh_stats(injected):
    _, _, paths = injected
    data = load_bag(paths[0])
    s = temporal_stats(data.duts[0].I, data.duts[0].D)
    return s, data.phi_actual


def test_geometric_gate_admits_only_stripe_hits(fresh_stats):
    s, phis = fresh_stats
    rays = PixelRays((32, 128), K0, SCENE)
    for p in intensity_profiles(s.mean_I, phis, rays):
        k = p.stripe_index
        for i in np.unique(np.nonzero(p.admitted)[0])[::8]:
            assert (p.admitted[i] <= stripe_gate(rays, float(phis[i]), k)).all()
            hits = rays.cast(float(phis[i]))
            assert np.all(hits.reflectance[p.admitted[i]] == p.reflectance)


def test_beam_profile_matches_configured_beam(injected):
    run, _, _ = injected
    B = configured_beam()
    for d in run.reports[0].duts:
        P = d.maps["P_o"]
        ok = np.isfinite(P)
        assert ok.mean() > 0.95
        assert np.nanmax(P) == 1.0 and np.nanmin(P) >= 0.0
        assert np.max(np.abs(P[ok] - B[ok]) / B[ok]) < 0.02
        assert d.scalars["beam_residual"] < 0.02


def test_uniform_beam_gives_flat_profile(tmp_path):
    sensor = SensorParams(mode="parametric", noise=False, beam=BeamProfile(kind="uniform"))
    m = run_campaign(quiet(sensor=sensor), tmp_path)
    rep = analyze_bag(tmp_path / m["bags"][0]["path"])
    P = dut(rep, 0).maps["P_o"]
    ok = np.isfinite(P)
    assert ok.mean() > 0.95
    assert np.nanmin(P) > 0.99


def test_power_loss_ratio_per_direction(injected):
    run, _, _ = injected
    for d in run.reports[1].duts:
        dev = d.maps["P_o_dev"]
        ok = np.isfinite(dev)
        assert ok.mean() > 0.9
        assert np.all(np.abs(dev[ok] + 0.10) <= 0.01)
        assert d.scalars["eta_equiv"] == pytest.approx(0.9, rel=1e-3)


def test_gaps_are_flagged_not_filled(fresh_stats):
    s, phis = fresh_stats
    rays = PixelRays((32, 128), K0, SCENE)
    # only the first quarter of the sweep: most directions never see a stripe
    profiles = intensity_profiles(s.mean_I[:30], phis[:30], rays)
    for p in profiles:
        assert len(p.gaps) > 0
        for u, v in p.gaps:
            assert np.isnan(p.intensity[v, u]) and p.count[v, u] == 0
    beam = beam_profile(profiles)
    assert np.nanmax(beam.normalized) == 1.0
    assert all(np.isnan(beam.normalized[v, u]) for u, v in beam.excluded)


def test_beam_profile_needs_a_stripe():
    with pytest.raises(ValueError):
        beam_profile([])


# recalibration ---------------------------------------------------------------

def assert_close_K(K, K_true, rel):
    for name in PARAMS:
        a, b = getattr(K, name), getattr(K_true, name)
        if name == "k1":
            assert abs(a - b) <= 1e-3, name
        else:
            assert abs(a - b) <= rel * abs(b), name


def test_noise_free_recalibration_recovers_truth(injected):
    run, truth, _ = injected
    for rep in run.reports:
        for d in rep.duts:
            K_true = Intrinsics(**truth[(rep.cycle, rep.step_index)]["duts"][d.dut_id]["intrinsics"])
            assert_close_K(Intrinsics(**d.blocks["calibration"]["K"]), K_true, 1e-3)


def test_fx_drift_recovered(injected):
    run, _, _ = injected
    later = run.reports[1]
    assert dut(later, 1).scalars["dK_fx"] == pytest.approx(0.02, abs=0.002)
    for other in (0, 2):
        assert abs(dut(later, other).scalars["dK_fx"]) < 1e-3


def test_identical_bag_identical_K(injected):
    _, _, paths = injected
    data = load_bag(paths[0])
    s = temporal_stats(data.duts[1].I, data.duts[1].D)
    a = recalibrate(s.mean_I, data.phi_actual, SCENE, K0)
    b = recalibrate(s.mean_I, data.phi_actual, SCENE, K0)
    assert a.K.as_array().tobytes() == b.K.as_array().tobytes()
    assert a.n_correspondences >= 20


def test_recalibration_needs_calibration_poses(fresh_stats):
    s, phis = fresh_stats
    near_boresight = np.abs(phis) < 20
    with pytest.raises(CalibrationInsufficient):
        recalibrate(s.mean_I[near_boresight], phis[near_boresight], SCENE, K0)


def test_delta_K_arithmetic():
    base = Intrinsics(fx=61.115, fy=61.115, cx=63.5, cy=15.5, k1=0.0)
    assert all(v["value"] == 0 for v in delta_K(base, base).values())
    d = delta_K(dataclasses.replace(base, fx=62.337, k1=0.01), base)
    assert d["fx"]["value"] == pytest.approx(0.02, abs=1e-4) and d["fx"]["kind"] == "relative"
    assert d["k1"] == {"value": 0.01, "kind": "absolute"}


# trend -----------------------------------------------------------------------

def points(values, metric="P_o_peak", grid=(20.0, 25.0)):
    return [{"cycle": c, "step": s, "T_set": T, "dut": 0, "metrics": {metric: values[c]}}
            for c in range(len(values)) for s, T in enumerate(grid)]


def test_constant_series_is_stable():
    tr = trend(points([5.0, 5.0, 5.0]))
    d = tr["duts"]["0"]
    assert abs(d["slopes"]["P_o_peak"]["mean_slope"]) < 1e-12
    assert [x["flag"] for x in d["deltas"]["P_o_peak"]] == ["stable", "stable"]


def test_trend_needs_two_cycles():
    with pytest.raises(ValueError):
        trend(points([1.0]))


def test_mismatched_setpoints_raise():
    pts = points([1.0, 1.0])
    pts[-1]["T_set"] = 30.0
    with pytest.raises(AlignmentError):
        trend(pts)


def test_classification_bands():
    assert classify("N_dead", 1.0, 0.0) == "changed"
    assert classify("N_dead", 0.0, 3.0) == "stable"
    assert classify("P_o_peak", -0.1, 1.0) == "changed"
    assert classify("k1", 5e-4, 0.0) == "stable"
    assert classify("fx", math.nan, 1.0) == "n/a"


def test_hot_seconds_mirror_the_rig(fast_aging):
    run, manifest, out, _ = fast_aging
    entries = [(b["cycle"], b["step_index"], b["T_set_C"]) for b in manifest["bags"]]
    hot = hot_seconds_series(entries, manifest["config"])
    for b, h in zip(manifest["bags"], hot):
        truth = json.loads((out / b["truth"]).read_text())
        assert truth["duts"][0]["aging"]["hot_seconds"] == pytest.approx(h, rel=1e-9)
    assert all(math.isnan(x) for x in hot_seconds_series(entries, None))


def test_power_decay_slope_recovers_lifetime(fast_aging):
    run, _, _, cfg = fast_aging
    tr = json.loads(run.trend_path.read_text())
    for d in tr["duts"].values():
        fit = d["log_P_o_peak_vs_hot_seconds"]
        assert fit["slope"] == pytest.approx(-1.0 / cfg.aging.tau_power, rel=0.05)
        peaks = [x["value"] for x in d["series"]["P_o_peak"]]
        assert all(b < a for a, b in zip(peaks, peaks[1:]))


def test_aging_off_trend_is_flat(injected):
    run, _, _ = injected
    tr = json.loads(run.trend_path.read_text())
    d = tr["duts"]["0"]
    for name in ("N_dead", "sigma_I_median"):
        assert [x["flag"] for x in d["deltas"][name]] == ["stable"]
    assert d["slopes"]["N_dead"]["mean_slope"] == 0.0


def test_dead_pixel_series_non_decreasing(tmp_path):
    cfg = tiny_config(cycles=3, aging=AgingParams(dead_pixel_rate=5.0))
    m = run_campaign(cfg, tmp_path)
    counts = {}
    for b in m["bags"]:
        truth = json.loads((tmp_path / b["truth"]).read_text())
        for d in truth["duts"]:
            counts.setdefault(d["dut_id"], []).append(len(d["aging"]["dead_pixels"]))
    assert any(c[-1] > 0 for c in counts.values())
    for c in counts.values():
        assert all(b >= a for a, b in zip(c, c[1:]))


# reports -----------------------------------------------------------------------

def test_reports_carry_config_echo_and_maps(injected):
    run, _, _ = injected
    rep = run.reports[0]
    doc = json.loads((run.written[0]).read_text())
    assert doc["config_sha256"] == config_hash(from_dict(doc["config"]))
    assert len(doc["config"]["injections"]) == 3 and set(doc["duts"]) == {"0", "1", "2"}
    names = {p.name for p in run.written}
    for name in ("sigma_I", "sigma_D", "dD", "P_o", "P_o_dev"):
        assert f"{rep.stem}_dut0_{name}.csv" in names and f"{rep.stem}_dut0_{name}.pgm" in names
    pgm = (run.written[0].parent / f"{rep.stem}_dut0_P_o.pgm").read_text().split("\n")
    assert pgm[:3] == ["P2", "128 32", "255"]


def test_reanalysis_is_byte_identical(injected, tmp_path):
    run, _, paths = injected
    again = analyze_bags(paths, tmp_path, json.loads(run.written[0].read_text())["config"],
                         json.loads(run.written[0].read_text())["config_sha256"])
    assert [p.name for p in again.written] == [p.name for p in run.written]
    for a, b in zip(run.written, again.written):
        assert a.read_bytes() == b.read_bytes(), a.name
