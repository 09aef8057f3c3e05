"""Acceptance suite. Each test is tagged with the criterion it covers; the
terminal summary prints one PASS/FAIL line per criterion."""

import dataclasses
import json
import math
import shutil
import struct
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from arlhil import bag
from arlhil.analysis import analyze_manifest, load_bag, temporal_stats
from arlhil.config import CampaignConfig, LoadProfile, SweepConfig, desk_preset, from_dict
from arlhil.lidar.aging import AgingParams, Injection
from arlhil.lidar.camera import DutSpec, Intrinsics
from arlhil.lidar.scene import default_scene, raycast
from arlhil.lidar.sensor import SensorParams
from arlhil.lidar.waveform import SPEED_OF_LIGHT, tof_to_distance
from arlhil.orchestrator import MANIFEST_NAME, run_campaign
from arlhil.thermal import SETTLE_BOUND_S

from test_analysis import naive_stats
from test_bag import CHANNELS, assert_same, records, sample_records

K0 = DutSpec().nominal_intrinsics()

criterion = pytest.mark.criterion


def analyzed(out, cfg):
    manifest = run_campaign(cfg, out)
    run = analyze_manifest(out / MANIFEST_NAME, out / "reports")
    assert not run.errors
    return manifest, run


def truth_of(out, entry):
    return json.loads((out / entry["truth"]).read_text())


# 1 ----------------------------------------------------------------------------

@criterion(1, "round-trip time to distance")
def test_criterion_01_tof_to_distance():
    t0 = time.perf_counter()
    t = np.random.default_rng(1).uniform(0.0, 200e-9, 10_000)
    d = tof_to_distance(t)
    oracle = np.array([299_792_458.0 * x / 2.0 for x in t.tolist()])
    assert SPEED_OF_LIGHT == 299_792_458.0
    assert np.array_equal(d, oracle)
    assert float(tof_to_distance(7.3384e-9)) == pytest.approx(1.1, rel=1e-5)
    assert float(tof_to_distance(166.782e-9)) == pytest.approx(25.0, rel=1e-5)
    assert time.perf_counter() - t0 < 1.0


# 2 ----------------------------------------------------------------------------

@criterion(2, "rig parameters in the config echo")
def test_criterion_02_rig_parameters(tmp_path, desk_run):
    manifest = run_campaign(CampaignConfig(cycles=0), tmp_path)
    echo = manifest["config"]
    assert (echo["dut"]["width"], echo["dut"]["height"], echo["dut"]["intensity_bits"]) == (128, 32, 12)
    assert (echo["sweep"]["phi_lo"], echo["sweep"]["phi_hi"], echo["sweep"]["step"]) == (-60.0, 60.0, 0.9375)
    assert echo["frames_per_position"] == 10 and echo["n_duts"] == 3
    prof = echo["profile"]
    assert (prof["T_min"], prof["T_max"], prof["T_step"]) == (-10.0, 85.0, 5.0)
    cfg = from_dict(echo)
    rising = cfg.profile.setpoints()[:20]
    assert rising == [-10.0 + 5.0 * k for k in range(20)]
    assert LoadProfile(policy="ascending").setpoints() == rising
    # a recorded bag carries exactly that layout
    out, _, desk_manifest, _ = desk_run
    assert desk_manifest["config"]["sweep"] == echo["sweep"]
    data = load_bag(out / desk_manifest["bags"][0]["path"])
    assert data.phi_set.size == 129
    assert np.allclose(np.diff(data.phi_set), 0.9375)
    assert sorted(data.duts) == [0, 1, 2]
    for sweep in data.duts.values():
        assert sweep.I.shape == (129, 10, 32, 128)
        assert sweep.I.max() <= 4095


# 3 ----------------------------------------------------------------------------

@criterion(3, "range variation over the vertical field of view")
def test_criterion_03_geometry_bound():
    v = np.linspace(-0.5, 31.5, 321)
    spans = []
    for u in np.arange(0.0, 128.0):
        h = raycast(np.full(v.shape, u), v, 0.0, default_scene(), K0)
        if h.hit.all() and np.all(h.reflectance > 0) and np.nanmin(h.range) == pytest.approx(1.1, abs=1e-6):
            spans.append(np.ptp(h.range))
    assert len(spans) > 50
    assert max(spans) <= 0.27
    expected = 1.1 / math.cos(math.radians(13.75)) - 1.1
    assert expected == pytest.approx(0.0325, abs=1e-3)
    assert max(spans) == pytest.approx(expected, abs=1e-3)


# 4 ----------------------------------------------------------------------------

@criterion(4, "closed-loop settling and capture after settling")
def test_criterion_04_settling(tmp_path):
    cfg = CampaignConfig(sweep=SweepConfig(0.0, 0.0, 0.9375), frames_per_position=2,
                         sensor=SensorParams(mode="parametric", supersample=1), cycles=1)
    manifest = run_campaign(cfg, tmp_path)
    assert [b["T_set_C"] for b in manifest["bags"]] == cfg.profile.setpoints()
    assert set(cfg.profile.setpoints()) == {-10.0 + 5.0 * k for k in range(20)}
    assert (cfg.eps, cfg.hold) == (0.5, 30.0)
    for entry in manifest["bags"]:
        assert entry["t_settled"] - entry["t_start"] <= SETTLE_BOUND_S
        header, recs = bag.read(tmp_path / entry["path"])
        assert header.t0 == entry["t_settled"]
        early = 0
        first_status = None
        for r in recs:
            if r.channel == "master/status" and first_status is None:
                first_status = r
            if r.channel.endswith("/frame"):
                assert first_status is not None
                early += r.t < entry["t_settled"]
        assert early == 0
        assert first_status.payload.fields["event"] == "settled"


# 5 ----------------------------------------------------------------------------

@criterion(5, "dead-pixel injection and recovery")
@pytest.mark.parametrize("k", [0, 3, 7])
def test_criterion_05_dead_pixels(tmp_path, k):
    rng = np.random.default_rng(100 + k)
    flat = rng.choice(128 * 32, size=k, replace=False)
    dead = tuple(sorted((int(i % 128), int(i // 128)) for i in flat))
    t0 = time.perf_counter()
    cfg = desk_preset(seed=11, injections=(Injection(cycle=0, dead_pixels=dead),))
    manifest, run = analyzed(tmp_path, cfg)
    elapsed = time.perf_counter() - t0
    assert len(run.reports) == 2
    for rep in run.reports:
        for d in rep.duts:
            assert [tuple(p) for p in d.blocks["dead_pixels"]["pixels"]] == list(dead)
            assert d.scalars["N_dead"] == k
    assert elapsed < 60.0


# 6 ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def drift_quiet(tmp_path_factory):
    """Noise-free two-cycle campaign: 10 % power loss on every DUT and +2 %
    fx on DUT 1 from cycle 1."""
    out = tmp_path_factory.mktemp("quiet")
    cfg = desk_preset(sensor=SensorParams(mode="parametric", noise=False), aging=AgingParams(enabled=False),
                      cycles=2, injections=(Injection(cycle=1, eta_P=0.9), Injection(cycle=1, dut=1, fx_scale=1.02)))
    manifest, run = analyzed(out, cfg)
    return out, manifest, run


@pytest.fixture(scope="module")
def drift_noisy(tmp_path_factory):
    """The same injections with sensor noise on."""
    out = tmp_path_factory.mktemp("noisy")
    cfg = desk_preset(aging=AgingParams(enabled=False), cycles=2, seed=8,
                      injections=(Injection(cycle=1, eta_P=0.9), Injection(cycle=1, dut=1, fx_scale=1.02)))
    manifest, run = analyzed(out, cfg)
    return out, manifest, run


@criterion(6, "optical power loss closure")
def test_criterion_06_power_decay(drift_quiet, drift_noisy):
    _, _, run = drift_quiet
    later = [r for r in run.reports if r.cycle == 1]
    assert len(later) == 2
    for rep in later:
        for d in rep.duts:
            dev = d.maps["P_o_dev"]
            ok = np.isfinite(dev)
            assert ok.mean() > 0.9
            assert np.all(np.abs(dev[ok] - (-0.10)) <= 0.01), d.dut_id
    for _, _, r in (drift_quiet, drift_noisy):
        by_key = {(rep.cycle, rep.step_index, d.dut_id): d.scalars["I_Laser"] for rep in r.reports for d in rep.duts}
        for (c, s, i), current in by_key.items():
            if c == 1:
                assert current / by_key[(0, s, i)] == pytest.approx(1 / 0.9, rel=1e-3)


# 7 ----------------------------------------------------------------------------

@criterion(7, "intrinsic drift closure")
def test_criterion_07_intrinsic_drift(drift_quiet, drift_noisy):
    _, _, run = drift_noisy
    for rep in run.reports:
        if rep.cycle == 1:
            d = next(d for d in rep.duts if d.dut_id == 1)
            assert d.scalars["dK_fx"] == pytest.approx(0.02, abs=0.002)
    out, manifest, run = drift_quiet
    truth = {(b["cycle"], b["step_index"]): truth_of(out, b) for b in manifest["bags"]}
    for rep in run.reports:
        for d in rep.duts:
            K = Intrinsics(**d.blocks["calibration"]["K"])
            K_true = Intrinsics(**truth[(rep.cycle, rep.step_index)]["duts"][d.dut_id]["intrinsics"])
            for name in ("fx", "fy", "cx", "cy"):
                assert getattr(K, name) == pytest.approx(getattr(K_true, name), rel=1e-3), name
            assert abs(K.k1 - K_true.k1) <= 1e-3


# 8 ----------------------------------------------------------------------------

@criterion(8, "temporal statistics and intensity-dependent distance noise")
def test_criterion_08_noise_statistics(desk_run):
    rng = np.random.default_rng(8)
    for _ in range(100):
        n, h, w = int(rng.integers(2, 12)), int(rng.integers(1, 6)), int(rng.integers(1, 8))
        I = rng.integers(0, 4096, (n, h, w)).astype(np.uint16)
        D = rng.uniform(0.5, 25.0, (n, h, w)).astype(np.float32)
        D[rng.random((n, h, w)) < 0.1] = np.nan
        s = temporal_stats(I, D)
        for got, want in zip((s.mean_I, s.std_I, s.mean_D, s.std_D), naive_stats(I, D)):
            assert np.array_equal(np.isnan(got), np.isnan(want))
            ok = np.isfinite(want)
            np.testing.assert_allclose(got[ok], want[ok], rtol=1e-9, atol=1e-12)
    out, _, manifest, cfg = desk_run
    assert cfg.sensor.noise
    data = load_bag(out / manifest["bags"][0]["path"])
    for sweep in data.duts.values():
        s = temporal_stats(sweep.I, sweep.D)
        ok = np.isfinite(s.std_D) & (s.mean_I > 0)
        I, sd = s.mean_I[ok], s.std_D[ok]
        assert 10 * np.log10(I.max() / I.min()) >= 10.0
        assert spearmanr(I, sd).statistic <= -0.5


# 9 ----------------------------------------------------------------------------

@criterion(9, "bag integrity")
@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(records(), st.integers(0, 2**32 - 1), st.integers(0, 2**16 - 1))
def test_criterion_09a_bag_round_trip(tmp_path, recs, cycle, step):
    header = bag.BagHeader(cycle, step, 20.0, 1.5, CHANNELS)
    p = tmp_path / "r.arlb"
    bag.write(p, header, recs)
    h, got = bag.read(p)
    got = list(got)
    assert h == header and len(got) == len(recs)
    for a, b in zip(recs, got):
        if a.channel == "stage/actual":
            assert struct.pack("<Idd", a.payload.index, a.payload.phi_set, a.payload.phi_actual) == \
                struct.pack("<Idd", b.payload.index, b.payload.phi_set, b.payload.phi_actual)
        else:
            assert_same(a, b)
    q = tmp_path / "q.arlb"
    bag.write(q, h, got)
    assert q.read_bytes() == p.read_bytes()


@criterion(9, "bag integrity")
def test_criterion_09b_bag_corruption(tmp_path):
    p = tmp_path / "b.arlb"
    header = bag.BagHeader(1, 2, 20.0, 1.5, CHANNELS)
    bag.write(p, header, sample_records())
    raw = p.read_bytes()
    p.write_bytes(b"BAD!" + raw[4:])
    with pytest.raises(bag.BagFormatError):
        bag.read(p)
    p.write_bytes(raw[:-7])
    with pytest.raises(bag.BagCorruptionError):
        list(bag.read(p)[1])


# 10 ---------------------------------------------------------------------------

@criterion(10, "deterministic full campaigns")
def test_criterion_10_determinism(tmp_path):
    cfg = CampaignConfig(cycles=2, seed=42, profile=LoadProfile(policy="triangular"),
                         sensor=SensorParams(mode="parametric"))
    t0 = time.perf_counter()
    try:
        for name in ("a", "b"):
            analyzed(tmp_path / name, cfg)
        elapsed = time.perf_counter() - t0
        a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert a_files == b_files
        assert sum(1 for f in a_files if f.suffix == ".arlb") == 2 * 38
        assert any(f.parts[0] == "reports" for f in a_files)
        for f in a_files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), str(f)
        print(f"two full runs with analysis: {elapsed:.0f} s")
        assert elapsed < 300.0, f"two full runs took {elapsed:.0f} s"
    finally:
        shutil.rmtree(tmp_path / "a", ignore_errors=True)
        shutil.rmtree(tmp_path / "b", ignore_errors=True)
