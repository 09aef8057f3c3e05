"""Per-bag metric reports and campaign-level assembly.

Reports hold scalars and parameter blocks as JSON; per-pixel fields go to
CSV matrices with PGM (P2) heatmaps next to them. Output is a pure function
of the bags, the declared scene and the config echo, so re-running an
analysis overwrites every file with identical bytes.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from ..lidar.camera import DutSpec, Intrinsics
from ..lidar.scene import TargetScene, default_scene
from .accuracy import distance_accuracy
from .calibration import CalibrationError, CalibrationNotConverged, delta_K, recalibrate
from .geometry import PixelRays
from .loader import load_bag
from .radiometry import BeamEstimate, beam_profile, intensity_profiles
from .stats import dead_pixels, temporal_stats
from .trend import trend

REPORT_VERSION = 1
MAPS = ("sigma_I", "sigma_D", "dD", "P_o", "P_o_dev")


@dataclass
class Baseline:
    """Cycle-0 reference of one DUT at one set-point."""

    K: Intrinsics | None
    beam: BeamEstimate
    I_Laser: float


@dataclass
class DutResult:
    dut_id: int
    scalars: dict
    blocks: dict
    maps: dict  # name -> (H, W)
    baseline: Baseline


@dataclass
class BagReport:
    path: str
    cycle: int
    step_index: int
    T_set: float
    duts: list[DutResult] = field(default_factory=list)
    baseline_source: str = "self"  # "cycle0" once compared against the cycle-0 bag

    @property
    def stem(self) -> str:
        return Path(self.path).name.rsplit(".arlb", 1)[0]


def _median(a) -> float:
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(np.median(a)) if a.size else math.nan


def analyze_dut(sweep, phis, scene: TargetScene, K_init: Intrinsics, baseline: Baseline | None) -> DutResult:
    st = temporal_stats(sweep.I, sweep.D)
    blocks: dict = {}
    K_hat = None
    try:
        cal = recalibrate(st.mean_I, phis, scene, K_init)
        K_hat = cal.K
        blocks["calibration"] = {"K": cal.K.to_dict(), "rms_px": cal.rms, "n_correspondences": cal.n_correspondences,
                                 "n_poses": cal.n_poses, "evaluations": cal.iterations, "error": None}
    except CalibrationNotConverged as e:
        blocks["calibration"] = {"K": None, "rms_px": e.result.rms, "n_correspondences": e.result.n_correspondences,
                                 "error": str(e)}
    except CalibrationError as e:
        blocks["calibration"] = {"K": None, "error": str(e)}

    rays = PixelRays(sweep.shape, K_hat or K_init, scene)
    dead = dead_pixels(sweep, phis=phis, rays=rays)
    dead_mask = np.zeros(sweep.shape, dtype=bool)
    for u, v in dead.pixels:
        dead_mask[v, u] = True
    acc = distance_accuracy(st.mean_I, st.mean_D, phis, rays)
    profiles = intensity_profiles(st.mean_I, phis, rays)
    beam = beam_profile(profiles, exclude=dead_mask)
    tele = {name: _median(vals) for name, vals in sweep.telemetry.items()}
    rails = {name: _median(vals) for name, vals in sweep.rails.items()}

    if baseline is None:
        baseline = Baseline(K_hat, beam, tele.get("I_Laser", math.nan))
    ratio = beam.ratio(baseline.beam, K_hat, baseline.K)
    ok = np.isfinite(ratio)
    dK = delta_K(K_hat, baseline.K) if (K_hat is not None and baseline.K is not None) else None

    live = ~dead_mask[None] & np.isfinite(st.mean_D) & np.isfinite(st.std_D)
    rho = np.nan
    if live.sum() > 2 and np.ptp(st.std_D[live]) > 0 and np.ptp(st.mean_I[live]) > 0:
        rho = float(spearmanr(st.mean_I[live], st.std_D[live]).statistic)

    sigma_I = np.median(st.std_I, axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # pixels without any distance
        sigma_D = np.nanmedian(st.std_D, axis=0)

    scalars = {
        "N_dead": dead.count,
        "sigma_I_median": _median(sigma_I),
        "sigma_D_median": _median(sigma_D),
        "dD_mean": acc.summary().get("mean", math.nan),
        "P_o_peak": beam.peak,
        "P_o_ratio_median": _median(ratio[ok]) if ok.any() else math.nan,
        "beam_residual": beam.residual,
        "I_Laser": tele.get("I_Laser", math.nan),
        "eta_equiv": baseline.I_Laser / tele["I_Laser"] if tele.get("I_Laser") else math.nan,
        "spearman_I_sigma_D": rho,
    }
    if K_hat is not None:
        scalars.update(K_hat.to_dict())
    if dK is not None:
        scalars.update({f"dK_{k}": v["value"] for k, v in dK.items()})

    blocks.update({
        "dead_pixels": {"count": dead.count, "pixels": [list(p) for p in dead.pixels], "threshold": dead.threshold,
                        "floor_median": dead.floor_median, "floor_sigma": dead.floor_sigma},
        "temporal": {"n_excluded_distance": st.n_excluded},
        "distance_accuracy": {**acc.summary(), "deciles": acc.deciles},
        "beam_profile": {
            "peak": beam.peak,
            "residual": beam.residual,
            "excluded": len(beam.excluded),
            "gaps": {str(p.reflectance): len(p.gaps) for p in profiles},
            "ratio_to_baseline": {
                "median": _median(ratio[ok]) if ok.any() else None,
                "min": float(ratio[ok].min()) if ok.any() else None,
                "max": float(ratio[ok].max()) if ok.any() else None,
            },
        },
        "delta_K": dK,
        "telemetry": {"scalars": tele, "rails": rails},
    })
    maps = {"sigma_I": sigma_I, "sigma_D": sigma_D, "dD": acc.per_pixel, "P_o": beam.normalized,
            "P_o_dev": ratio - 1.0}
    return DutResult(sweep.dut_id, scalars, blocks, maps, baseline)


def analyze_bag(path, scene: TargetScene | None = None, K_init: Intrinsics | None = None,
                baselines: dict | None = None) -> BagReport:
    """Analyse every DUT of one bag. ``baselines`` maps DUT id to its
    cycle-0 :class:`Baseline` at the same set-point (omit for cycle 0)."""
    scene = scene or default_scene()
    K_init = K_init or DutSpec().nominal_intrinsics()
    bag = load_bag(path)
    h = bag.header
    rep = BagReport(str(path), h.cycle, h.step_index, float(h.T_set))
    for dut_id, sweep in sorted(bag.duts.items()):
        base = (baselines or {}).get(dut_id)
        rep.duts.append(analyze_dut(sweep, bag.phi_actual, scene, K_init, base))
    return rep


# output -----------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def dump_json(path: Path, obj) -> None:
    text = json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"
    _atomic_write(Path(path), text.encode())


def matrix_csv(a: np.ndarray) -> bytes:
    rows = [",".join("nan" if not math.isfinite(x) else repr(float(x)) for x in row) for row in np.asarray(a)]
    return ("\n".join(rows) + "\n").encode()


def pgm(a: np.ndarray, maxval: int = 255) -> bytes:
    """Plain PGM scaled to the finite range of ``a``; non-finite pixels are 0."""
    a = np.asarray(a, dtype=float)
    ok = np.isfinite(a)
    out = np.zeros(a.shape, dtype=int)
    if ok.any():
        lo, hi = a[ok].min(), a[ok].max()
        span = hi - lo if hi > lo else 1.0
        out[ok] = np.rint(1 + (a[ok] - lo) / span * (maxval - 1)).astype(int)
    h, w = a.shape
    lines = [f"P2\n{w} {h}\n{maxval}"] + [" ".join(str(x) for x in row) for row in out]
    return ("\n".join(lines) + "\n").encode()


def report_dict(rep: BagReport, config_echo: dict | None, config_sha256: str | None) -> dict:
    return {
        "report_version": REPORT_VERSION,
        "bag": Path(rep.path).name,
        "cycle": rep.cycle,
        "step_index": rep.step_index,
        "T_set": rep.T_set,
        "baseline": rep.baseline_source,
        "config": config_echo,
        "config_sha256": config_sha256,
        "duts": {str(d.dut_id): {"scalars": d.scalars, **d.blocks} for d in rep.duts},
    }


def write_report(rep: BagReport, out_dir, config_echo: dict | None = None,
                 config_sha256: str | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / f"{rep.stem}.json"]
    dump_json(written[0], report_dict(rep, config_echo, config_sha256))
    for d in rep.duts:
        for name in MAPS:
            base = f"{rep.stem}_dut{d.dut_id}_{name}"
            _atomic_write(out_dir / f"{base}.csv", matrix_csv(d.maps[name]))
            _atomic_write(out_dir / f"{base}.pgm", pgm(d.maps[name]))
            written += [out_dir / f"{base}.csv", out_dir / f"{base}.pgm"]
    return written


def trend_points(reports: list[BagReport]) -> list[dict]:
    return [
        {"cycle": r.cycle, "step": r.step_index, "T_set": r.T_set, "dut": d.dut_id, "metrics": d.scalars}
        for r in sorted(reports, key=lambda r: (r.cycle, r.step_index))
        for d in r.duts
    ]


def write_trend(reports: list[BagReport], out_dir, config_echo: dict | None = None,
                config_sha256: str | None = None) -> Path:
    summary = trend(trend_points(reports), config_echo)
    summary["config_sha256"] = config_sha256
    path = Path(out_dir) / "trend.json"
    dump_json(path, summary)
    return path

