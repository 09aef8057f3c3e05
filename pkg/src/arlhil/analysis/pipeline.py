"""Analyse a set of bags: cycle-0 baselines first, then later cycles, then
the cross-cycle trend."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .. import bag as bagfmt
from ..lidar.camera import DutSpec
from ..lidar.scene import TargetScene, default_scene
from .loader import CoverageError
from .report import BagReport, analyze_bag, write_report, write_trend
from .trend import AlignmentError

log = logging.getLogger(__name__)


@dataclass
class AnalysisRun:
    reports: list[BagReport] = field(default_factory=list)
    written: list[Path] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    trend_path: Path | None = None


def bags_from_manifest(path) -> tuple[list[Path], dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    return [path.parent / b["path"] for b in manifest["bags"]], manifest


def analyze_bags(paths, out_dir, config_echo: dict | None = None, config_sha256: str | None = None,
                 scene: TargetScene | None = None) -> AnalysisRun:
    """Analyse ``paths`` into ``out_dir``; a bag that cannot be read is
    skipped with an error line and the others are still processed."""
    scene = scene or default_scene()
    spec = DutSpec(**config_echo["dut"]) if config_echo and "dut" in config_echo else DutSpec()
    K_init = spec.nominal_intrinsics()
    out_dir = Path(out_dir)
    run = AnalysisRun()

    headers = []
    for p in paths:
        try:
            headers.append((bagfmt.read_header(p), Path(p)))
        except (bagfmt.BagError, OSError) as e:
            run.errors.append(f"{p}: {e}")
    headers.sort(key=lambda hp: (hp[0].cycle, hp[0].step_index, str(hp[1])))

    baselines: dict[int, dict] = {}  # step -> dut -> Baseline
    for h, p in headers:
        base = baselines.get(h.step_index) if h.cycle > 0 else None
        try:
            rep = analyze_bag(p, scene, K_init, base)
        except (bagfmt.BagError, CoverageError, OSError) as e:
            run.errors.append(f"{p}: {e}")
            continue
        if h.cycle == 0:
            baselines[h.step_index] = {d.dut_id: d.baseline for d in rep.duts}
        rep.baseline_source = "cycle0" if base is not None or h.cycle == 0 else "self"
        run.written += write_report(rep, out_dir, config_echo, config_sha256)
        run.reports.append(rep)
        log.info("analysed %s", p.name)

    if len({r.cycle for r in run.reports}) >= 2:
        try:
            run.trend_path = write_trend(run.reports, out_dir, config_echo, config_sha256)
            run.written.append(run.trend_path)
        except AlignmentError as e:
            run.errors.append(f"trend: {e}")
    return run


def analyze_manifest(path, out_dir, scene: TargetScene | None = None) -> AnalysisRun:
    paths, manifest = bags_from_manifest(path)
    return analyze_bags(paths, out_dir, manifest.get("config"), manifest.get("config_sha256"), scene)
