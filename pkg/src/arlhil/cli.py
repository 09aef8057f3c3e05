"""Command-line entry point: run campaigns, analyse bags, print trend reports.

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from .analysis.pipeline import analyze_bags, bags_from_manifest
from .lidar.sensor import SensorParams
from .orchestrator import MANIFEST_NAME, CampaignAbort, run_campaign
from .thermal import SETTLE_BOUND_S

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
OUT_ENV = "ARLB_OUT"
TIDY_NAME = "trend_tidy.csv"

log = logging.getLogger("arlhil")


def _out_dir(arg: str | None, default: str) -> Path:
    return Path(os.environ.get(OUT_ENV) or arg or default)


def load_config(path: str | None) -> cfgmod.CampaignConfig:
    return cfgmod.load(path) if path else cfgmod.CampaignConfig()


def apply_overrides(cfg: cfgmod.CampaignConfig, args) -> cfgmod.CampaignConfig:
    changes = {}
    if args.cycles is not None:
        changes["cycles"] = args.cycles
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.profile is not None:
        changes["profile"] = dataclasses.replace(cfg.profile, policy=args.profile)
    if args.parametric_mode:
        changes["sensor"] = dataclasses.replace(cfg.sensor, mode="parametric")
    try:
        return cfg.with_updates(**changes)
    except (ValueError, TypeError) as e:
        raise cfgmod.ConfigError(str(e)) from None


# run ----------------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        cfg = apply_overrides(load_config(args.config), args)
    except cfgmod.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = _out_dir(args.out, cfg.out_dir)
    n_steps = len(cfg.profile.setpoints())
    print(f"campaign: {cfg.cycles} cycle(s) x {n_steps} set-points, seed {cfg.seed}, "
          f"sensor {cfg.sensor.mode}, output {out}")

    def progress(cycle, entries):
        print(f"cycle {cycle + 1}/{cfg.cycles} done: {len(entries)} bag(s) written", flush=True)

    try:
        run_campaign(cfg, out, progress=progress)
    except (CampaignAbort, OSError) as e:
        print(f"error: campaign aborted: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out / MANIFEST_NAME)
    return EXIT_OK


# analyze ------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    bags, echo, sha = [], None, None
    manifest_dir = None
    for p in map(Path, args.inputs):
        if p.is_dir() and (p / MANIFEST_NAME).is_file():
            p = p / MANIFEST_NAME
        if p.suffix == ".json":
            try:
                paths, manifest = bags_from_manifest(p)
            except (OSError, ValueError, KeyError) as e:
                print(f"error: cannot read manifest {p}: {e}", file=sys.stderr)
                return EXIT_USAGE
            bags += paths
            echo, sha = manifest.get("config"), manifest.get("config_sha256")
            manifest_dir = manifest_dir or p.parent
        else:
            bags.append(p)
    if not bags:
        print("error: no bags to analyse", file=sys.stderr)
        return EXIT_USAGE
    default = str((manifest_dir or bags[0].parent) / "reports")
    out = _out_dir(args.out, default)
    run = analyze_bags(bags, out, echo, sha)
    for rep in run.reports:
        print(f"ok  {Path(rep.path).name}")
    for err in run.errors:
        print(f"error: {err}", file=sys.stderr)
    print(f"{len(run.reports)} report(s) in {out}" + (f", trend {run.trend_path}" if run.trend_path else ""))
    return EXIT_RUNTIME if run.errors else EXIT_OK


# report ---------------------------------------------------------------------------

REPORT_COLUMNS = ("P_o_peak", "P_o_ratio_median", "eta_equiv", "N_dead", "fx", "sigma_I_median", "dD_mean")
COLUMN_LABELS = {"P_o_peak": "P_o peak", "P_o_ratio_median": "P_o ratio", "eta_equiv": "eta equiv",
                 "N_dead": "N_dead", "fx": "fx", "sigma_I_median": "sigma_I", "dD_mean": "dD mean"}


def tidy_rows(summary: dict) -> list[tuple]:
    rows = []
    for dut, entry in sorted(summary.get("duts", {}).items(), key=lambda kv: int(kv[0])):
        for metric, series in sorted(entry.get("series", {}).items()):
            for pt in series:
                rows.append((pt["cycle"], pt["step"], f"dut{dut}.{metric}", pt["value"]))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def _fmt(v) -> str:
    if v is None:
        return "-"
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def format_report(summary: dict) -> str:
    buf = io.StringIO()
    for dut, entry in sorted(summary.get("duts", {}).items(), key=lambda kv: int(kv[0])):
        deltas = entry.get("deltas", {})
        cols = [c for c in REPORT_COLUMNS if c in deltas]
        buf.write(f"DUT {dut}\n")
        buf.write("cycle  " + "  ".join(f"{COLUMN_LABELS[c]:>14}" for c in cols) + "\n")
        # cycle means: first cycle from the series, later ones from the delta records
        first = {c: _cycle_mean(entry["series"][c], summary["cycles"][0]) for c in cols}
        buf.write(f"{summary['cycles'][0]:>5}  " + "  ".join(f"{_fmt(first[c]):>14}" for c in cols) + "\n")
        for i, cyc in enumerate(summary["cycles"][1:]):
            buf.write(f"{cyc:>5}  " + "  ".join(f"{_fmt(deltas[c][i]['mean']):>14}" for c in cols) + "\n")
        for name in sorted(deltas):
            for d in deltas[name]:
                buf.write(f"  {name:<20} cycle {d['cycle']}: delta {_fmt(d['delta']):>12}  {d['flag']}\n")
        fit = entry.get("log_P_o_peak_vs_hot_seconds")
        if fit and fit.get("slope") is not None:
            buf.write(f"  log(P_o peak) slope {fit['slope']:.6g} per hot second (tau_P {_fmt(fit.get('tau_P'))})\n")
    return buf.getvalue()


def _cycle_mean(series, cycle):
    v = [p["value"] for p in series if p["cycle"] == cycle and p["value"] is not None]
    return sum(v) / len(v) if v else None


def cmd_report(args) -> int:
    path = Path(args.summary)
    if path.is_dir():
        path = path / "trend.json"
    try:
        summary = json.loads(path.read_text())
    except FileNotFoundError:
        print(f"error: trend summary not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as e:
        print(f"error: {path}: invalid JSON ({e})", file=sys.stderr)
        return EXIT_USAGE
    if not summary or not summary.get("duts"):
        print("no data")
        return EXIT_OK
    print(format_report(summary), end="")
    out = Path(os.environ.get(OUT_ENV) or args.out or path.parent) / TIDY_NAME
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cycle", "step", "metric", "value"))
        for c, s, m, v in tidy_rows(summary):
            w.writerow((c, s, m, "" if v is None else repr(v)))
    print(f"tidy CSV: {out}")
    return EXIT_OK


# validate-config ------------------------------------------------------------------

def cmd_validate(args) -> int:
    if args.show_defaults:
        d = cfgmod.to_dict(cfgmod.CampaignConfig())
        print(json.dumps({"defaults": d, "provenance": cfgmod.PROVENANCE}, indent=1, sort_keys=True))
        return EXIT_OK
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = cfgmod.load(args.config)
    except cfgmod.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"ok: {args.config}")
    print(f"config_sha256 {cfgmod.config_hash(cfg)}")
    print(f"{cfg.cycles} cycle(s) x {len(cfg.profile.setpoints())} set-points, "
          f"dwell {cfg.profile.dwell:.1f} s, settle bound {SETTLE_BOUND_S:.0f} s")
    return EXIT_OK


# parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arlhil", description="Virtual accelerated-aging test bench for flash LiDAR.")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress details")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a thermal-cycling campaign")
    r.add_argument("--config", help="JSON config file (defaults if omitted)")
    r.add_argument("--cycles", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--profile", choices=("ascending", "triangular"))
    r.add_argument("--out", help=f"output directory (overridden by ${OUT_ENV})")
    r.add_argument("--parametric-mode", action="store_true", help="closed-form detection instead of waveforms")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="compute metric reports from a manifest or bags")
    a.add_argument("inputs", nargs="+", help="manifest.json, a run directory, or .arlb files")
    a.add_argument("--out", help=f"report directory (overridden by ${OUT_ENV})")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("report", help="print cycle-over-cycle deltas from a trend summary")
    t.add_argument("summary", help="trend.json or the report directory holding it")
    t.add_argument("--out", help=f"directory for the tidy CSV (overridden by ${OUT_ENV})")
    t.set_defaults(func=cmd_report)

    v = sub.add_parser("validate-config", help="check a config file")
    v.add_argument("--config")
    v.add_argument("--show-defaults", action="store_true", help="print defaults with provenance tags")
    v.set_defaults(func=cmd_validate)
    for sp in (r, a, t, v):
        sp.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
