"""Degradation time series across cycles."""

from __future__ import annotations

import math

import numpy as np

from ..lidar.aging import AgingParams, arrhenius_factor

# Cycle-over-cycle changes inside these bands count as stable: absolute
# for counts, millimetre-scale distances and k1, relative otherwise.
STABILITY_BANDS = {
    "N_dead": ("absolute", 0.5),
    "P_o_peak": ("relative", 0.01),
    "P_o_ratio_median": ("absolute", 0.01),
    "eta_equiv": ("relative", 0.002),
    "I_Laser": ("relative", 0.002),
    "beam_residual": ("absolute", 0.02),
    "sigma_I_median": ("relative", 0.05),
    "sigma_D_median": ("relative", 0.05),
    "dD_mean": ("absolute", 0.002),
    "fx": ("relative", 0.002),
    "fy": ("relative", 0.002),
    "cx": ("relative", 0.002),
    "cy": ("relative", 0.002),
    "k1": ("absolute", 1e-3),
    "dK_fx": ("absolute", 0.002),
    "dK_fy": ("absolute", 0.002),
    "dK_cx": ("absolute", 0.002),
    "dK_cy": ("absolute", 0.002),
    "dK_k1": ("absolute", 1e-3),
    "spearman_I_sigma_D": ("absolute", 0.05),
}


class AlignmentError(ValueError):
    """Cycles were recorded on different set-point grids."""


def hot_seconds_series(entries: list[tuple[int, int, float]], config_echo: dict | None) -> list[float]:
    """Arrhenius-weighted operating time accumulated before each bag.

    ``entries`` are ``(cycle, step, T_set)`` in recording order; aging
    advances by one dwell at ``T_set`` after every step, mirroring the rig.
    Returns NaN everywhere when the configuration is unknown or aging is off.
    """
    if not config_echo or not config_echo.get("aging", {}).get("enabled", False):
        return [math.nan] * len(entries)
    a = config_echo["aging"]
    params = AgingParams(activation_energy_ev=a["activation_energy_ev"],
                         reference_temp_c=a["reference_temp_c"])
    prof = config_echo["profile"]
    n_up = int(round((prof["T_max"] - prof["T_min"]) / prof["T_step"])) + 1
    n_steps = n_up if prof["policy"] == "ascending" else 2 * n_up - 2
    dwell = prof["cycle_duration"] * 3600.0 / n_steps
    up = [prof["T_min"] + k * prof["T_step"] for k in range(n_up)]
    temps = up if prof["policy"] == "ascending" else up + up[-2:0:-1]
    per_cycle = [dwell * arrhenius_factor(T, params) for T in temps]
    out = []
    for cycle, step, _ in entries:
        out.append(cycle * sum(per_cycle) + sum(per_cycle[:step]))
    return out


def _fit(x, y) -> dict:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2 or np.ptp(x[ok]) == 0:
        return {"slope": None, "intercept": None, "residual_rms": None, "n": int(ok.sum())}
    slope, icpt = np.polyfit(x[ok], y[ok], 1)
    res = y[ok] - (slope * x[ok] + icpt)
    return {"slope": float(slope), "intercept": float(icpt),
            "residual_rms": float(np.sqrt(np.mean(res * res))), "n": int(ok.sum())}


def classify(metric: str, delta: float, reference: float) -> str:
    kind, band = STABILITY_BANDS.get(metric, ("relative", 0.01))
    if not (math.isfinite(delta) and math.isfinite(reference)):
        return "n/a"
    size = abs(delta) if kind == "absolute" else abs(delta) / max(abs(reference), 1e-300)
    return "stable" if size <= band else "changed"


def trend(points: list[dict], config_echo: dict | None = None) -> dict:
    """Per-DUT metric series over cycles at matched set-points.

    ``points`` hold ``cycle``, ``step``, ``T_set``, ``dut`` and ``metrics``
    (name -> scalar). Returns series, per-set-point least-squares slopes over
    the cycle index, their mean, and the log power trend against hot seconds.
    """
    cycles = sorted({p["cycle"] for p in points})
    if len(cycles) < 2:
        raise ValueError("a trend needs at least two cycles")
    grids = {}
    for p in points:
        grids.setdefault(p["cycle"], {})[p["step"]] = p["T_set"]
    ref = grids[cycles[0]]
    for c in cycles[1:]:
        if grids[c] != ref:
            raise AlignmentError(f"cycle {c} set-points differ from cycle {cycles[0]}")
    order = sorted({(p["cycle"], p["step"]) for p in points})
    hot = dict(zip(order, hot_seconds_series([(c, s, ref[s]) for c, s in order], config_echo)))

    out = {"cycles": cycles, "T_set": [ref[s] for s in sorted(ref)], "duts": {}}
    for dut in sorted({p["dut"] for p in points}):
        pts = sorted((p for p in points if p["dut"] == dut), key=lambda p: (p["cycle"], p["step"]))
        names = sorted({k for p in pts for k in p["metrics"]})
        series, slopes, deltas = {}, {}, {}
        for name in names:
            table = {(p["cycle"], p["step"]): p["metrics"].get(name, math.nan) for p in pts}
            series[name] = [{"cycle": c, "step": s, "T_set": ref[s], "hot_seconds": hot[(c, s)],
                             "value": _num(table.get((c, s), math.nan))} for c, s in order]
            per_T = {}
            for s in sorted(ref):
                ys = [_num(table.get((c, s), math.nan)) for c in cycles]
                per_T[str(ref[s])] = _fit(cycles, [math.nan if y is None else y for y in ys])
            valid = [f["slope"] for f in per_T.values() if f["slope"] is not None]
            slopes[name] = {"per_T_set": per_T, "mean_slope": float(np.mean(valid)) if valid else None}
            means = [_mean([_nan(table.get((c, s))) for s in ref]) for c in cycles]
            deltas[name] = [
                {"cycle": c, "mean": _num(m), "delta": _num(m - m0), "flag": classify(name, m - m0, m0)}
                for c, m, m0 in zip(cycles[1:], means[1:], means[:-1])
            ]
        entry = {"series": series, "slopes": slopes, "deltas": deltas}
        if "P_o_peak" in names:
            xs = [hot[(p["cycle"], p["step"])] for p in pts]
            ys = [math.log(v) if (v := _nan(p["metrics"].get("P_o_peak"))) > 0 else math.nan for p in pts]
            fit = _fit(xs, ys)
            fit["tau_P"] = -1.0 / fit["slope"] if fit["slope"] else None
            entry["log_P_o_peak_vs_hot_seconds"] = fit
        if "eta_equiv" in names:
            xs = [hot[(p["cycle"], p["step"])] for p in pts]
            ys = [math.log(v) if (v := _nan(p["metrics"].get("eta_equiv"))) > 0 else math.nan for p in pts]
            entry["log_eta_equiv_vs_hot_seconds"] = _fit(xs, ys)
        out["duts"][str(dut)] = entry
    return out


def _nan(v) -> float:
    return math.nan if v is None else float(v)


def _num(v):
    v = _nan(v)
    return v if math.isfinite(v) else None


def _mean(values) -> float:
    v = [x for x in values if math.isfinite(x)]
    return sum(v) / len(v) if v else math.nan
