"""Load one bag into per-DUT sweep arrays.

Frames are assigned to the sweep position announced by the most recent
``stage/actual`` record, so the analysis works with the angle the stage
reported rather than the one that was commanded.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .. import bag as bagfmt
from ..lidar.telemetry import OperatingData


class CoverageError(ValueError):
    """The bag does not hold a complete sweep."""


@dataclass
class DutSweep:
    dut_id: int
    I: np.ndarray  # (P, n, H, W) uint16
    D: np.ndarray  # (P, n, H, W) float32, NaN = no return
    t: np.ndarray  # (P, n) frame timestamps
    telemetry: dict  # scalar name -> (P,) array
    rails: dict  # rail name -> (P,) array

    @property
    def shape(self) -> tuple[int, int]:
        return self.I.shape[-2:]


@dataclass
class BagData:
    header: bagfmt.BagHeader
    phi_set: np.ndarray  # (P,)
    phi_actual: np.ndarray  # (P,)
    t_pose: np.ndarray  # (P,) time the stage reported each position
    duts: dict[int, DutSweep]
    thermal: np.ndarray  # (N, 8): t, T_set, T_oil, T0..T4
    status: list[dict] = field(default_factory=list)

    @property
    def n_poses(self) -> int:
        return self.phi_actual.size


def load_bag(path) -> BagData:
    header, records = bagfmt.read(path)
    poses: dict[int, tuple[float, float, float]] = {}
    frames = defaultdict(lambda: defaultdict(list))  # dut -> pose -> [Frame]
    tele = defaultdict(dict)  # dut -> pose -> OperatingData
    thermal, status = [], []
    pose = None
    for rec in records:
        kind = header.kind(rec.channel)
        p = rec.payload
        if rec.channel == "stage/actual":
            pose = p.index
            poses[pose] = (p.phi_set, p.phi_actual, rec.t)
        elif kind == "frame":
            if pose is None:
                raise CoverageError("frame recorded before the first stage report")
            frames[p.dut_id][pose].append(p)
        elif kind == "telemetry":
            if pose is not None:
                tele[p.dut_id][pose] = p.data
        elif kind == "thermal":
            thermal.append((rec.t, p.T_set, p.T_oil, *p.T))
        elif kind == "command":
            status.append(p.fields)

    idx = sorted(poses)
    if not idx:
        raise CoverageError("bag holds no sweep positions")
    if idx != list(range(len(idx))):
        raise CoverageError("sweep positions are not contiguous")
    duts = {}
    for dut_id in sorted(frames):
        per_pose = frames[dut_id]
        counts = {len(per_pose.get(k, ())) for k in idx}
        if len(counts) != 1 or 0 in counts:
            raise CoverageError(f"DUT {dut_id}: unequal or missing frames per position")
        I = np.stack([np.stack([f.I for f in per_pose[k]]) for k in idx])
        D = np.stack([np.stack([f.D for f in per_pose[k]]) for k in idx])
        t = np.array([[f.t for f in per_pose[k]] for k in idx])
        sc = {name: np.array([getattr(tele[dut_id][k], name) if k in tele[dut_id] else np.nan for k in idx])
              for name in OperatingData.SCALARS}
        rail_names = sorted({r for d in tele[dut_id].values() for r in d.V_rails})
        rails = {r: np.array([tele[dut_id][k].V_rails.get(r, np.nan) if k in tele[dut_id] else np.nan
                              for k in idx]) for r in rail_names}
        duts[dut_id] = DutSweep(dut_id, I, D, t, sc, rails)
    return BagData(
        header=header,
        phi_set=np.array([poses[k][0] for k in idx]),
        phi_actual=np.array([poses[k][1] for k in idx]),
        t_pose=np.array([poses[k][2] for k in idx]),
        duts=duts,
        thermal=np.array(thermal, dtype=float).reshape(-1, 8) if thermal else np.zeros((0, 8)),
        status=status,
    )
