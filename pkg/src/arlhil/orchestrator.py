"""Master node and the simulated rig nodes it drives over the bus.

Per temperature set-point the master commands the climate loop, waits until
all housings have settled, sweeps the stage across the horizontal field of
view while every DUT captures a burst of frames per position, and stores
one bag.  Sensor aging then advances by the dwell of the step.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bag as bagfmt
from .config import SCHEMA_VERSION, CampaignConfig, canonical_json, config_hash, echo
from .lidar.aging import AgingState, Injection, advance_aging, apply_injection
from .lidar.scene import TargetScene, default_scene
from .lidar.sensor import SensorGeometry, burst_seed, capture_frames, render_pose
from .lidar.telemetry import telemetry
from .messages import CaptureRequest, SetpointMsg, StageMsg, StatusMsg, TelemetryMsg, ThermalMsg
from .simbus import Bus, Delivery
from .stage import StageState, move_to, sweep_grid
from .thermal import SettlingMonitor, ThermalRig, ThermalState

log = logging.getLogger(__name__)

# independent random streams below the campaign seed
STREAM_STAGE, STREAM_CAPTURE, STREAM_TELEMETRY, STREAM_AGING = 1, 2, 3, 4


class CampaignAbort(RuntimeError):
    pass


class SettlingTimeout(CampaignAbort):
    pass


def dut_channels(i: int) -> tuple[str, str, str]:
    return f"dut{i}/cmd", f"dut{i}/frame", f"dut{i}/telemetry"


def bag_channels(n_duts: int) -> tuple:
    chans = [("thermal/state", "thermal"), ("stage/cmd", "stage"), ("stage/actual", "stage"),
             ("master/status", "command")]
    for i in range(n_duts):
        _, frame, tele = dut_channels(i)
        chans += [(frame, "frame"), (tele, "telemetry")]
    return tuple(chans)


# nodes -------------------------------------------------------------------------

class ThermalNode:
    """Integrates the climate loop and publishes the thermocouples periodically."""

    def __init__(self, bus: Bus, rig: ThermalRig, period: float):
        self.bus = bus
        self.rig = rig
        self.substeps = max(1, int(round(period / rig.dt)))
        bus.subscribe("thermal/setpoint", self._on_setpoint)
        bus.every(self.substeps * rig.dt, self._tick, name="thermal")

    def _on_setpoint(self, msg: Delivery) -> None:
        self.rig.T_set = msg.payload.T_set

    def _tick(self, t: float) -> None:
        s = self.rig.run_steps(self.substeps)
        self.bus.publish("thermal/state", ThermalMsg(self.rig.T_set, s.T_oil, s.thermocouples()), t)


class StageNode:
    def __init__(self, bus: Bus, state: StageState, rng: np.random.Generator):
        self.bus = bus
        self.state = state
        self.rng = rng
        bus.subscribe("stage/cmd", self._on_cmd)

    def _on_cmd(self, msg: Delivery) -> None:
        cmd = msg.payload
        move = move_to(self.state, cmd.phi_set, self.rng)
        self.state = move.state
        report = StageMsg(cmd.index, move.state.phi_set, move.state.phi_actual)
        self.bus.publish("stage/actual", report, msg.t + move.duration)


@dataclass(frozen=True)
class AgeRequest:
    KIND = "command"
    dwell: float
    temp_c: float
    cycle: int
    step: int


@dataclass(frozen=True)
class InjectRequest:
    KIND = "command"
    injection: Injection


@dataclass(frozen=True)
class StepContext:
    KIND = "command"
    cycle: int
    step: int


class DutNode:
    """One simulated sensor: captures bursts on request and owns its aging state."""

    def __init__(self, bus: Bus, dut_id: int, cfg: CampaignConfig, scene: TargetScene):
        self.bus = bus
        self.dut_id = dut_id
        self.cfg = cfg
        self.scene = scene
        self.nominal = cfg.dut.nominal_intrinsics()
        self.aging = AgingState()
        self.housing_c = cfg.ambient_c
        self.context = (0, 0)
        self.truth_log: list[dict] = []
        self._geometry: SensorGeometry | None = None
        cmd, self.frame_channel, self.tele_channel = dut_channels(dut_id)
        bus.subscribe(cmd, self._on_cmd)
        bus.subscribe("thermal/state", self._on_thermal)

    def _on_thermal(self, msg: Delivery) -> None:
        self.housing_c = msg.payload.T[2 + self.dut_id]

    def geometry(self) -> SensorGeometry:
        K = self.aging.intrinsics(self.nominal)
        if self._geometry is None or self._geometry.K != K:
            self._geometry = SensorGeometry(self.cfg.dut, K, self.cfg.sensor.supersample, self.scene)
        return self._geometry

    def _on_cmd(self, msg: Delivery) -> None:
        req = msg.payload
        if isinstance(req, StepContext):
            self.context = (req.cycle, req.step)
            self.truth_log = []
        elif isinstance(req, CaptureRequest):
            self._capture(req, msg.t)
        elif isinstance(req, AgeRequest):
            seed = burst_seed(self.cfg.seed, STREAM_AGING, req.cycle, req.step, self.dut_id)
            self.aging = advance_aging(self.aging, req.dwell, req.temp_c, seed, self.cfg.aging,
                                       self.cfg.dut.shape, self.nominal)
        elif isinstance(req, InjectRequest):
            self.aging = apply_injection(self.aging, req.injection, self.nominal)
        else:
            raise TypeError(f"unexpected DUT command {type(req).__name__}")

    def _capture(self, req: CaptureRequest, t: float) -> None:
        cycle, step = self.context
        counters = (cycle, step, req.pose_index, self.dut_id)
        data = telemetry(self.housing_c, self.aging, burst_seed(self.cfg.seed, STREAM_TELEMETRY, *counters),
                         self.cfg.telemetry)
        self.bus.publish(self.tele_channel, TelemetryMsg(self.dut_id, data), t)
        pose = render_pose(req.phi_deg, self.geometry(), self.aging, self.cfg.sensor)
        frames = capture_frames(pose, req.n_frames, self.housing_c, self.cfg.sensor, self.cfg.dut,
                                burst_seed(self.cfg.seed, STREAM_CAPTURE, *counters),
                                dut_id=self.dut_id, seq0=req.seq0, t0=t)
        self.truth_log.append({"pose": req.pose_index, "phi_deg": frames[0].truth.phi_deg,
                               "housing_c": self.housing_c})
        for f in frames:
            # the ground-truth sidecar stays in the simulator
            self.bus.publish(self.frame_channel, replace(f, truth=None), f.t)


class Recorder:
    """Collects bag channels in delivery order while active."""

    def __init__(self, bus: Bus, channels: tuple):
        self.channels = channels
        self.active = False
        self.records: list[bagfmt.Record] = []
        self.counts: dict[str, int] = {name: 0 for name, _ in channels}
        for name, _ in channels:
            bus.subscribe(name, self._on_msg)

    def _on_msg(self, msg: Delivery) -> None:
        self.counts[msg.channel] += 1
        if self.active:
            self.records.append(bagfmt.Record(msg.channel, msg.t, msg.payload))

    def start(self) -> None:
        self.records = []
        self.active = True

    def stop(self) -> list[bagfmt.Record]:
        self.active = False
        out, self.records = self.records, []
        return out


# campaign ------------------------------------------------------------------------

@dataclass
class BagEntry:
    cycle: int
    step_index: int
    T_set_C: float
    path: str
    sha256: str
    t_settled: float
    t_start: float
    t_end: float
    truth: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Rig:
    """All nodes of one campaign wired to one bus."""

    cfg: CampaignConfig
    scene: TargetScene = field(default_factory=default_scene)

    def __post_init__(self):
        cfg = self.cfg
        # payloads are never mutated by any node, so the bus may share them
        self.bus = Bus(copy_payloads=False)
        for name, kind in bag_channels(cfg.n_duts):
            self.bus.register(name, kind)
        self.bus.register("thermal/setpoint", "command")
        for i in range(cfg.n_duts):
            self.bus.register(dut_channels(i)[0], "command")

        state = ThermalState.uniform(cfg.ambient_c, len(cfg.plant.r_plate_housing))
        self.thermal = ThermalNode(self.bus, ThermalRig(cfg.plant, cfg.gains, state=state, T_set=cfg.ambient_c),
                                   cfg.thermal_period)
        stage_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, STREAM_STAGE]))
        st = cfg.stage
        phi0 = min(max(0.0, st.limits[0]), st.limits[1])
        self.stage = StageNode(self.bus, StageState(phi0, phi0, st.slew_rate, st.sigma_phi, tuple(st.limits)),
                               stage_rng)
        self.duts = [DutNode(self.bus, i, cfg, self.scene) for i in range(cfg.n_duts)]
        self.recorder = Recorder(self.bus, bag_channels(cfg.n_duts))

        self.monitor: SettlingMonitor | None = None
        self.last_actual: StageMsg | None = None
        self.bus.subscribe("thermal/state", self._on_thermal)
        self.bus.subscribe("stage/actual", self._on_actual)
        self.grid = sweep_grid(cfg.sweep.phi_lo, cfg.sweep.phi_hi, cfg.sweep.step)
        self.seq = [0] * cfg.n_duts

    def _on_thermal(self, msg: Delivery) -> None:
        if self.monitor is not None:
            s = msg.payload
            st = ThermalState(s.T[0], s.T[1], tuple(s.T[2:]), s.T_oil)
            self.monitor.update(msg.t, st)

    def _on_actual(self, msg: Delivery) -> None:
        self.last_actual = msg.payload

    def _move(self, index: int, phi: float) -> StageMsg:
        bus = self.bus
        bus.publish("stage/cmd", StageMsg(index, float(phi)))
        timeout = 2.0 * abs(phi - self.stage.state.phi_actual) / self.cfg.stage.slew_rate + 1.0
        bus.run_until(lambda: self.last_actual is not None and self.last_actual.index == index, timeout)
        return self.last_actual

    def run_step(self, cycle: int, step: int, T_set: float, out_dir: Path) -> BagEntry:
        cfg, bus = self.cfg, self.bus
        n = cfg.frames_per_position
        t_start = bus.now
        for i in range(cfg.n_duts):
            bus.publish(dut_channels(i)[0], StepContext(cycle, step))
        bus.publish("thermal/setpoint", SetpointMsg(T_set))
        self.monitor = SettlingMonitor(T_set, cfg.eps, cfg.hold)
        try:
            bus.run_until(lambda: self.monitor.settled_at is not None, cfg.settle_timeout)
        except TimeoutError:
            raise SettlingTimeout(
                f"cycle {cycle} step {step}: housings did not settle at {T_set} degC within "
                f"{cfg.settle_timeout} s (last state {self.thermal.rig.state})"
            ) from None
        t_settled = self.monitor.settled_at
        self.monitor = None

        rec = self.recorder
        rec.start()
        bus.publish("master/status", StatusMsg({
            "event": "settled", "cycle": cycle, "step_index": step, "T_set_C": T_set,
            "t_settled": t_settled, "eps": cfg.eps, "hold": cfg.hold,
        }))
        frame_chans = [dut_channels(i)[1] for i in range(cfg.n_duts)]
        # the stage starts each sweep from wherever it was left
        self.last_actual = None
        for k, phi in enumerate(self.grid):
            actual = self._move(k, phi)
            target = [rec.counts[c] + n for c in frame_chans]
            for i in range(cfg.n_duts):
                bus.publish(dut_channels(i)[0], CaptureRequest(k, actual.phi_actual, n, self.seq[i]))
                self.seq[i] += n
            span = (n + 1) / cfg.dut.max_frame_rate_hz
            bus.run_until(lambda: all(rec.counts[c] >= m for c, m in zip(frame_chans, target)), span + 1.0)
        records = rec.stop()
        t_end = bus.now
        self._move(len(self.grid), self.grid[0])

        name = bagfmt.bag_name(cycle, step, T_set, t_settled)
        header = bagfmt.BagHeader(cycle, step, float(np.float32(T_set)), t_settled, bag_channels(cfg.n_duts))
        sha = bagfmt.write(out_dir / name, header, records)
        truth_name = name + ".truth.json"
        truth = {
            "cycle": cycle, "step_index": step, "T_set_C": T_set,
            "duts": [{"dut_id": d.dut_id, "aging": d.aging.to_dict(),
                      "intrinsics": d.aging.intrinsics(d.nominal).to_dict(), "poses": d.truth_log}
                     for d in self.duts],
        }
        (out_dir / truth_name).write_text(json.dumps(truth, sort_keys=True, indent=1))
        log.info("cycle %d step %d T_set %.1f: settled at %.1f s, %d records", cycle, step, T_set,
                 t_settled, len(records))
        return BagEntry(cycle, step, T_set, name, sha, t_settled, t_start, t_end, truth_name)

    def finish_step(self, cycle: int, step: int, T_set: float, dwell: float, t_step_end: float) -> None:
        for i in range(self.cfg.n_duts):
            self.bus.publish(dut_channels(i)[0], AgeRequest(dwell, T_set, cycle, step))
        self.bus.advance(max(t_step_end - self.bus.now, 1e-9))

    def inject(self, cycle: int) -> None:
        for inj in self.cfg.injections:
            for i in range(self.cfg.n_duts):
                if inj.applies(cycle, i):
                    self.bus.publish(dut_channels(i)[0], InjectRequest(inj))


def run_cycle(rig: Rig, cycle: int, out_dir: Path) -> list[BagEntry]:
    cfg = rig.cfg
    prof = cfg.profile
    dwell = prof.dwell
    t_cycle = rig.bus.now
    rig.inject(cycle)
    entries = []
    n_up = len(prof.ascending())
    for step, T_set in enumerate(prof.setpoints()):
        if step < n_up or cfg.record_descending:
            entries.append(rig.run_step(cycle, step, T_set, out_dir))
        else:
            rig.bus.publish("thermal/setpoint", SetpointMsg(T_set))
        rig.finish_step(cycle, step, T_set, dwell, t_cycle + (step + 1) * dwell)
    return entries


def manifest_dict(cfg: CampaignConfig, entries: list[BagEntry], status: str, error: str | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "status": status,
        "error": error,
        "config": echo(cfg),
        "config_sha256": config_hash(cfg),
        "bags": [e.to_dict() for e in entries],
    }


def write_manifest(path: Path, manifest: dict) -> None:
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(canonical_json(manifest) + "\n")
    os.replace(tmp, path)


MANIFEST_NAME = "manifest.json"


def run_campaign(cfg: CampaignConfig, out_dir=None, scene: TargetScene | None = None,
                 progress=None) -> dict:
    """Run ``cfg.cycles`` cycles and write the manifest; returns it.

    On failure a partial manifest (status ``aborted``) is written before the
    exception propagates.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries: list[BagEntry] = []
    manifest_path = out / MANIFEST_NAME
    if cfg.cycles == 0:
        m = manifest_dict(cfg, entries, "complete")
        write_manifest(manifest_path, m)
        return m
    rig = Rig(cfg, scene or default_scene())
    try:
        for c in range(cfg.cycles):
            entries += run_cycle(rig, c, out)
            if progress is not None:
                progress(c, entries)
    except (CampaignAbort, OSError) as e:
        write_manifest(manifest_path, manifest_dict(cfg, entries, "aborted", str(e)))
        raise
    m = manifest_dict(cfg, entries, "complete")
    write_manifest(manifest_path, m)
    return m


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())

