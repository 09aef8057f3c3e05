"""Per-temperature-step binary recording ("bag").

Layout, all little-endian::

    "ARLB" | version u16 | cycle u32 | step u16 | T_set f32 | t0 f64
    | channel_count u16 | (name_len u8, name, type u8) * channel_count
    | (channel u16, t f64, len u32, payload) *

Payload encodings by channel type:

    frame      dut_id u8, seq u32, H u16, W u16, I u16[H*W], D f32[H*W]
    telemetry  dut_id u8, 9 x f64 scalars, n_rails u8, (name_len u8, name, f64) *
    thermal    T_set f64, T_oil f64, n u8, f64[n]
    stage      index u32, phi_set f64, phi_actual f64
    command    UTF-8 JSON object (sorted keys)
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .lidar.sensor import Frame
from .lidar.telemetry import OperatingData
from .messages import StageMsg, StatusMsg, TelemetryMsg, ThermalMsg
from .simbus import KINDS

MAGIC = b"ARLB"
VERSION = 1
TYPE_CODES = {kind: i for i, kind in enumerate(KINDS)}
MAX_RECORD_BYTES = 1 << 26  # sanity cap against corrupt length fields

_HEAD = struct.Struct("<4sHIHfdH")
_REC = struct.Struct("<HdI")
_FRAME = struct.Struct("<BIHH")
_TELE = struct.Struct("<B9d")
_STAGE = struct.Struct("<Idd")


class BagError(Exception):
    pass


class BagFormatError(BagError):
    """The file is not a bag of a supported version."""


class BagCorruptionError(BagError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (record at byte offset {offset})")
        self.offset = offset


class BagTypeError(BagError, TypeError):
    pass


@dataclass(frozen=True)
class BagHeader:
    cycle: int
    step_index: int
    T_set: float
    t0: float
    channels: tuple  # ((name, kind), ...) in channel-id order
    version: int = VERSION

    def __post_init__(self):
        names = [n for n, _ in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        for name, kind in self.channels:
            if kind not in TYPE_CODES:
                raise ValueError(f"unknown channel type {kind!r}")
            if not 0 < len(name.encode()) < 256:
                raise ValueError(f"channel name length out of range: {name!r}")

    def channel_id(self, name: str) -> int:
        for i, (n, _) in enumerate(self.channels):
            if n == name:
                return i
        raise KeyError(name)

    def kind(self, name: str) -> str:
        return self.channels[self.channel_id(name)][1]


@dataclass(frozen=True)
class Record:
    channel: str
    t: float
    payload: object  # decoded message, or raw bytes


# payload codecs ----------------------------------------------------------

def _encode_frame(f: Frame) -> bytes:
    I = np.ascontiguousarray(f.I, dtype="<u2")
    D = np.ascontiguousarray(f.D, dtype="<f4")
    if I.shape != D.shape or I.ndim != 2:
        raise BagTypeError("frame I and D must be equal-shape 2-D arrays")
    h, w = I.shape
    return _FRAME.pack(f.dut_id, f.seq, h, w) + I.tobytes() + D.tobytes()


def _decode_frame(buf: bytes, t: float) -> Frame:
    dut, seq, h, w = _FRAME.unpack_from(buf)
    n = h * w
    if len(buf) != _FRAME.size + 6 * n:
        raise ValueError("frame payload size does not match its dimensions")
    I = np.frombuffer(buf, "<u2", n, _FRAME.size).reshape(h, w).astype(np.uint16)
    D = np.frombuffer(buf, "<f4", n, _FRAME.size + 2 * n).reshape(h, w).astype(np.float32)
    return Frame(dut_id=dut, seq=seq, t=t, I=I, D=D)


def _encode_telemetry(m: TelemetryMsg) -> bytes:
    d = m.data
    out = [_TELE.pack(m.dut_id, *(getattr(d, k) for k in OperatingData.SCALARS)),
           struct.pack("<B", len(d.V_rails))]
    for name in sorted(d.V_rails):
        b = name.encode()
        out.append(struct.pack("<B", len(b)) + b + struct.pack("<d", d.V_rails[name]))
    return b"".join(out)


def _decode_telemetry(buf: bytes, t: float) -> TelemetryMsg:
    vals = _TELE.unpack_from(buf)
    off = _TELE.size
    (n,) = struct.unpack_from("<B", buf, off)
    off += 1
    rails = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<B", buf, off)
        name = buf[off + 1 : off + 1 + ln].decode()
        (v,) = struct.unpack_from("<d", buf, off + 1 + ln)
        rails[name] = v
        off += 1 + ln + 8
    if off != len(buf):
        raise ValueError("trailing bytes in telemetry payload")
    data = OperatingData(**dict(zip(OperatingData.SCALARS, vals[1:])), V_rails=rails)
    return TelemetryMsg(dut_id=vals[0], data=data)


def _encode_thermal(m: ThermalMsg) -> bytes:
    return struct.pack(f"<ddB{len(m.T)}d", m.T_set, m.T_oil, len(m.T), *m.T)


def _decode_thermal(buf: bytes, t: float) -> ThermalMsg:
    T_set, T_oil, n = struct.unpack_from("<ddB", buf)
    if len(buf) != 17 + 8 * n:
        raise ValueError("thermal payload size mismatch")
    return ThermalMsg(T_set, T_oil, struct.unpack_from(f"<{n}d", buf, 17))


def _encode_stage(m: StageMsg) -> bytes:
    return _STAGE.pack(m.index, m.phi_set, m.phi_actual)


def _decode_stage(buf: bytes, t: float) -> StageMsg:
    if len(buf) != _STAGE.size:
        raise ValueError("stage payload size mismatch")
    return StageMsg(*_STAGE.unpack(buf))


def _encode_command(m) -> bytes:
    fields = m.fields if isinstance(m, StatusMsg) else m
    return json.dumps(fields, sort_keys=True, separators=(",", ":")).encode()


def _decode_command(buf: bytes, t: float) -> StatusMsg:
    return StatusMsg(json.loads(buf.decode()))


_CODECS = {
    "frame": (Frame, _encode_frame, _decode_frame),
    "telemetry": (TelemetryMsg, _encode_telemetry, _decode_telemetry),
    "thermal": (ThermalMsg, _encode_thermal, _decode_thermal),
    "stage": (StageMsg, _encode_stage, _decode_stage),
    "command": ((StatusMsg, dict), _encode_command, _decode_command),
}


def encode_payload(kind: str, payload) -> bytes:
    if isinstance(payload, (bytes, bytearray)):
        return bytes(payload)
    cls, enc, _ = _CODECS[kind]
    if not isinstance(payload, cls):
        raise BagTypeError(f"{type(payload).__name__} payload on a {kind!r} channel")
    return enc(payload)


def decode_payload(kind: str, buf: bytes, t: float = 0.0):
    return _CODECS[kind][2](buf, t)


# writing -------------------------------------------------------------------

def encode_header(header: BagHeader) -> bytes:
    parts = [_HEAD.pack(MAGIC, header.version, header.cycle, header.step_index, header.T_set,
                        header.t0, len(header.channels))]
    for name, kind in header.channels:
        b = name.encode()
        parts.append(struct.pack("<B", len(b)) + b + struct.pack("<B", TYPE_CODES[kind]))
    return b"".join(parts)


def write(path, header: BagHeader, records: Iterable[Record]) -> str:
    """Write a bag and return the sha256 hex digest of the file."""
    path = Path(path)
    ids = {name: (i, kind) for i, (name, kind) in enumerate(header.channels)}
    last_t: dict[str, float] = {}
    digest = hashlib.sha256()
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        def emit(b: bytes) -> None:
            fh.write(b)
            digest.update(b)

        emit(encode_header(header))
        for rec in records:
            if rec.channel not in ids:
                raise BagTypeError(f"record on undeclared channel {rec.channel!r}")
            cid, kind = ids[rec.channel]
            if rec.t < last_t.get(rec.channel, -math.inf):
                raise ValueError(f"timestamps decrease on channel {rec.channel!r}")
            last_t[rec.channel] = rec.t
            body = encode_payload(kind, rec.payload)
            if len(body) > MAX_RECORD_BYTES:
                raise ValueError("record exceeds the payload size cap")
            emit(_REC.pack(cid, rec.t, len(body)))
            emit(body)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return digest.hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# reading -------------------------------------------------------------------

def _read_exact(fh, n: int) -> bytes:
    b = fh.read(n)
    return b if len(b) == n else b""


def read_header(fh) -> BagHeader:
    """Parse the header from an open binary file, or from a path."""
    if not hasattr(fh, "read"):
        with open(fh, "rb") as f:
            return read_header(f)
    head = fh.read(_HEAD.size)
    if len(head) < 4 or head[:4] != MAGIC:
        raise BagFormatError("bad magic, not an ARLB bag")
    if len(head) < _HEAD.size:
        raise BagFormatError("truncated bag header")
    magic, version, cycle, step, T_set, t0, n_ch = _HEAD.unpack(head)
    if version != VERSION:
        raise BagFormatError(f"unsupported bag version {version}")
    kinds = {v: k for k, v in TYPE_CODES.items()}
    channels = []
    for _ in range(n_ch):
        ln = _read_exact(fh, 1)
        name = _read_exact(fh, ln[0]) if ln else b""
        code = _read_exact(fh, 1)
        if not ln or len(name) != ln[0] or not code:
            raise BagFormatError("truncated channel table")
        if code[0] not in kinds:
            raise BagFormatError(f"unknown channel type code {code[0]}")
        channels.append((name.decode(), kinds[code[0]]))
    try:
        return BagHeader(cycle, step, float(T_set), t0, tuple(channels), version)
    except ValueError as e:
        raise BagFormatError(str(e)) from None


class BagReader:
    """Streaming reader; iterating yields :class:`Record` one at a time."""

    def __init__(self, path, decode: bool = True):
        self.path = Path(path)
        self.decode = decode
        self._fh = open(self.path, "rb")
        self._size = os.fstat(self._fh.fileno()).st_size
        try:
            self.header = read_header(self._fh)
        except Exception:
            self._fh.close()
            raise
        self._start = self._fh.tell()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self) -> None:
        self._fh.close()

    def __iter__(self) -> Iterator[Record]:
        fh = self._fh
        fh.seek(self._start)
        channels = self.header.channels
        while True:
            offset = fh.tell()
            head = fh.read(_REC.size)
            if not head:
                return
            if len(head) < _REC.size:
                raise BagCorruptionError("truncated record header", offset)
            cid, t, n = _REC.unpack(head)
            if cid >= len(channels):
                raise BagCorruptionError(f"unknown channel id {cid}", offset)
            if n > MAX_RECORD_BYTES or offset + _REC.size + n > self._size:
                raise BagCorruptionError(f"record length {n} runs past the end of the file", offset)
            body = fh.read(n)
            if len(body) != n:
                raise BagCorruptionError("truncated record payload", offset)
            name, kind = channels[cid]
            if self.decode:
                try:
                    payload = decode_payload(kind, body, t)
                except (ValueError, struct.error, UnicodeDecodeError) as e:
                    raise BagCorruptionError(f"undecodable {kind} payload: {e}", offset) from None
            else:
                payload = body
            yield Record(name, t, payload)


def read(path, decode: bool = True) -> tuple[BagHeader, Iterator[Record]]:
    """Header plus a lazy record iterator (closes the file when exhausted)."""
    reader = BagReader(path, decode)

    def gen():
        with reader:
            yield from reader

    return reader.header, gen()


# interoperability ----------------------------------------------------------

def _csv_rows(kind: str, rec: Record):
    p = rec.payload
    if kind == "frame":
        h, w = p.I.shape
        for v in range(h):
            for u in range(w):
                yield [rec.t, p.dut_id, p.seq, u, v, int(p.I[v, u]), float(p.D[v, u])]
    elif kind == "telemetry":
        d = p.data
        yield [rec.t, p.dut_id, *(getattr(d, k) for k in OperatingData.SCALARS),
               *(d.V_rails[k] for k in sorted(d.V_rails))]
    elif kind == "thermal":
        yield [rec.t, p.T_set, p.T_oil, *p.T]
    elif kind == "stage":
        yield [rec.t, p.index, p.phi_set, p.phi_actual]
    else:
        yield [rec.t, json.dumps(p.fields, sort_keys=True)]


def _csv_header(kind: str, first: Record | None) -> list[str]:
    if kind == "frame":
        return ["t", "dut_id", "seq", "u", "v", "I", "D"]
    if kind == "telemetry":
        rails = sorted(first.payload.data.V_rails) if first is not None else []
        return ["t", "dut_id", *OperatingData.SCALARS, *(f"V_{r}" for r in rails)]
    if kind == "thermal":
        return ["t", "T_set", "T_oil", "T0", "T1", "T2", "T3", "T4"]
    if kind == "stage":
        return ["t", "index", "phi_set", "phi_actual"]
    return ["t", "json"]


def export_csv(path, out_dir) -> list[Path]:
    """One CSV per channel (frames in long format: one row per pixel)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, records = read(path)
    files: dict[str, tuple] = {}
    try:
        for rec in records:
            kind = header.kind(rec.channel)
            if rec.channel not in files:
                fname = out_dir / (rec.channel.replace("/", "_") + ".csv")
                fh = open(fname, "w", newline="")
                w = csv.writer(fh)
                w.writerow(_csv_header(kind, rec))
                files[rec.channel] = (fh, w, fname)
            w = files[rec.channel][1]
            w.writerows(_csv_rows(kind, rec))
    finally:
        for fh, _, _ in files.values():
            fh.close()
    return [files[name][2] for name, _ in header.channels if name in files]


def bag_name(cycle: int, step_index: int, T_set: float, t0: float) -> str:
    """File name carrying cycle, step, set temperature and virtual timestamp."""
    sign = "m" if T_set < 0 else "p"
    return f"c{cycle:03d}_s{step_index:02d}_T{sign}{abs(T_set):05.1f}C_t{t0:012.1f}.arlb"

