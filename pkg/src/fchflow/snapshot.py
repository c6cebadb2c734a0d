"""Binary snapshots of the physical-space fields.

Layout (little-endian)::

    b"FCHF" | u32 version | u32 dim | u32 n[dim] | f64 L[dim] | f64 t
    | u32 field_count | (u32 name_len, utf-8 name) * field_count
    | f64 payload, row-major, one block of prod(n) values per field

Writes go to a temporary file in the target directory and are renamed into
place. Diagnostics accumulators needed for a restart live in a JSON sidecar
next to the snapshot.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelParams, PhaseState
from .spectral import Field, Grid, VectorField

MAGIC = b"FCHF"
VERSION = 1
COMPONENT_NAMES = ("u_x", "u_y", "u_z")


class SnapshotError(IOError):
    pass


class BadMagicError(SnapshotError):
    pass


class UnsupportedVersionError(SnapshotError):
    pass


class TruncatedPayloadError(SnapshotError):
    pass


@dataclass(frozen=True)
class SnapshotHeader:
    version: int
    dim: int
    n: tuple[int, ...]
    length: tuple[float, ...]
    t: float
    names: tuple[str, ...]
    payload_offset: int

    @property
    def payload_bytes(self) -> int:
        return len(self.names) * math.prod(self.n) * 8

    def describe(self) -> str:
        lines = [
            f"format   FCHF v{self.version}",
            f"dim      {self.dim}",
            f"n        {' x '.join(str(v) for v in self.n)}",
            f"L        {', '.join(f'{v:.17g}' for v in self.length)}",
            f"t        {self.t:.17g}",
            f"fields   {', '.join(self.names)}",
            f"payload  {self.payload_bytes} bytes",
        ]
        return "\n".join(lines)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_snapshot(state: PhaseState) -> bytes:
    g = state.grid
    names = ("phi",) + COMPONENT_NAMES[: g.dim]
    parts = [MAGIC, struct.pack("<II", VERSION, g.dim), struct.pack(f"<{g.dim}I", *g.n),
             struct.pack(f"<{g.dim}d", *g.length), struct.pack("<d", state.t),
             struct.pack("<I", len(names))]
    for name in names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    blocks = [state.phi.values] + [state.u.values[i] for i in range(g.dim)]
    for b in blocks:
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes(order="C"))
    return b"".join(parts)


def write_snapshot(path, state: PhaseState, sidecar: dict | None = None) -> None:
    path = Path(path)
    _atomic_write(path, encode_snapshot(state))
    if sidecar is not None:
        _atomic_write(sidecar_path(path), json.dumps(sidecar, indent=1).encode("utf-8"))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _unpack(fmt: str, buf: bytes, offset: int):
    size = struct.calcsize(fmt)
    if offset + size > len(buf):
        raise TruncatedPayloadError("truncated header")
    return struct.unpack_from(fmt, buf, offset), offset + size


def decode_header(buf: bytes) -> SnapshotHeader:
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version, dim), off = _unpack("<II", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported snapshot version {version}")
    if dim not in (2, 3):
        raise SnapshotError(f"invalid dimension {dim}")
    n, off = _unpack(f"<{dim}I", buf, off)
    length, off = _unpack(f"<{dim}d", buf, off)
    (t,), off = _unpack("<d", buf, off)
    (count,), off = _unpack("<I", buf, off)
    names = []
    for _ in range(count):
        (ln,), off = _unpack("<I", buf, off)
        if off + ln > len(buf):
            raise TruncatedPayloadError("truncated header")
        names.append(buf[off:off + ln].decode("utf-8"))
        off += ln
    return SnapshotHeader(version, dim, tuple(n), tuple(length), t, tuple(names), off)


def read_header(path) -> SnapshotHeader:
    return decode_header(Path(path).read_bytes())


def decode_snapshot(buf: bytes, dealias_fraction: float = 1.0 / 3.0,
                    params: ModelParams | None = None) -> PhaseState:
    hdr = decode_header(buf)
    if len(buf) - hdr.payload_offset < hdr.payload_bytes:
        raise TruncatedPayloadError(
            f"truncated payload: expected {hdr.payload_bytes} bytes, found {len(buf) - hdr.payload_offset}")
    grid = Grid(hdr.dim, hdr.n, hdr.length, dealias_fraction)
    data = np.frombuffer(buf, dtype="<f8", count=len(hdr.names) * grid.size, offset=hdr.payload_offset)
    blocks = dict(zip(hdr.names, data.reshape((len(hdr.names),) + grid.shape).astype(np.float64)))
    try:
        phi = Field(grid, blocks["phi"].copy())
        u = VectorField(grid, np.stack([blocks[c] for c in COMPONENT_NAMES[: hdr.dim]]))
    except KeyError as exc:
        raise SnapshotError(f"snapshot lacks field {exc.args[0]!r}") from None
    state = PhaseState(hdr.t, phi, u)
    return state.refresh(params) if params is not None else state


def read_snapshot(path, dealias_fraction: float = 1.0 / 3.0,
                  params: ModelParams | None = None) -> PhaseState:
    return decode_snapshot(Path(path).read_bytes(), dealias_fraction, params)


def read_sidecar(path) -> dict | None:
    p = sidecar_path(path)
    if not p.exists():
        return None
    return json.loads(p.read_text())
