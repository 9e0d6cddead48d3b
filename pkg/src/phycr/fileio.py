"""Binary field, trajectory and checkpoint files plus CSV writers.

All integers and floats are little-endian; payloads are row-major float64.

FieldFile  ``PHYF`` u32 version, u32 C, u32 H, u32 W, u8 dtype(=1), payload
TrajFile   ``PHYT`` same header, u32 snapshot count, f64 dt, payload
CkptFile   ``PHYC`` u32 tensor count, then per tensor u16 name length, name,
           u8 rank, u32 dims[rank], payload; then the 32-byte config hash and
           the ArchSpec block (u32 byte length + canonical JSON).
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .layers import ArchSpec
from .optim import AdamState

VERSION = 1
DTYPE_F64 = 1
_HEAD = struct.Struct("<4sIIIIB")


def _header(magic: bytes, arr: np.ndarray) -> bytes:
    c, h, w = arr.shape[-3:]
    return _HEAD.pack(magic, VERSION, c, h, w, DTYPE_F64)


def field_bytes(field: np.ndarray) -> bytes:
    field = np.asarray(field, dtype="<f8")
    if field.ndim != 3:
        raise FormatError(f"a field must be (C, H, W), got {field.shape}")
    return _header(b"PHYF", field) + field.tobytes(order="C")


def traj_bytes(frames: np.ndarray, dt: float) -> bytes:
    frames = np.asarray(frames, dtype="<f8")
    if frames.ndim != 4:
        raise FormatError(f"a trajectory must be (K, C, H, W), got {frames.shape}")
    return _header(b"PHYT", frames) + struct.pack("<Id", frames.shape[0], float(dt)) + frames.tobytes(order="C")


def _parse_header(buf: bytes, magic: bytes, path):
    if len(buf) < _HEAD.size:
        raise FormatError(f"{path}: truncated header")
    got, version, c, h, w, dtype = _HEAD.unpack_from(buf, 0)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != VERSION or dtype != DTYPE_F64:
        raise FormatError(f"{path}: unsupported version {version} / dtype {dtype}")
    return c, h, w


def parse_field(buf: bytes, path="<bytes>") -> np.ndarray:
    c, h, w = _parse_header(buf, b"PHYF", path)
    n = c * h * w
    if len(buf) != _HEAD.size + 8 * n:
        raise FormatError(f"{path}: payload is {len(buf) - _HEAD.size} bytes, header implies {8 * n}")
    return np.frombuffer(buf, dtype="<f8", offset=_HEAD.size).reshape(c, h, w).astype(np.float64)


def parse_traj(buf: bytes, path="<bytes>"):
    c, h, w = _parse_header(buf, b"PHYT", path)
    off = _HEAD.size
    if len(buf) < off + 12:
        raise FormatError(f"{path}: truncated trajectory header")
    k, dt = struct.unpack_from("<Id", buf, off)
    off += 12
    n = k * c * h * w
    if len(buf) != off + 8 * n:
        raise FormatError(f"{path}: payload is {len(buf) - off} bytes, header implies {8 * n}")
    return np.frombuffer(buf, dtype="<f8", offset=off).reshape(k, c, h, w).astype(np.float64), dt


def write_field(path, field):
    Path(path).write_bytes(field_bytes(field))


def read_field(path) -> np.ndarray:
    return parse_field(Path(path).read_bytes(), path)


def write_traj(path, frames, dt):
    Path(path).write_bytes(traj_bytes(frames, dt))


def read_traj(path):
    """Returns ``(frames, dt)``."""
    return parse_traj(Path(path).read_bytes(), path)


# -- checkpoints -----------------------------------------------------------
def ckpt_bytes(named: dict, config_hash: bytes, arch: ArchSpec) -> bytes:
    if len(config_hash) != 32:
        raise FormatError("config hash must be 32 bytes")
    parts = [b"PHYC", struct.pack("<I", len(named))]
    for name, value in named.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    spec = arch.to_json().encode()
    parts += [config_hash, struct.pack("<I", len(spec)), spec]
    return b"".join(parts)


def parse_ckpt(buf: bytes, path="<bytes>"):
    """Returns ``(named tensors, config hash, ArchSpec)``."""
    try:
        if buf[:4] != b"PHYC":
            raise FormatError(f"{path}: bad magic {buf[:4]!r}")
        (count,) = struct.unpack_from("<I", buf, 4)
        off = 8
        named = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if off + 8 * n > len(buf):
                raise FormatError(f"{path}: tensor {name!r} overruns the file")
            named[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)
            off += 8 * n
        config_hash = bytes(buf[off:off + 32])
        off += 32
        (slen,) = struct.unpack_from("<I", buf, off)
        off += 4
        spec = buf[off:off + slen].decode()
        if off + slen != len(buf) or len(config_hash) != 32:
            raise FormatError(f"{path}: trailing bytes or truncated ArchSpec block")
        return named, config_hash, ArchSpec.from_json(spec)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from exc


def checkpoint_to_named(ckpt) -> dict:
    named = dict(ckpt.params)
    for k in ckpt.params:
        named[f"adam.m.{k}"] = ckpt.adam.m[k]
        named[f"adam.v.{k}"] = ckpt.adam.v[k]
    named["adam.step"] = np.array([ckpt.adam.step], dtype=np.float64)
    named["adam.hyper"] = np.array([ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps])
    named["train.epoch"] = np.array([ckpt.epoch], dtype=np.float64)
    named["train.loss_tail"] = np.asarray(ckpt.loss_tail, dtype=np.float64).reshape(-1)
    named["train.u0"] = ckpt.u0
    return named


def named_to_checkpoint(named: dict, config_hash: bytes, arch: ArchSpec):
    from .trainer import Checkpoint

    params = {k: v for k, v in named.items() if not k.startswith(("adam.", "train."))}
    b1, b2, eps = named["adam.hyper"]
    adam = AdamState(float(b1), float(b2), float(eps), int(named["adam.step"][0]),
                     {k: named[f"adam.m.{k}"].copy() for k in params},
                     {k: named[f"adam.v.{k}"].copy() for k in params})
    return Checkpoint(params, adam, int(named["train.epoch"][0]), config_hash, arch,
                      named["train.u0"], named["train.loss_tail"])


def write_checkpoint(path, ckpt):
    Path(path).write_bytes(ckpt_bytes(checkpoint_to_named(ckpt), ckpt.config_hash, ckpt.arch))


def read_checkpoint(path):
    try:
        return named_to_checkpoint(*parse_ckpt(Path(path).read_bytes(), path))
    except KeyError as exc:
        raise FormatError(f"{path}: missing checkpoint entry {exc}") from exc


# -- CSV ------------------------------------------------------------------
CURVE_HEADER = ("step", "time", "a_rmse", "phase")
REPORT_HEADER = ("model", "time_per_epoch_s", "train_err_pct", "extrap_err_pct")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
