"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes  b"W2TCKPT\\0"
    version    u32
    fingerprint, rng JSON, meta JSON     each: u32 byte length + UTF-8
    frozen     u32 count, then that many strings
    optimizer  u8 flag; if 1: kind string, f64 lr, f64 momentum,
               f64 beta1, f64 beta2, f64 eps, u64 step count,
               u32 buffer count, then named arrays
    params     u32 count, then named arrays

A named array is a string, u32 ndim, u64 per dim, then the fp64 LE data.
JSON is written with sorted keys so re-saving a loaded checkpoint gives
the same bytes.
"""

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc

MAGIC = b"W2TCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    fingerprint: str
    scope: str = "model"
    epoch: int = 0
    frozen: list = field(default_factory=list)
    optimizer: dc.OptimizerState = None
    rng_state: dict = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, params, cfg, scope="model", names=None, **kw):
        names = list(params.names()) if names is None else list(names)
        missing = [n for n in names if n not in params]
        if missing:
            raise CheckpointError(f"missing parameter paths: {missing}")
        arrays = {n: params[n].data.copy() for n in names}
        frozen = sorted(p for p in params.frozen if p in arrays)
        return cls(arrays, cfg.fingerprint(scope), scope, frozen=frozen, **kw)

    def check_config(self, cfg):
        expected = cfg.fingerprint(self.scope)
        if expected != self.fingerprint:
            raise CheckpointError(
                f"config fingerprint mismatch for scope {self.scope!r}: "
                f"checkpoint {self.fingerprint[:12]}, config {expected[:12]}")

    def apply_to(self, params, cfg, strict=True):
        """Copy stored arrays into ``params`` after checking the fingerprint."""
        self.check_config(cfg)
        params.load_arrays(self.params, strict=strict)

    def restore_rng(self):
        rng = np.random.default_rng()
        if self.rng_state is not None:
            rng.bit_generator.state = self.rng_state
        return rng


# ------------------------------------------------------------------ writing

def _u32(v):
    return struct.pack("<I", v)


def _str(s):
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


def _array(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = _str(name) + _u32(arr.ndim) + b"".join(struct.pack("<Q", d) for d in arr.shape)
    return head + arr.tobytes()


def _json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def to_bytes(ckpt):
    out = io.BytesIO()
    out.write(MAGIC + _u32(VERSION))
    out.write(_str(ckpt.fingerprint))
    out.write(_str(_json(ckpt.rng_state)))
    meta = dict(ckpt.meta)
    meta["epoch"] = int(ckpt.epoch)
    meta["scope"] = ckpt.scope
    out.write(_str(_json(meta)))
    out.write(_u32(len(ckpt.frozen)))
    for name in ckpt.frozen:
        out.write(_str(name))
    opt = ckpt.optimizer
    if opt is None:
        out.write(b"\0")
    else:
        out.write(b"\1" + _str(opt.kind))
        out.write(struct.pack("<5dQ", opt.learning_rate, opt.momentum, opt.adam_betas[0],
                              opt.adam_betas[1], opt.adam_eps, opt.step_count))
        flat = [(f"{p}::{b}", arr) for p, bufs in opt.buffers.items() for b, arr in bufs.items()]
        out.write(_u32(len(flat)))
        for name, arr in flat:
            out.write(_array(name, arr))
    out.write(_u32(len(ckpt.params)))
    for name, arr in ckpt.params.items():
        out.write(_array(name, arr))
    return out.getvalue()


def save_checkpoint(path, ckpt):
    """Write atomically: temp file in the same folder, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)
    return path


# ------------------------------------------------------------------ reading

class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def str(self):
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("corrupt string field") from None

    def array(self):
        name = self.str()
        ndim = self.u32()
        shape = struct.unpack(f"<{ndim}Q", self.take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        return name, arr


def from_bytes(data):
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    fingerprint = r.str()
    rng_state = json.loads(r.str())
    meta = json.loads(r.str())
    frozen = [r.str() for _ in range(r.u32())]
    optimizer = None
    if r.take(1) == b"\1":
        kind = r.str()
        lr, mom, b1, b2, eps, steps = struct.unpack("<5dQ", r.take(48))
        buffers = {}
        for _ in range(r.u32()):
            name, arr = r.array()
            pname, bname = name.rsplit("::", 1)
            buffers.setdefault(pname, {})[bname] = arr
        optimizer = dc.OptimizerState(kind, lr, mom, (b1, b2), eps, buffers, steps)
    params = dict(r.array() for _ in range(r.u32()))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    epoch = meta.pop("epoch", 0)
    scope = meta.pop("scope", "model")
    return Checkpoint(params, fingerprint, scope, epoch, frozen, optimizer, rng_state, meta)


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
