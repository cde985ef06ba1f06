"""Checkpoint container and its little-endian binary format.

Layout: magic ``DSDN``, u32 version, u64 tensor count, then one record per
parameter (u16 name length, UTF-8 name, u8 dtype tag with 0 = f32, u8
rank, u64 dims, raw little-endian f32 payload). A state block follows the
tensors: u64 training step, u64 optimizer step, u32 config text length,
the config snapshot, u64 moment tensor count, and moment records in the
same tensor format. The final 8 bytes of the file are the u64 offset of
that state block (0 if absent). Serialization is canonical, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import net_fingerprint
from .optim import OptimizerState

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint",
           "checkpoint_from_network", "restore_network",
           "optimizer_state_from_checkpoint"]

MAGIC = b"DSDN"
VERSION = 1


@dataclass
class Checkpoint:
    """Named parameter tensors plus training state and a config snapshot."""

    params: list
    step: int = 0
    opt_step: int = 0
    config_text: str = ""
    moments: list = field(default_factory=list)


def _write_tensor(fh, name, arr):
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError(f"tensor name too long: {name!r}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<BB", 0, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.astype("<f4").tobytes())


class _Reader:
    """Bounds-checked cursor; any short read means a corrupt file."""

    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def _read_tensor(r):
    name = r.take(r.u16()).decode("utf-8")
    dtype_tag, rank = struct.unpack("<BB", r.take(2))
    if dtype_tag != 0:
        raise ValueError(f"{r.path}: unsupported dtype tag {dtype_tag}")
    dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
    count = 1
    for d in dims:
        count *= d
    data = np.frombuffer(r.take(4 * count), dtype="<f4")
    return name, data.reshape(dims).astype(np.float32)


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(ckpt.params)))
        for name, arr in ckpt.params:
            _write_tensor(fh, name, arr)
        state_offset = fh.tell()
        fh.write(struct.pack("<QQ", ckpt.step, ckpt.opt_step))
        config = ckpt.config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(config)))
        fh.write(config)
        fh.write(struct.pack("<Q", len(ckpt.moments)))
        for name, arr in ckpt.moments:
            _write_tensor(fh, name, arr)
        fh.write(struct.pack("<Q", state_offset))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise ValueError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    params = [_read_tensor(r) for _ in range(r.u64())]
    if len(blob) < r.pos + 8:
        raise ValueError(f"{path}: truncated checkpoint")
    state_offset = struct.unpack("<Q", blob[-8:])[0]
    if state_offset == 0:
        return Checkpoint(params=params)
    if not r.pos <= state_offset <= len(blob) - 8:
        raise ValueError(f"{path}: state block offset out of range")
    r.pos = state_offset
    step = r.u64()
    opt_step = r.u64()
    config_text = r.take(r.u32()).decode("utf-8")
    moments = [_read_tensor(r) for _ in range(r.u64())]
    if r.pos != len(blob) - 8:
        raise ValueError(f"{path}: trailing garbage after state block")
    return Checkpoint(params=params, step=step, opt_step=opt_step,
                      config_text=config_text, moments=moments)


def checkpoint_from_network(net, config_text="", step=0, opt_state=None):
    """Snapshot a network (and optionally AdamW moments) into a Checkpoint.

    Moment tensors are stored as m.<param> / v.<param> in parameter order,
    so restoring realigns them positionally by construction.
    """
    params = [(name, p.data.copy()) for name, p in net.named_parameters()]
    moments = []
    opt_step = 0
    if opt_state is not None and opt_state.m:
        opt_step = opt_state.step
        for (name, _), m, v in zip(params, opt_state.m, opt_state.v):
            moments.append((f"m.{name}", m.copy()))
            moments.append((f"v.{name}", v.copy()))
    return Checkpoint(params=params, step=step, opt_step=opt_step,
                      config_text=config_text, moments=moments)


def restore_network(ckpt, net, expect_config=None):
    """Copy checkpoint tensors into a built network, strictly.

    The first name or shape disagreement is reported by tensor name. When
    expect_config is given (a config snapshot text), its architecture
    fingerprint must match the checkpoint's before any tensor is touched.
    """
    if expect_config is not None and ckpt.config_text:
        want = net_fingerprint(expect_config)
        have = net_fingerprint(ckpt.config_text)
        for key in sorted(set(want) | set(have)):
            if want.get(key) != have.get(key):
                raise ValueError(
                    f"checkpoint config mismatch at {key}: "
                    f"checkpoint has {have.get(key)!r}, "
                    f"network expects {want.get(key)!r}")
    net_params = list(net.named_parameters())
    if len(ckpt.params) != len(net_params):
        raise ValueError(
            f"checkpoint holds {len(ckpt.params)} tensors, network has "
            f"{len(net_params)}")
    for (ck_name, ck_arr), (name, p) in zip(ckpt.params, net_params):
        if ck_name != name:
            raise ValueError(
                f"checkpoint tensor {ck_name!r} does not match network "
                f"parameter {name!r}")
        if ck_arr.shape != p.data.shape:
            raise ValueError(
                f"checkpoint tensor {ck_name!r} has shape {ck_arr.shape}, "
                f"network expects {p.data.shape}")
    for (_, ck_arr), (_, p) in zip(ckpt.params, net_params):
        p.data = ck_arr.copy()


def optimizer_state_from_checkpoint(ckpt, net, **hyper):
    """Rebuild AdamW moments aligned with the network's parameter order."""
    state = OptimizerState(**hyper)
    if not ckpt.moments:
        return state
    by_name = dict(ckpt.moments)
    state.step = ckpt.opt_step
    for name, p in net.named_parameters():
        for kind, slot in (("m", state.m), ("v", state.v)):
            key = f"{kind}.{name}"
            if key not in by_name:
                raise ValueError(f"checkpoint lacks moment tensor {key!r}")
            if by_name[key].shape != p.data.shape:
                raise ValueError(f"moment tensor {key!r} shape mismatch")
            slot.append(by_name[key].copy())
    return state
