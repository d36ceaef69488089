"""Binary model checkpoints.

Layout (all integers little-endian)::

    magic         8 bytes  b"MDNPATH\\x00"
    version       u32      1
    header_len    u32      N
    header        N bytes  UTF-8 JSON: model_config, norm_stats, variant, step,
                           layout [[name, shape], ...], has_optimizer, extra
    params        float64 little-endian, concatenated in layout order
    adam_m, adam_v         same layout, present when has_optimizer is true

The layout order is the one produced by ``seqnet.param_layout``: for each LSTM
layer Wx, Wh, b; then head.W, head.b. Matrices are row-major.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .seqnet import SeqNet, param_layout
from .types import ModelConfig, NormStats, Variant

MAGIC = b"MDNPATH\x00"
VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    net: SeqNet
    variant: Variant
    step: int = 0
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


def to_bytes(ck: Checkpoint) -> bytes:
    net = ck.net
    has_opt = ck.adam_m is not None and ck.adam_v is not None
    header = {
        "model_config": net.cfg.to_dict(),
        "norm_stats": net.stats.to_dict(),
        "variant": Variant.parse(ck.variant).value,
        "step": int(ck.step),
        "layout": [[n, list(s)] for n, s in param_layout(net.cfg)],
        "has_optimizer": has_opt,
        "extra": ck.extra,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb, net.flat().astype("<f8").tobytes()]
    if has_opt:
        parts += [np.asarray(ck.adam_m, dtype="<f8").tobytes(), np.asarray(ck.adam_v, dtype="<f8").tobytes()]
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    version, n = struct.unpack("<II", buf[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(buf[16:16 + n].decode("utf-8"))
    cfg = ModelConfig.from_dict(header["model_config"])
    layout = [(name, tuple(shape)) for name, shape in header["layout"]]
    if layout != param_layout(cfg):
        raise CheckpointError("parameter layout does not match the model config")
    size = sum(int(np.prod(s)) for _, s in layout)
    body = np.frombuffer(buf, dtype="<f8", offset=16 + n)
    expected = size * (3 if header["has_optimizer"] else 1)
    if len(body) != expected:
        raise CheckpointError(f"checkpoint body has {len(body)} values, expected {expected}")
    net = SeqNet(cfg, {}, NormStats.from_dict(header["norm_stats"]))
    net.set_flat(body[:size].astype(float))
    ck = Checkpoint(net, Variant.parse(header["variant"]), int(header["step"]), extra=header.get("extra", {}))
    if header["has_optimizer"]:
        ck.adam_m = body[size:2 * size].astype(float)
        ck.adam_v = body[2 * size:].astype(float)
    return ck


def save(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ck))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
