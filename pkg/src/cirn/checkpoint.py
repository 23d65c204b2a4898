"""Single-file binary checkpoints.

Layout (all integers little-endian uint32)::

    magic  b"CIRNCKPT"
    version
    header length, header (UTF-8 JSON, sorted keys)
    tensor count
    per tensor: name length, name (UTF-8), rank, extents..., float32 data
    CRC-32 of everything above

Tensor data is stored as 32-bit floats regardless of the in-memory element type.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import CorruptionError, FormatError

MAGIC = b"CIRNCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    header: dict
    tensors: Dict[str, np.ndarray]

    @property
    def model_config(self) -> dict:
        return self.header["model_config"]

    @property
    def vocab(self) -> List[str]:
        return self.header["vocab"]


def _u32(x: int) -> bytes:
    return struct.pack("<I", x)


def encode(header: dict, tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _u32(VERSION)]
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    parts += [_u32(len(hdr)), hdr, _u32(len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts += [_u32(len(raw)), raw, _u32(arr.ndim)] + [_u32(s) for s in arr.shape] + [arr.tobytes()]
    body = b"".join(parts)
    return body + _u32(zlib.crc32(body))


def save(path, header: dict, tensors: Dict[str, np.ndarray]) -> None:
    """Write atomically: a partially written file never replaces a good one."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(header, tensors))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 8:
        raise CorruptionError("checkpoint is truncated")
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    body, crc = buf[:-4], struct.unpack("<I", buf[-4:])[0]
    r = _Reader(body)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"checkpoint version {version} is not supported (expected {VERSION})")
    if zlib.crc32(body) != crc:
        raise CorruptionError("checkpoint failed its CRC check (truncated or corrupted)")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable checkpoint header: {exc}") from None
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise CorruptionError("trailing bytes after last tensor record")
    return Checkpoint(header, tensors)


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


# trainer integration -----------------------------------------------------------


def save_training_state(path, trainer, vocab_tokens: Optional[List[str]] = None) -> None:
    state = trainer.state
    header = {
        "format": "cirn-checkpoint",
        "model_config": trainer.model.config.to_dict(),
        "trainer_config": asdict(trainer.config),
        "optimizer": state.scalars(),
        "rng_state": trainer.rng_state(),
        "vocab": list(vocab_tokens) if vocab_tokens is not None else None,
    }
    tensors = {f"param/{k}": p.data for k, p in trainer.model.named_parameters().items()}
    tensors.update({f"adadelta.sq_grad/{k}": v for k, v in state.sq_grad.items()})
    tensors.update({f"adadelta.acc_delta/{k}": v for k, v in state.acc_delta.items()})
    save(path, header, tensors)


def restore_model(ckpt: Checkpoint, dtype=np.float32):
    from .model import CIRN, ModelConfig
    from .tensor import Tensor

    config = ModelConfig.from_dict(ckpt.model_config)
    params = {k[len("param/"):]: Tensor(v.astype(dtype), requires_grad=True, name=k[len("param/"):])
              for k, v in ckpt.tensors.items() if k.startswith("param/")}
    expected = CIRN(config, seed=0).named_parameters()
    if set(params) != set(expected):
        raise FormatError("checkpoint parameters do not match the model configuration")
    for name, p in expected.items():
        if params[name].shape != p.shape:
            raise FormatError(f"parameter {name}: checkpoint shape {params[name].shape} vs model {p.shape}")
    ordered = {name: params[name] for name in expected}
    return CIRN(config, params=ordered)


def restore_optimizer(ckpt: Checkpoint):
    from .trainer import OptimizerState

    s = ckpt.header["optimizer"]
    state = OptimizerState(step=s["step"], mode=s["mode"], lr=s["lr"], best_metric=s["best_metric"],
                           best_step=s["best_step"], steps_since_improvement=s["steps_since_improvement"])
    for k, v in ckpt.tensors.items():
        if k.startswith("adadelta.sq_grad/"):
            state.sq_grad[k.split("/", 1)[1]] = v.copy()
        elif k.startswith("adadelta.acc_delta/"):
            state.acc_delta[k.split("/", 1)[1]] = v.copy()
    return state


def resume_trainer(ckpt: Checkpoint, train, dev=None, log=None, dtype=np.float32):
    """Rebuild a :class:`Trainer` that continues exactly where the checkpoint left off."""
    from .trainer import Trainer, TrainerConfig

    config = TrainerConfig(**ckpt.header["trainer_config"])
    return Trainer(restore_model(ckpt, dtype), config, train, dev, state=restore_optimizer(ckpt),
                   rng_state=ckpt.header["rng_state"], log=log)
