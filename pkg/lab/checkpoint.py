"""ECSK checkpoint files.

Layout (little-endian): magic ``ECSK``, u16 version, u32 entry count, then per entry
u32 name length, UTF-8 name, u32 ndim, u32 dims..., f32 data; finally a u32 CRC-32 of
every preceding byte. Step, validation loss and config hash travel as ``meta.*`` entries.
"""

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from errors import CheckpointFormatError, ChecksumError
from logger import get_logger

logger = get_logger("ecglab.checkpoint")

MAGIC = b"ECSK"
VERSION = 1
META_PREFIX = "meta."
_META_STEP = "meta.step"
_META_VAL_LOSS = "meta.val_loss"
_META_HASH = "meta.config_hash"


@dataclass(eq=False)
class Checkpoint:
    params: Dict[str, np.ndarray]
    step: int = 0
    val_loss: float = math.inf
    config_hash: str = ""
    version: int = VERSION
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    def entries(self) -> Dict[str, np.ndarray]:
        digest = bytes.fromhex(self.config_hash) if self.config_hash else b""
        meta = {
            _META_STEP: np.array([self.step], dtype=np.float32),
            _META_VAL_LOSS: np.array([self.val_loss], dtype=np.float32),
            _META_HASH: np.frombuffer(digest, dtype=np.uint8).astype(np.float32),
        }
        return {**self.params, **{f"{META_PREFIX}{k}": v for k, v in self.extra.items()}, **meta}


def to_bytes(checkpoint: Checkpoint) -> bytes:
    entries = checkpoint.entries()
    chunks = [MAGIC, struct.pack("<HI", checkpoint.version, len(entries))]
    for name, value in entries.items():
        encoded = name.encode("utf-8")
        array = np.asarray(value, dtype="<f4")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes(order="C"))
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.source}: truncated while reading {what} at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < len(MAGIC) + 10:
        raise CheckpointFormatError(f"{source}: {len(data)} bytes is too short for a checkpoint")
    body, (stored,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stored:
        raise ChecksumError(f"{source}: checksum mismatch (stored {stored:08x}, computed {zlib.crc32(body):08x})")

    reader = _Reader(body, source)
    if reader.take(4, "magic") != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic, not an ECSK checkpoint")
    version, count = reader.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointFormatError(f"{source}: unsupported checkpoint version {version}")

    entries: Dict[str, np.ndarray] = {}
    for index in range(count):
        (name_len,) = reader.unpack("<I", f"entry {index} name length")
        try:
            name = reader.take(name_len, f"entry {index} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(f"{source}: entry {index} name is not UTF-8") from e
        if name in entries:
            raise CheckpointFormatError(f"{source}: duplicate entry name '{name}'")
        (ndim,) = reader.unpack("<I", f"'{name}' ndim")
        shape = reader.unpack(f"<{ndim}I", f"'{name}' dims")
        size = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(size * 4, f"'{name}' data")
        entries[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if reader.pos != len(body):
        raise CheckpointFormatError(f"{source}: {len(body) - reader.pos} unexpected bytes before the checksum")

    step = entries.pop(_META_STEP, np.zeros(1))
    val_loss = entries.pop(_META_VAL_LOSS, np.array([math.inf]))
    digest = entries.pop(_META_HASH, np.zeros(0))
    extra = {k[len(META_PREFIX) :]: entries.pop(k) for k in [k for k in entries if k.startswith(META_PREFIX)]}
    return Checkpoint(
        params=entries,
        step=int(step.reshape(-1)[0]),
        val_loss=float(val_loss.reshape(-1)[0]),
        config_hash=digest.astype(np.uint8).tobytes().hex(),
        version=version,
        extra=extra,
    )


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(checkpoint))
    logger.debug("checkpoint written", extra={"path": str(path), "step": checkpoint.step})
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    return from_bytes(path.read_bytes(), str(path))


def describe(path) -> Dict:
    """Summary used by ``inspect-checkpoint``."""
    path = Path(path)
    data = path.read_bytes()
    ckpt = from_bytes(data, str(path))
    return {
        "path": str(path),
        "version": ckpt.version,
        "step": ckpt.step,
        "val_loss": ckpt.val_loss if math.isfinite(ckpt.val_loss) else None,
        "config_hash": ckpt.config_hash,
        "checksum": f"{struct.unpack('<I', data[-4:])[0]:08x}",
        "n_parameters": int(sum(v.size for v in ckpt.params.values())),
        "entries": [{"name": k, "shape": list(v.shape)} for k, v in ckpt.params.items()],
    }


def from_state(state: Dict[str, np.ndarray], step: int, val_loss: float, config_hash: str) -> Checkpoint:
    params = {k: np.asarray(v, dtype=np.float32).copy() for k, v in state.items()}
    return Checkpoint(params=params, step=step, val_loss=val_loss, config_hash=config_hash)
