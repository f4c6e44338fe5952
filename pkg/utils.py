import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable, List

import numpy as np
from pydantic import BaseModel

from logger import get_logger

logger = get_logger("ecglab.utils")


def canonical_json(obj: Any) -> str:
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="json")
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj: Any) -> str:
    """sha256 hex digest of the canonical JSON form of a config (model or plain dict)."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def bytes_digest(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


def derive_seed(*parts: int) -> int:
    """Mix integer parts into one 64-bit seed; stable across platforms and runs."""
    words = [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def rng_for(*parts: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path, obj: Any, indent: int = 2) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        ensure_dir(path.parent)
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=indent, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def append_jsonl(path, rows: Iterable[dict]):
    with open(path, "a", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> List[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def relative_to(path, base) -> str:
    return os.path.relpath(Path(path), Path(base)).replace(os.sep, "/")


def format_duration(seconds):
    seconds = int(seconds)
    weeks, remainder = divmod(seconds, 604800)
    days, remainder = divmod(remainder, 86400)
    hours, remainder = divmod(remainder, 3600)
    minutes, seconds = divmod(remainder, 60)

    parts = []
    for value, unit in [(weeks, "w"), (days, "d"), (hours, "h"), (minutes, "m"), (seconds, "s")]:
        if value:
            parts.append(f"{value}{unit}")
    return " ".join(parts) or "0s"
