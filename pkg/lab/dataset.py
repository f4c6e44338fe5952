"""Synthetic labelled dataset: class quotas, seeded train/val/test splits, manifest JSON.

Only records and reports are materialized. Images are rendered from the records
during training and evaluation.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import ClassRule, SynthParams
from errors import DataError, FormatError, ParameterError
from lab.report import Vocabulary
from lab.signal_core import LabeledSample, load_record, save_record, synth_ecg
from logger import get_logger
from utils import config_hash, derive_seed, read_json, relative_to, rng_for, write_json

logger = get_logger("ecglab.dataset")

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
MIN_SAMPLES = 10
SPLITS = ("train", "val", "test")

# rate bands stay clear of the class thresholds by this many bpm
RATE_MARGIN = 5.0
RATE_FLOOR = 40.0
RATE_CEILING = 150.0

_POOL_TRAIN_VAL, _POOL_TEST = 0, 1


def rate_band(label: int, rule: ClassRule) -> Tuple[float, float]:
    bands = (
        (RATE_FLOOR, rule.brady_below - RATE_MARGIN),
        (rule.brady_below + RATE_MARGIN, rule.tachy_above - RATE_MARGIN),
        (rule.tachy_above + RATE_MARGIN, RATE_CEILING),
    )
    low, high = bands[label]
    if not low < high:
        raise ParameterError(f"class '{rule.names[label]}' has an empty heart-rate band [{low}, {high}]")
    return low, high


def class_quotas(n: int, class_mix: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of ``n`` over ``class_mix``."""
    exact = [n * p for p in class_mix]
    counts = [int(math.floor(x)) for x in exact]
    order = sorted(range(len(exact)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[: n - sum(counts)]:
        counts[k] += 1
    return counts


@dataclass
class Dataset:
    splits: Dict[str, List[LabeledSample]]
    manifest: Dict = field(default_factory=dict)
    root: Optional[Path] = None

    @property
    def train(self) -> List[LabeledSample]:
        return self.splits["train"]

    @property
    def val(self) -> List[LabeledSample]:
        return self.splits["val"]

    @property
    def test(self) -> List[LabeledSample]:
        return self.splits["test"]

    def counts(self) -> Dict[str, int]:
        return {name: len(self.splits[name]) for name in SPLITS}

    def digest(self) -> str:
        return config_hash({k: v for k, v in self.manifest.items() if k != "root"})


def _synthesize_pool(n, pool, seed, class_mix, base: SynthParams, vocab: Vocabulary):
    rule = base.class_rule
    labels = np.repeat(np.arange(len(class_mix)), class_quotas(n, class_mix))
    rng_for(seed, pool, 0).shuffle(labels)
    rate_rng = rng_for(seed, pool, 1)
    items = []
    for index, label in enumerate(labels):
        low, high = rate_band(int(label), rule)
        rate = round(float(rate_rng.uniform(low, high)), 1)
        params = base.updated(heart_rate=rate, seed=derive_seed(seed, pool, index))
        sample = synth_ecg(params, vocab)
        items.append((sample, params.seed))
    return items


def build_dataset(
    n: int,
    seed: int,
    class_mix: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    out_dir=None,
    *,
    fs: float = 100.0,
    duration: float = 10.0,
    val_fraction: float = 0.1,
    n_test: Optional[int] = None,
    synth: Optional[SynthParams] = None,
    vocab: Optional[Vocabulary] = None,
) -> Dataset:
    """Synthesize ``n`` train/val samples (9:1 by default) plus a held-out test pool.

    With ``out_dir`` every record is written as ECGR and the manifest as JSON.
    """
    if n < MIN_SAMPLES:
        raise ParameterError(f"n must be at least {MIN_SAMPLES}, got {n}")
    rule = (synth or SynthParams()).class_rule
    if len(class_mix) != rule.n_classes:
        raise ParameterError(f"class_mix has {len(class_mix)} entries for {rule.n_classes} classes")
    base = (synth or SynthParams()).updated(fs=fs, duration=duration)
    vocab = vocab or Vocabulary()
    n_test = n // 5 if n_test is None else n_test

    pool = _synthesize_pool(n, _POOL_TRAIN_VAL, seed, class_mix, base, vocab)
    order = rng_for(seed, 2).permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    groups = {
        "val": [pool[i] for i in sorted(order[:n_val])],
        "train": [pool[i] for i in sorted(order[n_val:])],
        "test": _synthesize_pool(n_test, _POOL_TEST, seed, class_mix, base, vocab) if n_test else [],
    }

    root = Path(out_dir) if out_dir is not None else None
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "n": n,
        "class_mix": list(class_mix),
        "class_names": list(rule.names),
        "fs": fs,
        "duration": duration,
        "synth_hash": config_hash(base.updated(heart_rate=SynthParams().heart_rate, seed=0)),
        "splits": {},
    }
    for name in SPLITS:
        entries = []
        for k, (sample, sample_seed) in enumerate(groups[name]):
            entry = {
                "id": f"{name}-{k:05d}",
                "label": sample.label,
                "heart_rate": sample.heart_rate,
                "report": sample.report.raw,
                "seed": sample_seed,
            }
            if root is not None:
                path = save_record(sample.record, root / "records" / f"{entry['id']}.json")
                entry["record"] = relative_to(path, root)
            entries.append(entry)
        manifest["splits"][name] = entries

    dataset = Dataset({name: [s for s, _ in groups[name]] for name in SPLITS}, manifest, root)
    if root is not None:
        write_json(root / MANIFEST_NAME, manifest)
    logger.info("dataset built", extra={"counts": dataset.counts(), "seed": seed, "out": str(root) if root else None})
    return dataset


def manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_dataset(path, vocab: Optional[Vocabulary] = None) -> Dataset:
    """Read a manifest (or a directory holding one) and every record it lists."""
    path = manifest_path(path)
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    manifest = read_json(path)
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {manifest.get('version')}")
    vocab = vocab or Vocabulary()
    root = path.parent
    splits = {}
    for name in SPLITS:
        samples = []
        for entry in manifest["splits"].get(name, []):
            if "record" not in entry:
                raise DataError(f"{path}: entry {entry.get('id')} has no record file")
            record = load_record(root / entry["record"])
            samples.append(
                LabeledSample(
                    record=record,
                    label=int(entry["label"]),
                    report=vocab.encode(entry["report"]),
                    heart_rate=float(entry["heart_rate"]),
                )
            )
        splits[name] = samples
    logger.debug("dataset loaded", extra={"path": str(path), "counts": {k: len(v) for k, v in splits.items()}})
    return Dataset(splits, manifest, root)


def labels_of(samples: Sequence[LabeledSample]) -> np.ndarray:
    return np.array([s.label for s in samples], dtype=np.int64)


def stratified_subset(samples: Sequence[LabeledSample], fraction: float, seed: int, n_classes: int):
    """round(fraction * n_class) samples of every class, chosen by ``seed``."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    labels = labels_of(samples)
    rng = rng_for(seed, 3)
    picks = []
    for k in range(n_classes):
        members = np.flatnonzero(labels == k)
        take = int(round(fraction * members.size))
        if take < 1:
            raise DataError(f"fraction {fraction} leaves no sample of class {k} ({members.size} available)")
        picks.extend(rng.permutation(members)[:take].tolist())
    return [samples[i] for i in sorted(picks)]
