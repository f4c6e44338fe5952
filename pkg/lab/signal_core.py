"""12-lead record model, ECGR/CSV file I/O, resampling and the synthetic generator."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from config import SynthParams
from errors import (
    LeadCountError,
    NonFiniteValueError,
    ParameterError,
    RecordHeaderError,
    RecordParseError,
    ShapeError,
    TruncatedDataError,
)
from lab.lead_rules import LEAD_INDEX, LEAD_NAMES, derive_limb_from_I_II
from lab.report import ReportText, Vocabulary, make_report
from logger import get_logger
from utils import rng_for

logger = get_logger("ecglab.signal_core")

RECORD_VERSION = 1
RECORD_DTYPE = "f32le"
MIN_FS = 100.0

# seconds; fixed per wave
WAVE_WIDTHS = {"p": 0.025, "q": 0.010, "r": 0.012, "s": 0.010, "t": 0.040}


@dataclass(frozen=True, eq=False)
class EcgRecord:
    fs: float
    samples: np.ndarray
    lead_names: Tuple[str, ...] = LEAD_NAMES

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if tuple(self.lead_names) != LEAD_NAMES:
            raise ShapeError(f"lead_names must be {', '.join(LEAD_NAMES)}, got {', '.join(self.lead_names)}")
        if samples.ndim != 2 or samples.shape[0] != len(LEAD_NAMES) or samples.shape[1] == 0:
            raise ShapeError(f"samples must be 12xT with T > 0, got shape {samples.shape}")
        if not self.fs > 0:
            raise ParameterError(f"fs must be positive, got {self.fs}")
        if not np.all(np.isfinite(samples)):
            lead, idx = np.argwhere(~np.isfinite(samples))[0]
            raise ParameterError(f"non-finite sample in lead {LEAD_NAMES[lead]} at index {idx}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "lead_names", tuple(self.lead_names))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def lead(self, name: str) -> np.ndarray:
        return self.samples[LEAD_INDEX[name]]

    def head(self, seconds: float) -> "EcgRecord":
        n = int(round(seconds * self.fs))
        return self if n >= self.n_samples else EcgRecord(self.fs, self.samples[:, :n])


@dataclass(frozen=True, eq=False)
class LabeledSample:
    record: EcgRecord
    label: int
    report: ReportText
    heart_rate: float = field(default=0.0)


# synthesis -------------------------------------------------------------------


def beat_train(t: np.ndarray, heart_rate: float, amplitudes) -> np.ndarray:
    """Sum-of-Gaussians PQRST train with round(duration / rr) R peaks centred in the record.

    One extra beat on each side keeps P and T waves continuous at the edges.
    """
    rr = 60.0 / heart_rate
    offsets = {"p": -0.16 * np.sqrt(rr), "q": -0.025, "r": 0.0, "s": 0.025, "t": 0.28 * np.sqrt(rr)}
    duration = t[-1] + (t[1] - t[0] if t.size > 1 else 0.0)
    n_beats = int(round(round(duration / rr, 9)))
    first = 0.5 * (duration - (n_beats - 1) * rr)
    peaks = first + np.arange(-1, n_beats + 1) * rr
    train = np.zeros_like(t)
    for wave, width in WAVE_WIDTHS.items():
        centers = peaks + offsets[wave]
        bumps = np.exp(-((t[:, None] - centers[None, :]) ** 2) / (2.0 * width * width))
        train += getattr(amplitudes, wave) * bumps.sum(axis=1)
    return train


def synth_ecg(params: SynthParams, vocab: Optional[Vocabulary] = None) -> LabeledSample:
    vocab = vocab or Vocabulary()
    amps = params.wave_amplitudes
    t = np.arange(params.n_samples, dtype=np.float64) / params.fs
    train = beat_train(t, params.heart_rate, amps)

    lead_i = amps.lead_i_scale * train
    lead_ii = train
    samples = np.empty((len(LEAD_NAMES), t.size), dtype=np.float64)
    samples[LEAD_INDEX["I"]] = lead_i
    samples[LEAD_INDEX["II"]] = lead_ii
    for name, values in zip(("III", "aVR", "aVL", "aVF"), derive_limb_from_I_II(lead_i, lead_ii)):
        samples[LEAD_INDEX[name]] = values
    for k, scale in enumerate(amps.precordial_scales, start=1):
        samples[LEAD_INDEX[f"V{k}"]] = scale * train

    noise_rng = rng_for(params.seed, 0)
    if params.noise_sigma > 0:
        samples += noise_rng.normal(0.0, params.noise_sigma, size=samples.shape)
    amplitude, frequency = params.baseline_wander
    if amplitude > 0:
        phases = noise_rng.uniform(0.0, 2 * np.pi, size=(len(LEAD_NAMES), 1))
        samples += amplitude * np.sin(2 * np.pi * frequency * t[None, :] + phases)

    label = params.class_rule.label(params.heart_rate)
    text = make_report(label, params.heart_rate, rng_for(params.seed, 1))
    record = EcgRecord(params.fs, samples.astype(np.float32))
    return LabeledSample(record=record, label=label, report=vocab.encode(text), heart_rate=params.heart_rate)


def resample(record: EcgRecord, fs_target: float) -> EcgRecord:
    if not fs_target >= MIN_FS:
        raise ParameterError(f"fs_target must be >= {MIN_FS} Hz, got {fs_target}")
    if fs_target == record.fs:
        return EcgRecord(record.fs, record.samples.copy())
    n_new = int(round(record.duration * fs_target))
    t_old = np.arange(record.n_samples, dtype=np.float64) / record.fs
    t_new = np.arange(n_new, dtype=np.float64) / fs_target
    out = np.stack([np.interp(t_new, t_old, lead.astype(np.float64)) for lead in record.samples])
    return EcgRecord(fs_target, out.astype(np.float32))


# ECGR files ------------------------------------------------------------------


def data_path_for(header_path: Path) -> Path:
    return header_path.with_suffix(".f32")


def save_record(record: EcgRecord, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data_file = data_path_for(path)
    header = {
        "version": RECORD_VERSION,
        "fs": record.fs,
        "n_leads": len(record.lead_names),
        "n_samples": record.n_samples,
        "lead_names": list(record.lead_names),
        "dtype": RECORD_DTYPE,
        "data_file": data_file.name,
    }
    data_file.write_bytes(record.samples.astype("<f4").tobytes(order="C"))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    return path


def _require(header: dict, key: str, kind):
    if key not in header:
        raise RecordHeaderError(f"record header is missing '{key}'", field=key)
    value = header[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise RecordHeaderError(f"record header field '{key}' has invalid value {value!r}", field=key)
    return value


def load_record(path, fs: float = 500.0) -> EcgRecord:
    """Read an ECGR header (+ data file) or, for ``.csv`` paths, a one-column-per-lead CSV at ``fs``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return import_csv(path, fs)
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RecordHeaderError(f"{path}: header is not valid JSON: {e}", field="header") from e
    if not isinstance(header, dict):
        raise RecordHeaderError(f"{path}: header must be a JSON object", field="header")

    if _require(header, "version", int) != RECORD_VERSION:
        raise RecordHeaderError(f"{path}: unsupported version {header['version']}", field="version")
    if _require(header, "dtype", str) != RECORD_DTYPE:
        raise RecordHeaderError(f"{path}: unsupported dtype {header['dtype']!r}", field="dtype")
    n_leads = _require(header, "n_leads", int)
    if n_leads != len(LEAD_NAMES):
        raise LeadCountError(f"{path}: lead count {n_leads} != {len(LEAD_NAMES)}", field="n_leads")
    names = _require(header, "lead_names", list)
    if len(names) != len(LEAD_NAMES):
        raise LeadCountError(f"{path}: lead count {len(names)} in lead_names != 12", field="lead_names")
    if tuple(names) != LEAD_NAMES:
        raise RecordHeaderError(f"{path}: lead_names are not in canonical order", field="lead_names")
    n_samples = _require(header, "n_samples", int)
    if n_samples <= 0:
        raise RecordHeaderError(f"{path}: n_samples must be positive", field="n_samples")
    rate = _require(header, "fs", (int, float))
    if not rate > 0:
        raise RecordHeaderError(f"{path}: fs must be positive", field="fs")
    data_file = path.parent / _require(header, "data_file", str)

    raw = data_file.read_bytes()
    expected = n_samples * len(LEAD_NAMES) * 4
    if len(raw) < expected:
        raise TruncatedDataError(
            f"{data_file}: truncated data, {len(raw)} of {expected} bytes", field="data_file", offset=len(raw)
        )
    if len(raw) > expected:
        raise RecordParseError(
            f"{data_file}: {len(raw) - expected} trailing bytes after {expected}", field="data_file", offset=expected
        )
    samples = np.frombuffer(raw, dtype="<f4").reshape(len(LEAD_NAMES), n_samples)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        lead, idx = divmod(int(bad[0]), n_samples)
        raise NonFiniteValueError(
            f"{data_file}: non-finite value in lead {LEAD_NAMES[lead]} at sample {idx}",
            field=LEAD_NAMES[lead],
            offset=int(bad[0]) * 4,
        )
    return EcgRecord(float(rate), samples.astype(np.float32))


def import_csv(path, fs: float) -> EcgRecord:
    path = Path(path)
    if not fs > 0:
        raise ParameterError(f"fs must be positive for CSV import, got {fs}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise RecordHeaderError(f"{path}: unreadable CSV: {e}", field="header") from e
    columns = [str(c).strip() for c in frame.columns]
    missing = [name for name in LEAD_NAMES if name not in columns]
    if missing or len(columns) != len(LEAD_NAMES):
        raise LeadCountError(
            f"{path}: expected the 12 lead columns, got {len(columns)} (missing: {', '.join(missing) or 'none'})",
            field="header",
        )
    frame.columns = columns
    if frame.empty:
        raise TruncatedDataError(f"{path}: no data rows", field="data", offset=0)
    values = frame[list(LEAD_NAMES)].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = bad[0]
        raise NonFiniteValueError(
            f"{path}: non-finite value in column {LEAD_NAMES[col]} at data row {row}",
            field=LEAD_NAMES[col],
            offset=int(row),
        )
    logger.debug("imported csv record", extra={"path": str(path), "n_samples": len(frame)})
    return EcgRecord(fs, values.T.astype(np.float32))
