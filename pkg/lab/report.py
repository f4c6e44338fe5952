"""Report grammar and the closed vocabulary used by the toy text encoder."""

import re
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from errors import ParameterError, VocabularyError

MAX_TOKENS = 32
PAD = "<pad>"

DEFAULT_VOCAB: Tuple[str, ...] = (
    PAD,
    ".",
    "sinus",
    "rhythm",
    "bradycardia",
    "tachycardia",
    "normal",
    "heart",
    "rate",
    "bpm",
    "regular",
    "ventricular",
    "ecg",
    "0",
    "1",
    "2",
    "3",
    "4",
    "5",
    "6",
    "7",
    "8",
    "9",
)

# one rhythm word per class, indexed like ClassRule.names
RHYTHM_WORDS = ("bradycardia", "rhythm", "tachycardia")

TEMPLATES = (
    "sinus {word}. heart rate {rate} bpm.",
    "regular sinus {word}. rate {rate} bpm.",
    "sinus {word}. ventricular rate {rate} bpm.",
)

_TOKEN_RE = re.compile(r"[a-z]+|\d|\.")


@dataclass(frozen=True)
class ReportText:
    ids: Tuple[int, ...]
    raw: str

    def __post_init__(self):
        if not self.raw.strip() or not self.ids:
            raise ParameterError("report text must be non-empty")
        if len(self.ids) > MAX_TOKENS:
            raise ParameterError(f"report has {len(self.ids)} tokens, limit is {MAX_TOKENS}")


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = DEFAULT_VOCAB):
        self.tokens = list(tokens)
        if PAD not in self.tokens:
            raise ParameterError(f"vocabulary must contain {PAD}")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    def encode(self, text: str) -> ReportText:
        pieces = tokenize(text)
        leftover = _TOKEN_RE.sub("", text.lower()).split()
        unknown = [tok for tok in pieces if tok not in self.index] + leftover
        if unknown:
            raise VocabularyError(f"unknown token(s) in '{text}': {', '.join(unknown)}")
        return ReportText(tuple(self.index[tok] for tok in pieces), text)

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids if i != self.pad_id]

    def batch(self, reports: Sequence[ReportText]) -> Tuple[np.ndarray, np.ndarray]:
        """Pad to MAX_TOKENS; returns (ids B×L int, mask B×L float32 with 1 on real tokens)."""
        ids = np.full((len(reports), MAX_TOKENS), self.pad_id, dtype=np.int64)
        mask = np.zeros((len(reports), MAX_TOKENS), dtype=np.float32)
        for row, report in enumerate(reports):
            if any(i >= len(self.tokens) for i in report.ids):
                raise VocabularyError(f"token id out of range in '{report.raw}'")
            ids[row, : len(report.ids)] = report.ids
            mask[row, : len(report.ids)] = 1.0
        return ids, mask


def make_report(label: int, heart_rate: float, rng: np.random.Generator) -> str:
    template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    return template.format(word=RHYTHM_WORDS[label], rate=int(round(heart_rate)))


def class_prompts() -> List[str]:
    """One zero-shot prompt per class; no prompt ensembling."""
    return [f"sinus {word}" for word in RHYTHM_WORDS]
