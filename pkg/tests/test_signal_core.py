import json

import numpy as np
import pandas as pd
import pytest
from scipy.signal import find_peaks

from config import ClassRule, SynthParams
from errors import (
    LeadCountError,
    NonFiniteValueError,
    ParameterError,
    RecordHeaderError,
    RecordParseError,
    ShapeError,
    TruncatedDataError,
    VocabularyError,
)
from lab.lead_rules import LEAD_NAMES
from lab.report import MAX_TOKENS, Vocabulary, class_prompts, tokenize
from lab.signal_core import EcgRecord, data_path_for, load_record, resample, save_record, synth_ecg


def test_record_validation():
    with pytest.raises(ShapeError):
        EcgRecord(500.0, np.zeros((11, 10)))
    with pytest.raises(ShapeError):
        EcgRecord(500.0, np.zeros((12, 0)))
    with pytest.raises(ParameterError):
        EcgRecord(0.0, np.zeros((12, 10)))
    bad = np.zeros((12, 10))
    bad[3, 4] = np.nan
    with pytest.raises(ParameterError, match="aVR"):
        EcgRecord(500.0, bad)


def test_synth_shape_and_determinism():
    params = SynthParams(heart_rate=72, fs=500.0, duration=10.0, seed=3)
    a, b = synth_ecg(params), synth_ecg(params)
    assert a.record.samples.shape == (12, 5000)
    assert a.record.samples.dtype == np.float32
    assert np.array_equal(a.record.samples, b.record.samples)
    assert a.report.raw == b.report.raw


@pytest.mark.parametrize("rate", [48, 69, 72, 81, 120, 150])
def test_synth_beat_count(rate):
    record = synth_ecg(SynthParams(heart_rate=rate, fs=500.0, seed=0)).record
    peaks, _ = find_peaks(record.lead("II"), height=0.5, distance=int(0.2 * record.fs))
    assert len(peaks) == round(10.0 * rate / 60.0)


def test_synth_limb_leads_obey_the_laws(record):
    s = record.samples.astype(np.float64)
    idx = {n: i for i, n in enumerate(LEAD_NAMES)}
    np.testing.assert_allclose(s[idx["III"]], s[idx["II"]] - s[idx["I"]], atol=1e-6)
    np.testing.assert_allclose(s[idx["aVR"]], -(s[idx["I"]] + s[idx["II"]]) / 2, atol=1e-6)


@pytest.mark.parametrize("rate,label", [(45, 0), (59.9, 0), (60, 1), (100, 1), (100.5, 2)])
def test_class_rule_thresholds(rate, label):
    assert ClassRule().label(rate) == label
    assert synth_ecg(SynthParams(heart_rate=rate, fs=100.0)).label == label


def test_report_tokens_are_in_vocabulary(sample):
    vocab = Vocabulary()
    assert "sinus" in sample.report.raw
    assert vocab.decode(sample.report.ids) == tokenize(sample.report.raw)


def test_vocabulary_rejects_unknown_words():
    with pytest.raises(VocabularyError):
        Vocabulary().encode("atrial fibrillation")


def test_report_length_limit():
    with pytest.raises(ParameterError):
        Vocabulary().encode(" ".join(["sinus"] * (MAX_TOKENS + 1)))


def test_class_prompts_encode():
    vocab = Vocabulary()
    assert len(class_prompts()) == 3
    for prompt in class_prompts():
        vocab.encode(prompt)


def test_resample_changes_length(record):
    up = resample(record, 250.0)
    assert up.fs == 250.0
    assert up.n_samples == 2500
    assert resample(record, record.fs).n_samples == record.n_samples
    with pytest.raises(ParameterError):
        resample(record, 50.0)


@pytest.mark.parametrize("fs, target", [(100.0, 250.0), (500.0, 100.0)])
def test_resample_keeps_a_ramp(fs, target):
    t = np.arange(int(10 * fs)) / fs
    slopes = np.arange(1, 13)[:, None]
    out = resample(EcgRecord(fs, slopes * t), target)
    t_new = np.arange(out.n_samples) / target
    inside = t_new <= t[-1]
    np.testing.assert_allclose(out.samples[:, inside], (slopes * t_new)[:, inside], rtol=1e-5, atol=1e-5)


def test_resample_keeps_a_constant():
    out = resample(EcgRecord(100.0, np.full((12, 1000), 0.7)), 360.0)
    assert out.n_samples == 3600
    np.testing.assert_allclose(out.samples, 0.7, rtol=1e-6)


def test_resample_is_linear(rng):
    x, y = rng.normal(size=(12, 1000)), rng.normal(size=(12, 1000))
    mixed = resample(EcgRecord(100.0, 2 * x - 3 * y), 250.0).samples
    parts = 2 * resample(EcgRecord(100.0, x), 250.0).samples - 3 * resample(EcgRecord(100.0, y), 250.0).samples
    np.testing.assert_allclose(mixed, parts, atol=1e-4)


def test_record_file_roundtrip(tmp_path, record):
    path = save_record(record, tmp_path / "rec.json")
    header = json.loads(path.read_text())
    assert header["lead_names"] == list(LEAD_NAMES)
    assert header["dtype"] == "f32le"
    back = load_record(path)
    assert back.fs == record.fs
    assert np.array_equal(back.samples, record.samples)


def _rewrite_header(path, **changes):
    header = json.loads(path.read_text())
    header.update(changes)
    path.write_text(json.dumps(header))


def test_header_errors(tmp_path, record):
    path = save_record(record, tmp_path / "rec.json")
    _rewrite_header(path, n_leads=11)
    with pytest.raises(LeadCountError):
        load_record(path)
    _rewrite_header(path, n_leads=12, version=9)
    with pytest.raises(RecordHeaderError) as info:
        load_record(path)
    assert info.value.field == "version"
    path.write_text("not json")
    with pytest.raises(RecordHeaderError):
        load_record(path)


def test_truncated_and_trailing_data(tmp_path, record):
    path = save_record(record, tmp_path / "rec.json")
    data = data_path_for(path)
    raw = data.read_bytes()
    data.write_bytes(raw[:-8])
    with pytest.raises(TruncatedDataError) as info:
        load_record(path)
    assert info.value.offset == len(raw) - 8
    data.write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(RecordParseError):
        load_record(path)


def test_non_finite_value_in_file(tmp_path, record):
    path = save_record(record, tmp_path / "rec.json")
    samples = record.samples.copy()
    samples[2, 5] = np.inf
    data_path_for(path).write_bytes(samples.astype("<f4").tobytes())
    with pytest.raises(NonFiniteValueError) as info:
        load_record(path)
    assert info.value.field == "III"


def test_csv_import(tmp_path, record):
    path = tmp_path / "rec.csv"
    pd.DataFrame(record.samples.T, columns=list(LEAD_NAMES)).to_csv(path, index=False)
    back = load_record(path, fs=record.fs)
    np.testing.assert_allclose(back.samples, record.samples, atol=1e-6)


def test_csv_import_errors(tmp_path, record):
    path = tmp_path / "rec.csv"
    pd.DataFrame(record.samples.T[:, :11], columns=list(LEAD_NAMES[:11])).to_csv(path, index=False)
    with pytest.raises(LeadCountError):
        load_record(path, fs=100.0)
    frame = pd.DataFrame(record.samples.T[:5], columns=list(LEAD_NAMES)).astype(object)
    frame.iloc[3, 1] = "oops"
    frame.to_csv(path, index=False)
    with pytest.raises(NonFiniteValueError) as info:
        load_record(path, fs=100.0)
    assert info.value.field == "II"
    assert info.value.offset == 3
