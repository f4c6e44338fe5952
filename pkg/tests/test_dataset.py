import json

import numpy as np
import pytest

from config import ClassRule
from errors import DataError, FormatError, ParameterError
from lab.dataset import build_dataset, class_quotas, labels_of, load_dataset, rate_band, stratified_subset


def test_class_quotas_largest_remainder():
    assert class_quotas(10, (1 / 3, 1 / 3, 1 / 3)) == [4, 3, 3]
    assert class_quotas(100, (0.5, 0.25, 0.25)) == [50, 25, 25]
    assert sum(class_quotas(37, (0.2, 0.3, 0.5))) == 37


def test_rate_bands_stay_inside_their_class():
    rule = ClassRule()
    for label in range(3):
        low, high = rate_band(label, rule)
        assert rule.label(low) == label
        assert rule.label(high) == label


def test_split_sizes():
    dataset = build_dataset(100, seed=0, n_test=0)
    assert dataset.counts() == {"train": 90, "val": 10, "test": 0}


def test_labels_match_heart_rates():
    dataset = build_dataset(30, seed=1, n_test=6)
    rule = ClassRule()
    for split in dataset.splits.values():
        for sample in split:
            assert rule.label(sample.heart_rate) == sample.label
    assert sorted(labels_of(dataset.test).tolist()) == [0, 0, 1, 1, 2, 2]


def test_same_seed_same_dataset():
    a = build_dataset(20, seed=4, n_test=3)
    b = build_dataset(20, seed=4, n_test=3)
    assert a.manifest == b.manifest
    assert all(np.array_equal(x.record.samples, y.record.samples) for x, y in zip(a.train, b.train))
    assert build_dataset(20, seed=5, n_test=3).manifest != a.manifest


def test_test_pool_is_independent_of_n():
    a = build_dataset(20, seed=4, n_test=3)
    b = build_dataset(30, seed=4, n_test=3)
    assert a.manifest["splits"]["test"] == b.manifest["splits"]["test"]


def test_too_few_samples():
    with pytest.raises(ParameterError):
        build_dataset(5, seed=0)


def test_write_and_load(tmp_path):
    built = build_dataset(12, seed=2, out_dir=tmp_path, n_test=3)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["splits"]["train"][0]["record"].startswith("records/")
    loaded = load_dataset(tmp_path)
    assert loaded.counts() == built.counts()
    assert loaded.digest() == built.digest()
    for a, b in zip(loaded.train, built.train):
        assert np.array_equal(a.record.samples, b.record.samples)
        assert a.report.ids == b.report.ids


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "missing")
    build_dataset(12, seed=2, out_dir=tmp_path, n_test=0)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["version"] = 7
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        load_dataset(tmp_path)


def test_stratified_subset():
    dataset = build_dataset(90, seed=3, n_test=0)
    subset = stratified_subset(dataset.train, 0.1, seed=0, n_classes=3)
    counts = np.bincount(labels_of(subset), minlength=3)
    full = np.bincount(labels_of(dataset.train), minlength=3)
    assert counts.tolist() == [int(round(0.1 * c)) for c in full]
    assert stratified_subset(dataset.train, 0.1, seed=0, n_classes=3) == subset
    with pytest.raises(DataError):
        stratified_subset(dataset.train, 0.01, seed=0, n_classes=3)
    with pytest.raises(ParameterError):
        stratified_subset(dataset.train, 0.0, seed=0, n_classes=3)
