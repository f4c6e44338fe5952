import numpy as np
import pytest

from config import AugmentConfig, RenderConfig, SynthParams, TrainConfig
from lab.checks import tiny_model_config
from lab.dataset import build_dataset
from lab.signal_core import synth_ecg
from lab.train import train


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sample():
    return synth_ecg(SynthParams(heart_rate=72, fs=100.0, seed=7))


@pytest.fixture
def record(sample):
    return sample.record


@pytest.fixture
def small_render():
    return RenderConfig(px_per_mm=2)


@pytest.fixture(scope="session")
def tiny_model():
    return tiny_model_config(seed=0)


@pytest.fixture(scope="session")
def tiny_train():
    return TrainConfig(
        n_samples=12,
        n_test=6,
        batch_size=4,
        lr=1e-2,
        total_steps=4,
        eval_interval=2,
        teacher_steps=3,
        teacher_batch_size=4,
        probe_epochs=3,
        probe_batch_size=4,
        augment=AugmentConfig(apply_prob=0.0),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_train):
    return build_dataset(
        tiny_train.n_samples,
        seed=0,
        out_dir=tmp_path_factory.mktemp("data"),
        fs=tiny_train.fs,
        duration=tiny_train.duration,
        val_fraction=tiny_train.val_fraction,
        n_test=tiny_train.n_test,
    )


@pytest.fixture(scope="session")
def trained(tmp_path_factory, tiny_train, tiny_model, tiny_dataset):
    """One short two-stage run shared by the read-only training and evaluation tests."""
    return train(tiny_train, tiny_model, tiny_dataset, tmp_path_factory.mktemp("run"))
