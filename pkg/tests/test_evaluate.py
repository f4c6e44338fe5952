import math

import numpy as np
import pandas as pd
import pytest

from config import ModelConfig, TrainConfig
from errors import ParameterError, ShapeError
from lab import evaluate
from lab.dataset import build_dataset
from lab.metrics import macro_auc
from lab.train import train


def test_einthoven_residual_rms(sample, rng):
    assert evaluate.einthoven_residual_rms([sample.record]) < 1e-5
    noisy = rng.normal(size=(2, 12, 50))
    assert evaluate.einthoven_residual_rms(noisy) > 0.5
    with pytest.raises(ShapeError):
        evaluate.einthoven_residual_rms(np.zeros((2, 11, 50)))


def test_zero_shot_scores_are_cosines(rng):
    z_img, z_txt = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
    scores = evaluate.zero_shot_scores(z_img * 7.0, z_txt)
    for i in range(5):
        for k in range(3):
            cosine = z_img[i] @ z_txt[k] / (np.linalg.norm(z_img[i]) * np.linalg.norm(z_txt[k]))
            assert scores[i, k] == pytest.approx(cosine, rel=1e-9)


def test_zero_shot_scores_are_not_renormalized_per_sample():
    z_img = np.array([[0.6, 0.6, math.sqrt(0.28)], [0.2, -0.5, math.sqrt(0.71)]])
    z_txt = np.eye(3)[:2]
    scores = evaluate.zero_shot_scores(z_img, z_txt)
    np.testing.assert_allclose(scores, [[0.6, 0.6], [0.2, -0.5]])
    assert macro_auc(scores, np.array([0, 1])) == pytest.approx(0.5)


def test_identical_prompts_give_chance_auc(rng):
    labels = np.array([0, 1, 2, 0, 1, 2])
    z_img = np.tile(rng.normal(size=4), (6, 1))
    scores = evaluate.zero_shot_scores(z_img, np.ones((3, 4)))
    assert macro_auc(scores, labels) == pytest.approx(0.5)


def test_class_order_does_not_change_zero_shot_auc(rng):
    labels = np.repeat(np.arange(3), 4)
    z_img, z_txt = rng.normal(size=(12, 5)), rng.normal(size=(3, 5))
    order = np.array([2, 0, 1])
    base = macro_auc(evaluate.zero_shot_scores(z_img, z_txt), labels)
    permuted = macro_auc(evaluate.zero_shot_scores(z_img, z_txt[order]), np.argsort(order)[labels])
    assert permuted == pytest.approx(base)


def test_linear_probe_separates_clusters(rng):
    labels = np.repeat(np.arange(3), 20)
    features = np.eye(3)[labels] * 3.0 + rng.normal(0, 0.3, size=(60, 3))
    config = TrainConfig(probe_epochs=30, probe_lr=0.05, probe_batch_size=16)
    predict = evaluate.fit_linear_probe(features, labels, 3, config, seed=0)
    probs = predict(features)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-5)
    assert macro_auc(probs, labels) > 0.95


def test_linear_probe_shape_check():
    with pytest.raises(ShapeError):
        evaluate.fit_linear_probe(np.zeros((4, 2)), np.zeros(5, dtype=int), 3, TrainConfig())


def test_embeddings_are_deterministic(trained, tiny_dataset):
    images = evaluate.render_all(tiny_dataset.test, trained.student.render_config)
    z_img, z_ctr = evaluate.embed(trained.student, images)
    again, _ = evaluate.embed(trained.student, images, batch_size=2)
    assert z_img.shape[0] == z_ctr.shape[0] == len(tiny_dataset.test)
    np.testing.assert_allclose(z_img, again, rtol=1e-5, atol=1e-6)


def test_load_student_matches_trained(trained, tiny_model, tiny_train, tiny_dataset):
    student = evaluate.load_student(trained.checkpoint, tiny_model, tiny_train.render, tiny_train.loss)
    images = evaluate.render_all(tiny_dataset.val, student.render_config)
    np.testing.assert_array_equal(evaluate.embed(student, images)[0], evaluate.embed(trained.student, images)[0])


def test_reconstruct_shape(trained, tiny_dataset, tiny_model):
    images = evaluate.render_all(tiny_dataset.val, trained.student.render_config)
    assert evaluate.reconstruct(trained.student, images).shape == (len(images), 12, tiny_model.signal_length)


def test_linear_probe_and_zero_shot_run(trained, tiny_dataset, tiny_train):
    probe = evaluate.linear_probe(trained.student, tiny_dataset, 1.0, tiny_train)
    zero = evaluate.zero_shot(trained.student, trained.teachers, tiny_dataset.test)
    assert 0.0 <= probe <= 1.0
    assert 0.0 <= zero <= 1.0
    shuffled = evaluate.linear_probe(trained.student, tiny_dataset, 1.0, tiny_train, shuffle_labels=True)
    assert 0.0 <= shuffled <= 1.0


def test_ablation_config():
    config = TrainConfig()
    assert evaluate.ablation_config(config, "no_rule").loss.w_rule == 0.0
    ctr_only = evaluate.ablation_config(config, "ctr_only").loss
    assert ctr_only.theta == 0.0 and ctr_only.w_rule == 0.0
    assert evaluate.ablation_config(config, "full").loss == config.loss
    with pytest.raises(ParameterError):
        evaluate.ablation_config(config, "no_decoder")


def test_run_ablation(tmp_path, tiny_train, tiny_model, tiny_dataset):
    config = tiny_train.updated(total_steps=2)
    frame = evaluate.run_ablation(config, tiny_model, tiny_dataset, ["full", "no_rule"], tmp_path)
    assert isinstance(frame, pd.DataFrame)
    assert list(frame["variant"]) == ["full", "no_rule"]
    assert all(math.isfinite(v) for v in frame["einthoven_rms"])
    assert (tmp_path / "full" / "best.ecsk").exists()


# toy-scale runs ------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    config = TrainConfig.toy()
    data = build_dataset(
        config.n_samples,
        config.seed,
        config.class_mix,
        tmp_path_factory.mktemp("toy_data"),
        fs=config.fs,
        duration=config.duration,
        val_fraction=config.val_fraction,
        n_test=config.test_count,
    )
    assert (len(data.train), len(data.val)) == (648, 72)
    return data


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory, toy_data):
    return train(TrainConfig.toy(), ModelConfig.toy(), toy_data, tmp_path_factory.mktemp("toy_run"))


@pytest.mark.slow
def test_toy_run_halves_the_loss(toy_run):
    totals = {row["step"]: row["total"] for row in toy_run.log if "total" in row}
    early = np.mean([totals[s] for s in range(10, 61) if s in totals])
    late = np.mean([totals[s] for s in sorted(totals)[-50:]])
    assert late < 0.5 * early


@pytest.mark.slow
def test_toy_run_zero_shot(toy_run, toy_data):
    assert evaluate.zero_shot(toy_run.student, toy_run.teachers, toy_data.test) >= 0.85


@pytest.mark.slow
def test_toy_run_linear_classifier_grows_with_labels(toy_run, toy_data):
    config = TrainConfig.toy()
    full = [evaluate.linear_probe(toy_run.student, toy_data, 1.0, config, seed=s) for s in range(3)]
    few = [evaluate.linear_probe(toy_run.student, toy_data, 0.01, config, seed=s) for s in range(3)]
    assert np.median(full) >= 0.90
    assert np.median(full) >= np.median(few)


@pytest.mark.slow
def test_rule_loss_lowers_einthoven_residual(tmp_path, toy_data):
    frame = evaluate.run_ablation(TrainConfig.toy(), ModelConfig.toy(), toy_data, ["full", "no_rule"], tmp_path)
    rms = dict(zip(frame["variant"], frame["einthoven_rms"]))
    assert rms["no_rule"] >= rms["full"]
