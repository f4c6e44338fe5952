"""Downstream evaluations (linear probe, zero-shot), reconstruction audits and the ablation runner."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import LossWeights, ModelConfig, RenderConfig, TrainConfig
from errors import DataError, ParameterError, ShapeError, UndefinedAUCError
from lab import autodiff as ad
from lab import lead_rules
from lab.autodiff import Tensor
from lab.checkpoint import Checkpoint
from lab.dataset import Dataset, labels_of, stratified_subset
from lab.losses import smoothed_targets
from lab.metrics import macro_auc
from lab.models import Student, Teachers
from lab.optim import AdamWState, adamw_step
from lab.render import EcgImage, render
from lab.report import Vocabulary, class_prompts
from lab.signal_core import LabeledSample
from lab.train import pretrain_teachers, train
from logger import get_logger
from utils import rng_for

logger = get_logger("ecglab.evaluate")

PROBE_FRACTIONS = (0.01, 0.10, 1.00)
PROBE_SMOOTHING = 0.1
_PROBE_INIT, _PROBE_SHUFFLE = 200, 201


def load_student(checkpoint: Checkpoint, model: ModelConfig, render_config: RenderConfig, loss=None) -> Student:
    student = Student(model, render_config, loss)
    student.graph.load_state_dict(checkpoint.params)
    student.graph.freeze()
    return student


def render_all(samples: Sequence[LabeledSample], render_config: RenderConfig, workers: int = 1) -> List[EcgImage]:
    records = [s.record for s in samples]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda r: render(r, render_config), records))
    return [render(r, render_config) for r in records]


def embed(student: Student, images: Sequence[EcgImage], batch_size: int = 32) -> Tuple[np.ndarray, np.ndarray]:
    """(z_img, z_ctr) for every image, without gradients or augmentation."""
    z_img, z_ctr = [], []
    with ad.no_grad():
        for start in range(0, len(images), batch_size):
            z = student.encode_image(list(images[start : start + batch_size]))
            z_img.append(z.data)
            z_ctr.append(student.project(z)[1].data)
    return np.concatenate(z_img), np.concatenate(z_ctr)


def reconstruct(student: Student, images: Sequence[EcgImage], batch_size: int = 32) -> np.ndarray:
    """Decoder outputs (N, 12, T) with masking off."""
    out = []
    with ad.no_grad():
        for start in range(0, len(images), batch_size):
            z_rec, _ = student.project(student.encode_image(list(images[start : start + batch_size])))
            out.append(student.decode_signal(z_rec, training=False).data)
    return np.concatenate(out)


def einthoven_residual_rms(signals) -> float:
    """Per-record RMS of I - II + III, averaged over records."""
    if isinstance(signals, (list, tuple)):
        signals = np.stack([getattr(s, "samples", s) for s in signals])
    signals = np.asarray(signals, dtype=np.float64)
    if signals.ndim == 2:
        signals = signals[None]
    if signals.ndim != 3 or signals.shape[1] != len(lead_rules.LEAD_NAMES):
        raise ShapeError(f"einthoven_residual_rms expects (N, 12, T), got {signals.shape}")
    residual = np.stack([lead_rules.einthoven_residual(x) for x in signals])
    return float(np.sqrt((residual**2).mean(axis=-1)).mean())


# linear probe --------------------------------------------------------------------


def fit_linear_probe(features: np.ndarray, labels: np.ndarray, n_classes: int, config: TrainConfig, seed: int = 0):
    """Standardize with the training statistics and fit one affine layer by smoothed CE and AdamW.

    Returns a callable mapping raw features to class probabilities.
    """
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.size:
        raise ShapeError(f"probe features {features.shape} do not match {labels.size} labels")
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), 1e-6)
    x = (features - mean) / std

    rng = rng_for(seed, _PROBE_INIT)
    graph = ad.Graph("probe")
    w = graph.param("probe.w", rng.normal(0.0, np.sqrt(1.0 / x.shape[1]), size=(x.shape[1], n_classes)))
    b = graph.param("probe.b", np.zeros(n_classes))
    targets = smoothed_targets(n_classes, PROBE_SMOOTHING)[labels]
    optimizer = config.optimizer
    state = AdamWState()
    size = config.probe_batch_size
    for epoch in range(config.probe_epochs):
        order = rng_for(seed, _PROBE_SHUFFLE, epoch).permutation(x.shape[0])
        for start in range(0, order.size, size):
            idx = order[start : start + size]
            logits = ad.matmul(Tensor(x[idx]), w) + b
            loss = -(ad.log_softmax_rows(logits) * targets[idx]).sum(axis=1).mean()
            ad.backward(loss)
            adamw_step(graph.items(), {n: p.grad for n, p in graph.items()}, state, config.probe_lr, optimizer)
            graph.zero_grad()

    weights, bias = w.data.copy(), b.data.copy()

    def predict(raw: np.ndarray) -> np.ndarray:
        z = (np.asarray(raw, dtype=np.float32) - mean) / std
        logits = z @ weights + bias
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    return predict


def linear_probe(
    student: Student,
    dataset: Dataset,
    fraction: float,
    config: TrainConfig,
    seed: Optional[int] = None,
    n_classes: int = 3,
    workers: int = 1,
    shuffle_labels: bool = False,
) -> float:
    """Macro AUC on the test split of a linear classifier over frozen image embeddings."""
    if fraction not in PROBE_FRACTIONS:
        logger.warning("probe fraction outside the standard set", extra={"fraction": fraction})
    if not dataset.test:
        raise DataError("linear probing needs a non-empty test split")
    seed = config.seed if seed is None else seed
    subset = stratified_subset(dataset.train, fraction, seed, n_classes)
    train_x, _ = embed(student, render_all(subset, student.render_config, workers))
    test_x, _ = embed(student, render_all(dataset.test, student.render_config, workers))
    train_y = labels_of(subset)
    if shuffle_labels:
        train_y = rng_for(seed, 4).permutation(train_y)
    predict = fit_linear_probe(train_x, train_y, n_classes, config, seed)
    score = macro_auc(predict(test_x), labels_of(dataset.test), n_classes)
    logger.info("linear probe", extra={"fraction": fraction, "n_train": len(subset), "macro_auc": score})
    return score


# zero-shot -----------------------------------------------------------------------


def prompt_embeddings(teachers: Teachers, prompts: Sequence[str], vocab: Optional[Vocabulary] = None) -> np.ndarray:
    vocab = vocab or teachers.vocab
    reports = [vocab.encode(p) for p in prompts]
    with ad.no_grad():
        return teachers.encode_text(reports).data


def zero_shot_scores(z_ctr: np.ndarray, z_txt: np.ndarray) -> np.ndarray:
    """(N, K) cosine similarity of every image embedding to every prompt embedding."""
    a = z_ctr / np.linalg.norm(z_ctr, axis=1, keepdims=True)
    t = z_txt / np.linalg.norm(z_txt, axis=1, keepdims=True)
    return a @ t.T


def zero_shot(
    student: Student,
    teachers: Teachers,
    samples: Sequence[LabeledSample],
    prompts: Optional[Sequence[str]] = None,
    workers: int = 1,
) -> float:
    prompts = list(prompts) if prompts is not None else class_prompts()
    z_txt = prompt_embeddings(teachers, prompts)
    _, z_ctr = embed(student, render_all(samples, student.render_config, workers))
    score = macro_auc(zero_shot_scores(z_ctr, z_txt), labels_of(samples), len(prompts))
    logger.info("zero-shot", extra={"n": len(samples), "prompts": prompts, "macro_auc": score})
    return score


# ablation ------------------------------------------------------------------------

ABLATIONS: Dict[str, Dict[str, float]] = {
    "full": {},
    "no_rule": {"w_rule": 0.0},
    "no_gram": {"theta": 0.0},
    "no_ctr": {"alpha": 0.0},
    "ctr_only": {"theta": 0.0, "w_rule": 0.0},
}


def ablation_config(config: TrainConfig, variant: str) -> TrainConfig:
    if variant not in ABLATIONS:
        raise ParameterError(f"unknown ablation variant '{variant}' (known: {', '.join(ABLATIONS)})")
    loss: LossWeights = config.loss.updated(**ABLATIONS[variant])
    return config.updated(loss=loss.model_dump())


def run_ablation(
    config: TrainConfig,
    model: ModelConfig,
    dataset: Dataset,
    variants: Sequence[str] = tuple(ABLATIONS),
    run_dir=None,
    workers: int = 1,
    progress: bool = False,
) -> pd.DataFrame:
    """Train each variant on matched seeds and shared teachers; one row per variant."""
    for variant in variants:
        ablation_config(config, variant)
    teachers = pretrain_teachers(dataset, model, config, run_dir, progress)
    images = render_all(dataset.val, config.render, workers)
    rows = []
    for variant in variants:
        variant_dir = Path(run_dir) / variant if run_dir is not None else None
        result = train(ablation_config(config, variant), model, dataset, variant_dir, workers, None, teachers, progress)
        try:
            zero_shot_auc = zero_shot(result.student, teachers, dataset.val, workers=workers)
        except UndefinedAUCError as e:
            logger.warning("zero-shot AUC undefined on the val split", extra={"variant": variant, "reason": str(e)})
            zero_shot_auc = float("nan")
        rows.append(
            {
                "variant": variant,
                "best_step": result.checkpoint.step,
                "best_val_loss": result.checkpoint.val_loss,
                "zero_shot_auc": zero_shot_auc,
                "einthoven_rms": einthoven_residual_rms(reconstruct(result.student, images)),
            }
        )
        logger.info("ablation variant finished", extra=rows[-1])
    return pd.DataFrame(rows, columns=["variant", "best_step", "best_val_loss", "zero_shot_auc", "einthoven_rms"])
