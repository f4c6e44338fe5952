"""Finite-difference gradient suite over every primitive and every loss."""

from typing import Callable, Dict, Iterable, List

import numpy as np

from config import DecoderConfig, LossWeights, ModelConfig, RenderConfig, SynthParams
from lab import autodiff as ad
from lab import losses
from lab.models import Student, Teachers
from lab.render import render
from lab.report import Vocabulary
from lab.signal_core import synth_ecg
from logger import get_logger
from utils import rng_for

logger = get_logger("ecglab.checks")

TOLERANCE = 1e-3
END_TO_END_TOLERANCE = 1e-2
DEFAULT_SEEDS = tuple(range(10))

# kinked primitives get inputs at least this far from the kink
KINK_GAP = 0.05


def _away(x: np.ndarray, point: float = 0.0) -> np.ndarray:
    near = np.abs(x - point) < KINK_GAP
    return np.where(near, point + np.where(x >= point, 2, -2) * KINK_GAP, x)


def _weighted(rng: np.random.Generator, fn: Callable) -> Callable:
    """Reduce a tensor-valued function to a scalar with fixed random weights."""
    cache = {}

    def scalar(*xs):
        out = fn(*xs)
        if out.shape not in cache:
            cache[out.shape] = rng.normal(size=out.shape)
        return (out * cache[out.shape]).sum()

    return scalar


def _primitive_cases(rng: np.random.Generator) -> Dict[str, tuple]:
    n = rng.normal
    positive = rng.uniform(0.5, 2.0, size=(3, 4))
    denominators = positive * rng.choice([-1.0, 1.0], size=(3, 4))
    return {
        "add": (lambda a, b: a + b, [n(size=(3, 4)), n(size=(4,))]),
        "sub": (lambda a, b: a - b, [n(size=(3, 4)), n(size=(3, 1))]),
        "mul": (lambda a, b: a * b, [n(size=(3, 4)), n(size=(3, 4))]),
        "div": (lambda a, b: a / b, [n(size=(3, 4)), denominators]),
        "neg": (lambda a: -a, [n(size=(5,))]),
        "tanh": (ad.tanh, [n(size=(3, 4))]),
        "exp": (ad.exp, [n(size=(3, 4))]),
        "log": (ad.log, [positive]),
        "sqrt": (ad.sqrt, [positive]),
        "relu": (ad.relu, [_away(n(size=(3, 4)))]),
        "abs": (ad.abs_, [_away(n(size=(3, 4)))]),
        "clamp_min": (lambda a: ad.clamp_min(a, 0.1), [_away(n(size=(3, 4)), 0.1)]),
        "matmul": (ad.matmul, [n(size=(2, 3, 4)), n(size=(4, 5))]),
        "transpose": (lambda a: ad.transpose(a, (2, 0, 1)), [n(size=(2, 3, 4))]),
        "reshape": (lambda a: a.reshape(4, 6), [n(size=(2, 3, 4))]),
        "sum": (lambda a: a.sum(axis=1), [n(size=(3, 4))]),
        "mean": (lambda a: a.mean(axis=0, keepdims=True), [n(size=(3, 4))]),
        "concat": (lambda a, b: ad.concat([a, b], axis=1), [n(size=(3, 2)), n(size=(3, 4))]),
        "slice": (lambda a: a[1:, ::2], [n(size=(3, 4))]),
        "gather": (lambda a: a[np.array([0, 2, 0])], [n(size=(3, 4))]),
        "l2_normalize_rows": (ad.l2_normalize_rows, [n(size=(3, 4))]),
        "softmax_rows": (ad.softmax_rows, [n(size=(3, 4))]),
        "log_softmax_rows": (ad.log_softmax_rows, [n(size=(3, 4))]),
        "det3": (ad.det3, [n(size=(2, 3, 3))]),
        "layer_norm_rows": (ad.layer_norm_rows, [n(size=(3, 6)), n(size=(6,)), n(size=(6,))]),
        "scaled_dot_attention": (ad.scaled_dot_attention, [n(size=(2, 3, 4)), n(size=(2, 5, 4)), n(size=(2, 5, 4))]),
    }


def _loss_cases(rng: np.random.Generator) -> Dict[str, tuple]:
    n = rng.normal
    w = LossWeights()
    b, d, t = 4, 6, 16
    target = n(size=(2, 12, t))

    def total(ctr, gram, mse, rule):
        parts = {"ctr": ctr.sum(), "gram": gram.sum(), "mse": mse.sum(), "rule": rule.sum()}
        return losses.total_loss(parts, w)[0]

    return {
        "contrastive_loss": (
            lambda zi, zt, tau: losses.contrastive_loss(zi, zt, tau.sum(), w.epsilon_smooth),
            [n(size=(b, d)), n(size=(b, d)), rng.uniform(1.0, 5.0, size=(1,))],
        ),
        "gram_volume": (lambda a, c, e: losses.gram_volume(a, c, e, w.det_floor), [n(size=d), n(size=d), n(size=d)]),
        "gram_loss": (
            lambda zi, zt, zs, tau: losses.gram_loss(
                losses.volume_matrix(zi, zt, zs, w.det_floor), tau.sum(), w.epsilon_smooth
            ),
            [n(size=(b, d)), n(size=(b, d)), n(size=(b, d)), rng.uniform(1.0, 5.0, size=(1,))],
        ),
        "recon_mse": (lambda x_hat: losses.recon_mse(x_hat, target), [n(size=(2, 12, t))]),
        "rule_loss": (lambda x_hat: losses.soft_rule_loss(x_hat, target, w), [n(size=(2, 12, t))]),
        "total_loss": (total, [rng.uniform(0.5, 2.0, size=(1,)) for _ in range(4)]),
    }


def _row(name: str, error: float, tolerance: float) -> Dict:
    return {"name": name, "max_rel_error": float(error), "passed": bool(error < tolerance)}


def run_gradient_suite(seeds: Iterable[int] = DEFAULT_SEEDS, end_to_end: bool = True) -> List[Dict]:
    """One row per primitive/loss with the worst relative error over ``seeds``."""
    worst: Dict[str, float] = {}
    for seed in seeds:
        rng = rng_for(seed, 0)
        weights_rng = rng_for(seed, 1)
        for name, (fn, inputs) in _primitive_cases(rng).items():
            error = ad.grad_check(_weighted(weights_rng, fn), inputs)
            worst[name] = max(worst.get(name, 0.0), error)
        for name, (fn, inputs) in _loss_cases(rng).items():
            error = ad.grad_check(fn, inputs)
            worst[name] = max(worst.get(name, 0.0), error)
    rows = [_row(name, error, TOLERANCE) for name, error in worst.items()]
    if end_to_end:
        rows.append(_row("image_encoder_end_to_end", image_encoder_spot_check(), END_TO_END_TOLERANCE))
    failed = [r["name"] for r in rows if not r["passed"]]
    logger.info("gradient suite finished", extra={"checks": len(rows), "failed": failed})
    return rows


# end to end ----------------------------------------------------------------------


def tiny_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(
        d_img=8,
        d_sig=6,
        signal_length=1000,
        image_size=(32, 32),
        image_patch=16,
        image_hidden=8,
        signal_patch=50,
        signal_hidden=8,
        text_dim=8,
        decoder=DecoderConfig(layers=1, d=8, heads=2, patch=50, mask_ratio=0.25),
        seed=seed,
    )


def image_encoder_spot_check(seed: int = 0, coords: int = 5) -> float:
    """Relative error of d(total loss)/d(image embedding weights) on ``coords`` random coordinates."""
    model = tiny_model_config(seed)
    render_config = RenderConfig(px_per_mm=2)
    weights = LossWeights()
    vocab = Vocabulary(model.vocab)
    samples = [
        synth_ecg(SynthParams(heart_rate=rate, fs=100.0, seed=seed + k), vocab) for k, rate in enumerate((50, 72, 120))
    ]
    images = [render(s.record, render_config) for s in samples]
    signals = np.stack([s.record.samples for s in samples])

    teachers = Teachers(model, vocab)
    teachers.freeze()
    student = Student(model, render_config, weights)
    patches = student.encoder.patches(images)
    with ad.no_grad():
        z_sig = teachers.encode_signal(signals).data
        z_txt = teachers.encode_text([s.report for s in samples]).data

    embed = student.encoder.embed

    def objective(w):
        saved, embed.w = embed.w, w
        try:
            z_rec, z_ctr = student.project(student.encoder(images, patches=patches))
            x_hat = student.decode_signal(z_rec, mask_seed=seed, training=True)
            temps = student.temperatures
            volumes = losses.volume_matrix(z_ctr, z_txt, z_sig, weights.det_floor)
            parts = {
                "ctr": losses.contrastive_loss(z_ctr, z_txt, temps.tau_ctr(), weights.epsilon_smooth),
                "gram": losses.gram_loss(volumes, temps.tau_gram(), weights.epsilon_smooth),
                "mse": losses.recon_mse(x_hat, signals),
                "rule": losses.soft_rule_loss(x_hat, signals, weights),
            }
            return losses.total_loss(parts, weights)[0]
        finally:
            embed.w = saved

    with student.graph.cast(np.float64):
        return ad.grad_check(objective, [embed.w.data], h=1e-5, coords=coords, seed=seed)
