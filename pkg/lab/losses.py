"""Training objective: contrastive, Gram-volume, reconstruction and lead-rule terms."""

import math
from typing import Dict, Tuple, Union

import numpy as np

from config import LossWeights, RuleWeights
from errors import DivergenceError, ShapeError
from lab import autodiff as ad
from lab import lead_rules
from lab.autodiff import Graph, Tensor
from logger import get_logger

logger = get_logger("ecglab.losses")

Scalar = Union[Tensor, float]

PART_NAMES = ("ctr", "gram", "mse", "rule")


def smoothed_targets(batch: int, epsilon: float) -> np.ndarray:
    return (1.0 - epsilon) * np.eye(batch) + epsilon / batch


def symmetric_cross_entropy(logits: Tensor, epsilon: float) -> Tensor:
    """Mean of row-wise and column-wise smoothed cross-entropy; the diagonal is the positive pair."""
    batch = logits.shape[0]
    targets = smoothed_targets(batch, epsilon)
    rows = -(ad.log_softmax_rows(logits) * targets).sum(axis=1).mean()
    cols = -(ad.log_softmax_rows(ad.transpose(logits)) * targets).sum(axis=1).mean()
    return (rows + cols) * 0.5


def _check_pair(op: str, a: Tensor, b: Tensor):
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"{op}: embedding batches must be equal BxD matrices, got {a.shape} and {b.shape}")


def contrastive_loss(z_img, z_txt, tau: Scalar, epsilon: float = 0.1) -> Tensor:
    z_img, z_txt = ad.as_tensor(z_img), ad.as_tensor(z_txt)
    _check_pair("contrastive_loss", z_img, z_txt)
    sims = ad.l2_normalize_rows(z_img) @ ad.transpose(ad.l2_normalize_rows(z_txt))
    return symmetric_cross_entropy(sims * tau, epsilon)


def gram_volume(z_i, z_t, z_s, det_floor: float = 1e-12) -> Tensor:
    """Volume of the parallelepiped spanned by three unit-normalized vectors."""
    vectors = [ad.as_tensor(z) for z in (z_i, z_t, z_s)]
    if len({v.shape for v in vectors}) != 1 or vectors[0].ndim != 1:
        raise ShapeError(f"gram_volume: expected three equal-length vectors, got {[v.shape for v in vectors]}")
    d = vectors[0].shape[0]
    stacked = ad.l2_normalize_rows(ad.concat([v.reshape(1, d) for v in vectors], axis=0))
    gram = stacked @ ad.transpose(stacked)
    return ad.sqrt(ad.clamp_min(ad.abs_(ad.det3(gram)), det_floor))


def volume_matrix(z_img, z_txt, z_sig, det_floor: float = 1e-12) -> Tensor:
    """V[i][j] = gram_volume(z_img[i], z_txt[j], z_sig[j]); image rows are the anchors."""
    z_img, z_txt, z_sig = ad.as_tensor(z_img), ad.as_tensor(z_txt), ad.as_tensor(z_sig)
    _check_pair("volume_matrix", z_img, z_txt)
    _check_pair("volume_matrix", z_txt, z_sig)
    b = z_img.shape[0]
    u_img, u_txt, u_sig = (ad.l2_normalize_rows(z) for z in (z_img, z_txt, z_sig))

    it = u_img @ ad.transpose(u_txt)
    is_ = u_img @ ad.transpose(u_sig)
    ii = (u_img * u_img).sum(axis=1).reshape(b, 1)
    tt = (u_txt * u_txt).sum(axis=1).reshape(1, b)
    ss = (u_sig * u_sig).sum(axis=1).reshape(1, b)
    ts = (u_txt * u_sig).sum(axis=1).reshape(1, b)

    zeros = np.zeros((b, b))

    def cell(x):
        return (x + zeros).reshape(b, b, 1)

    rows = [
        ad.concat([cell(ii), cell(it), cell(is_)], axis=-1),
        ad.concat([cell(it), cell(tt), cell(ts)], axis=-1),
        ad.concat([cell(is_), cell(ts), cell(ss)], axis=-1),
    ]
    gram = ad.concat([r.reshape(b, b, 1, 3) for r in rows], axis=-2)
    return ad.sqrt(ad.clamp_min(ad.abs_(ad.det3(gram)), det_floor))


def gram_loss(volumes, tau: Scalar, epsilon: float = 0.1) -> Tensor:
    volumes = ad.as_tensor(volumes)
    if volumes.ndim != 2 or volumes.shape[0] != volumes.shape[1]:
        raise ShapeError(f"gram_loss: volume matrix must be BxB, got {volumes.shape}")
    return symmetric_cross_entropy(volumes * (-tau), epsilon)


def recon_mse(x_hat, x) -> Tensor:
    x_hat = ad.as_tensor(x_hat)
    target = x.samples if hasattr(x, "samples") else x
    target_shape = tuple(target.shape) if isinstance(target, Tensor) else np.shape(target)
    if tuple(x_hat.shape) != target_shape:
        raise ShapeError(f"recon_mse: shapes {x_hat.shape} and {target_shape} differ")
    diff = x_hat - target
    return (diff * diff).mean()


def soft_rule_loss(x_hat, x, weights: LossWeights) -> Tensor:
    return lead_rules.rule_loss(x_hat, x, RuleWeights(w_E=weights.w_E, w_G=weights.w_G))


def _value(part) -> float:
    return float(part.data.reshape(-1)[0]) if isinstance(part, Tensor) else float(part)


def total_loss(parts: Dict[str, Scalar], weights: LossWeights) -> Tuple[Scalar, Dict[str, float]]:
    """alpha*ctr + theta*gram + beta*(mse + w_rule*rule), plus the unweighted breakdown."""
    missing = [name for name in PART_NAMES if name not in parts]
    if missing:
        raise ShapeError(f"total_loss: missing part(s) {', '.join(missing)}")
    breakdown = {f"l_{name}": _value(parts[name]) for name in PART_NAMES}
    for name in PART_NAMES:
        if not math.isfinite(breakdown[f"l_{name}"]):
            raise DivergenceError(f"loss part '{name}' is not finite", part=name, breakdown=breakdown)
    total = (
        parts["ctr"] * weights.alpha
        + parts["gram"] * weights.theta
        + (parts["mse"] + parts["rule"] * weights.w_rule) * weights.beta
    )
    breakdown["total"] = _value(total)
    return total, breakdown


class Temperatures:
    """Learnable log-scales for the contrastive and Gram logits, tau = exp(s)."""

    def __init__(self, graph: Graph, weights: LossWeights):
        self.s_min = math.log(weights.tau_min)
        self.s_max = math.log(weights.tau_max)
        self.s_ctr = graph.param("temperature.s_ctr", np.array(math.log(weights.tau_init)))
        self.s_gram = graph.param("temperature.s_gram", np.array(math.log(weights.tau_init)))

    def tau_ctr(self) -> Tensor:
        return ad.exp(self.s_ctr)

    def tau_gram(self) -> Tensor:
        return ad.exp(self.s_gram)

    def clamp(self):
        for s in (self.s_ctr, self.s_gram):
            s.data = np.clip(s.data, self.s_min, self.s_max).astype(s.data.dtype)

    def values(self) -> Dict[str, float]:
        return {"tau_ctr": float(np.exp(self.s_ctr.data)), "tau_gram": float(np.exp(self.s_gram.data))}
