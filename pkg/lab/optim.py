"""AdamW with decoupled weight decay and the cosine schedule with linear warmup."""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple

import numpy as np

from config import AdamWConfig
from errors import DivergenceError, ShapeError
from lab.autodiff import Tensor
from logger import get_logger

logger = get_logger("ecglab.optim")


def cosine_warmup_lr(step: int, total: int, warmup_fraction: float, lr_max: float) -> float:
    warmup = int(math.floor(warmup_fraction * total))
    step = min(max(step, 0), total)
    if warmup and step <= warmup:
        return lr_max * step / warmup
    span = total - warmup
    if span <= 0:
        return 0.0
    progress = (step - warmup) / span
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Iterable[Tuple[str, Tensor]],
    grads: Dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    config: AdamWConfig,
) -> AdamWState:
    """Update ``params`` in place. Parameters without a gradient are skipped."""
    params = [(name, p) for name, p in params if grads.get(name) is not None]
    for name, p in params:
        grad = grads[name]
        if grad.shape != p.shape:
            raise ShapeError(f"gradient for '{name}' has shape {grad.shape}, parameter is {p.shape}")
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient for parameter '{name}'", part=name)

    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, p in params:
        grad = grads[name].astype(np.float64)
        m = state.m.get(name, np.zeros(p.shape))
        v = state.v.get(name, np.zeros(p.shape))
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.m[name], state.v[name] = m, v

        value = p.data.astype(np.float64)
        if config.weight_decay:
            value = value - lr * config.weight_decay * value
        value = value - (lr / correction1) * m / (np.sqrt(v / correction2) + config.eps)
        p.data = value.astype(p.data.dtype)
    return state
