"""Einthoven and Goldberger lead laws, their projections, the soft rule loss and SNR audits.

Every formula here is written once and works on numpy arrays and on autodiff
Tensors alike, so the training loss and the plain audit share one implementation.
"""

from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from config import RuleWeights
from errors import PreconditionError, ShapeError, UndefinedSNRError
from lab.autodiff import Tensor
from logger import get_logger

logger = get_logger("ecglab.lead_rules")

LEAD_NAMES: Tuple[str, ...] = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
LEAD_INDEX = {name: i for i, name in enumerate(LEAD_NAMES)}
DERIVED_LEADS: Tuple[str, ...] = ("III", "aVR", "aVL", "aVF")

EINTHOVEN_TOLERANCE_MV = 1e-4
SNR_CAP_DB = 120.0
SNR_REPORT_NOTE = "# mean_snr_db: SNR computed per record, then averaged across records"


def _lead(x):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    return arr if arr.dtype.kind == "f" else arr.astype(np.float64)


def _same_shape(op: str, *leads):
    shapes = {tuple(np.shape(lead.data if isinstance(lead, Tensor) else lead)) for lead in leads}
    if len(shapes) > 1:
        raise ShapeError(f"{op}: lead shapes differ: {sorted(shapes)}")


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def derive_limb_from_I_II(lead_i, lead_ii):
    """(III, aVR, aVL, aVF) from leads I and II."""
    lead_i, lead_ii = _lead(lead_i), _lead(lead_ii)
    _same_shape("derive_limb_from_I_II", lead_i, lead_ii)
    iii = lead_ii - lead_i
    avr = -(lead_i + lead_ii) * 0.5
    avl = lead_i - lead_ii * 0.5
    avf = lead_ii - lead_i * 0.5
    return iii, avr, avl, avf


def refine_einthoven(i_hat, ii_hat, iii_hat):
    """Orthogonal projection of (I, II, III) onto the plane I - II + III = 0."""
    i_hat, ii_hat, iii_hat = _lead(i_hat), _lead(ii_hat), _lead(iii_hat)
    _same_shape("refine_einthoven", i_hat, ii_hat, iii_hat)
    i_ref = (i_hat * 2.0 + ii_hat - iii_hat) / 3.0
    iii_ref = (-i_hat + ii_hat + iii_hat * 2.0) / 3.0
    ii_ref = i_ref + iii_ref
    return i_ref, ii_ref, iii_ref


def refine_goldberger(i_ref, ii_ref, iii_ref, check: bool = True):
    """Augmented leads from an Einthoven-consistent triple."""
    i_ref, ii_ref, iii_ref = _lead(i_ref), _lead(ii_ref), _lead(iii_ref)
    _same_shape("refine_goldberger", i_ref, ii_ref, iii_ref)
    if check:
        residual = _values(i_ref) - _values(ii_ref) + _values(iii_ref)
        worst = float(np.max(np.abs(residual))) if residual.size else 0.0
        if worst > EINTHOVEN_TOLERANCE_MV:
            raise PreconditionError(
                f"refine_goldberger: triple violates I - II + III = 0 by {worst:.3g} mV "
                f"(tolerance {EINTHOVEN_TOLERANCE_MV} mV)"
            )
    _, avr, avl, avf = derive_limb_from_I_II(i_ref, ii_ref)
    return avr, avl, avf


def _samples(x):
    samples = getattr(x, "samples", x)
    return samples if isinstance(samples, Tensor) else np.asarray(samples)


def _mse(pred, target):
    diff = pred - target
    return (diff * diff).mean()


def rule_loss(x_hat, x, weights: Optional[RuleWeights] = None):
    """Soft lead-law loss of a reconstruction ``x_hat`` against ground truth ``x``.

    Both arguments are records or (..., 12, T) arrays/Tensors; leads are the
    second-to-last axis. Returns a float for arrays and a scalar Tensor otherwise.
    """
    weights = weights or RuleWeights()
    fs_hat, fs = getattr(x_hat, "fs", None), getattr(x, "fs", None)
    if fs_hat is not None and fs is not None and fs_hat != fs:
        raise ShapeError(f"rule_loss: sampling rates differ ({fs_hat} Hz vs {fs} Hz)")
    pred, target = _samples(x_hat), _samples(x)
    if tuple(pred.shape) != tuple(np.shape(target)) or pred.shape[-2] != len(LEAD_NAMES):
        raise ShapeError(
            f"rule_loss: shapes {tuple(pred.shape)} and {tuple(np.shape(target))} must match as (..., 12, T)"
        )

    def lead(arr, name):
        return arr[..., LEAD_INDEX[name], :]

    refined = refine_einthoven(lead(pred, "I"), lead(pred, "II"), lead(pred, "III"))
    augmented = refine_goldberger(*refined, check=False)
    einthoven = sum(_mse(r, lead(target, n)) for r, n in zip(refined, ("I", "II", "III"))) / 3.0
    goldberger = sum(_mse(r, lead(target, n)) for r, n in zip(augmented, ("aVR", "aVL", "aVF"))) / 3.0
    loss = einthoven * weights.w_E + goldberger * weights.w_G
    return loss if isinstance(loss, Tensor) else float(loss)


def einthoven_residual(samples) -> np.ndarray:
    samples = np.asarray(getattr(samples, "samples", samples))
    return samples[..., LEAD_INDEX["I"], :] - samples[..., LEAD_INDEX["II"], :] + samples[..., LEAD_INDEX["III"], :]


def snr_db(reference, candidate) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if reference.shape != candidate.shape:
        raise ShapeError(f"snr_db: reference shape {reference.shape} != candidate shape {candidate.shape}")
    signal = float(np.sum(reference * reference))
    if signal == 0.0:
        raise UndefinedSNRError("snr_db: reference has zero power")
    error = float(np.sum((reference - candidate) ** 2))
    if error <= 1e-12 * signal:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * np.log10(signal / error))


def snr_audit(records: Iterable) -> pd.DataFrame:
    """Per derived lead: recorded lead against its value derived from I and II, averaged per record."""
    per_lead = {name: [] for name in DERIVED_LEADS}
    for record in records:
        samples = np.asarray(record.samples)
        derived = derive_limb_from_I_II(samples[LEAD_INDEX["I"]], samples[LEAD_INDEX["II"]])
        for name, values in zip(DERIVED_LEADS, derived):
            try:
                per_lead[name].append(snr_db(samples[LEAD_INDEX[name]], values))
            except UndefinedSNRError:
                logger.warning("skipping silent lead in SNR audit", extra={"lead": name})
    rows = [
        {"lead": name, "mean_snr_db": float(np.mean(vals)) if vals else float("nan"), "n_records": len(vals)}
        for name, vals in per_lead.items()
    ]
    return pd.DataFrame(rows, columns=["lead", "mean_snr_db", "n_records"])


def write_snr_report(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SNR_REPORT_NOTE + "\n")
        frame.to_csv(fh, index=False, float_format="%.4f", lineterminator="\n")
    return path
