import numpy as np
import pytest

from errors import ShapeError, UndefinedAUCError
from lab.metrics import auc, macro_auc


def test_auc_hand_value():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_auc_perfect_and_inverted():
    assert auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert auc([4, 3, 2, 1], [0, 0, 1, 1]) == 0.0


def test_auc_ties_count_half():
    assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == pytest.approx(0.5)


def test_auc_single_class():
    with pytest.raises(UndefinedAUCError):
        auc([0.1, 0.2], [1, 1])


def test_auc_length_mismatch():
    with pytest.raises(ShapeError):
        auc([0.1, 0.2, 0.3], [0, 1])


def test_macro_auc_one_vs_rest():
    labels = np.array([0, 1, 2, 0, 1, 2])
    scores = np.eye(3)[labels]
    assert macro_auc(scores, labels) == 1.0
    assert macro_auc(np.full((6, 3), 1 / 3), labels) == pytest.approx(0.5)


@pytest.mark.parametrize(
    "transform", [lambda s: 3.0 * s + 7.0, np.exp, lambda s: s**3, np.arctan, lambda s: np.log1p(np.exp(s))]
)
def test_auc_is_invariant_under_increasing_maps(rng, transform):
    scores = np.round(rng.normal(size=200), 1)
    labels = rng.integers(0, 2, size=200)
    assert auc(transform(scores), labels) == pytest.approx(auc(scores, labels), abs=1e-12)
    assert auc(-scores, labels) == pytest.approx(1.0 - auc(scores, labels), abs=1e-12)


def test_macro_auc_is_invariant_under_increasing_maps(rng):
    scores = rng.normal(size=(90, 3))
    labels = rng.integers(0, 3, size=90)
    assert macro_auc(np.exp(2.0 * scores), labels) == pytest.approx(macro_auc(scores, labels), abs=1e-12)
