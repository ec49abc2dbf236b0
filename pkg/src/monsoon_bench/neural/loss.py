"""Peak-biased asymmetric loss and its subgradient.

Underestimation of an amount ``e`` costs ``e ** 1.5``, overestimation costs
``e``. Both exponents are configurable so the same code serves ablations.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError

UNDER_EXPONENT = 1.5
OVER_EXPONENT = 1.0


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ShapeError(f"pred shape {pred.shape} != actual shape {actual.shape}")
    if pred.size == 0:
        raise ShapeError("peak-biased loss needs at least one value")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(actual))):
        raise NumericError("non-finite value passed to peak-biased loss")
    return pred, actual


def peak_biased_terms(pred, actual, under: float = UNDER_EXPONENT,
                      over: float = OVER_EXPONENT) -> np.ndarray:
    """Elementwise loss terms (not averaged)."""
    pred, actual = _pair(pred, actual)
    diff = actual - pred
    terms = np.zeros_like(diff)
    low = diff > 0
    high = diff < 0
    terms[low] = diff[low] ** under
    terms[high] = (-diff[high]) ** over
    return terms


def peak_biased_loss(pred, actual, under: float = UNDER_EXPONENT,
                     over: float = OVER_EXPONENT) -> float:
    """Mean peak-biased loss over every element of ``pred``/``actual``."""
    return float(peak_biased_terms(pred, actual, under, over).mean())


def peak_biased_grad(pred, actual, under: float = UNDER_EXPONENT,
                     over: float = OVER_EXPONENT) -> np.ndarray:
    """Gradient of :func:`peak_biased_loss` with respect to ``pred``.

    At ``pred == actual`` the subgradient 0 is returned.
    """
    pred, actual = _pair(pred, actual)
    n = pred.size
    diff = actual - pred
    grad = np.zeros_like(diff)
    low = diff > 0
    high = diff < 0
    grad[low] = -under * diff[low] ** (under - 1.0) / n
    grad[high] = over * (-diff[high]) ** (over - 1.0) / n
    return grad
