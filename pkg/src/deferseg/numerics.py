"""Shared numeric primitives: entropy, percentiles, probability/logit maps.

All arithmetic is 64-bit. Reductions run in a fixed order, so repeated calls
on identical input are bitwise identical within one kernel backend.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import InputError

__all__ = [
    "LN2",
    "PROB_EPS",
    "binary_entropy",
    "percentile",
    "logit",
    "sigmoid",
]

LN2 = math.log(2.0)

# probabilities are clipped to [PROB_EPS, 1-PROB_EPS] before logit() so that
# LogitMap values stay finite even for saturated 32-bit inputs
PROB_EPS = 1e-7


def binary_entropy(p):
    """Binary entropy in nats: -p*ln(p) - (1-p)*ln(1-p), with 0*ln(0) = 0.

    Parameters
    ----------
    p : float or array-like
        Probability value(s) in [0, 1].

    Returns
    -------
    float or ndarray
        Entropy in [0, ln 2]; a scalar for scalar input, else a float64
        array of the input's shape.

    Raises
    ------
    InputError
        If any value lies outside [0, 1] or is not finite.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.size == 0:
        return arr.copy()
    if not np.all(np.isfinite(arr)):
        raise InputError("binary_entropy: input contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise InputError(
            f"binary_entropy: probabilities must lie in [0, 1], "
            f"got range [{lo}, {hi}]"
        )
    flat = np.ascontiguousarray(arr.reshape(-1))
    out = _kernels.entropy_flat(flat).reshape(arr.shape)
    if arr.ndim == 0:
        return float(out)
    return out


def percentile(values, alpha: float) -> float:
    """Linear-interpolation percentile.

    Rank position is alpha/100 * (n-1) on the sorted values, interpolating
    between the neighboring order statistics; alpha=0 is the minimum and
    alpha=100 the maximum.

    Raises
    ------
    InputError
        Empty input, non-finite values, or alpha outside [0, 100].
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InputError("percentile: empty value sequence")
    if not np.all(np.isfinite(arr)):
        raise InputError("percentile: input contains non-finite values")
    if not 0.0 <= alpha <= 100.0:
        raise InputError(f"percentile: alpha must be in [0, 100], got {alpha}")
    return float(np.percentile(arr, alpha, method="linear"))


def logit(p):
    """ln(p/(1-p)) with p clipped to [PROB_EPS, 1-PROB_EPS] first."""
    arr = np.asarray(p, dtype=np.float64)
    clipped = np.clip(arr, PROB_EPS, 1.0 - PROB_EPS)
    out = np.log(clipped / (1.0 - clipped))
    if arr.ndim == 0:
        return float(out)
    return out


def sigmoid(x):
    """Numerically stable logistic function."""
    arr = np.asarray(x, dtype=np.float64)
    out = expit(arr)
    if arr.ndim == 0:
        return float(out)
    return out
