"""Aggregate a PredictionStack into a mean map and uncertainty map(s).

Two aggregation families:

* mc_aggregate - stochastic forward passes (dropout or ensembles). The
  uncertainty signal is mutual information: entropy of the mean prediction
  minus the mean per-pass entropy. Zero when all passes agree.
* tta_aggregate - geometric test-time augmentation. Planes still carrying
  transform ids are inverse-transformed first; uncertainty signals are the
  per-pixel population variance across passes and the entropy of the mean.

All entropies are natural-log (nats).
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import InputError, InvariantError
from .maps import PredictionStack, ProbMap, UncertaintyMap
from .transforms import invert_transform

__all__ = ["mc_aggregate", "tta_aggregate", "confidence_map"]

# |mean - [0,1]| and MI < 0 beyond these are treated as impossible states,
# not rounding; Jensen guarantees MI >= 0 analytically
_CLAMP_TOL = 1e-12
_MI_ERROR_FLOOR = -1e-9


def _mean_as_prob(mean_flat: np.ndarray, shape) -> ProbMap:
    lo, hi = float(mean_flat.min()), float(mean_flat.max())
    if lo < -_CLAMP_TOL or hi > 1.0 + _CLAMP_TOL:
        raise InvariantError(
            f"aggregated mean left [0, 1] by more than {_CLAMP_TOL}: range [{lo}, {hi}]"
        )
    np.clip(mean_flat, 0.0, 1.0, out=mean_flat)
    return ProbMap(mean_flat.reshape(shape))


def mc_aggregate(stack: PredictionStack) -> tuple[ProbMap, UncertaintyMap]:
    """Mean prediction and mutual-information uncertainty.

    Parameters
    ----------
    stack : PredictionStack
        source_tag must be "mc_dropout" or "ensemble". T=1 is allowed and
        yields MI identically zero.

    Returns
    -------
    (ProbMap, UncertaintyMap)
        The per-pixel mean and MI = H(mean) - mean_t H(p_t), clamped at zero
        against rounding. MI below -1e-9 raises InvariantError.
    """
    if stack.source_tag not in ("mc_dropout", "ensemble"):
        raise InputError(
            f"mc_aggregate needs an mc_dropout or ensemble stack, got "
            f"source_tag={stack.source_tag!r} (retag the stack if it really is one)"
        )
    flat = stack.values.reshape(stack.passes, -1)
    mean, mean_ent = _kernels.mc_moments(flat)
    mi = _kernels.entropy_flat(np.ascontiguousarray(mean)) - mean_ent
    lo = float(mi.min())
    if lo < _MI_ERROR_FLOOR:
        raise InvariantError(
            f"mutual information fell below zero by {-lo} (> {-_MI_ERROR_FLOOR}); "
            "inconsistent aggregation state"
        )
    np.clip(mi, 0.0, None, out=mi)
    mean_map = _mean_as_prob(mean, stack.plane_shape)
    return mean_map, UncertaintyMap(mi.reshape(stack.plane_shape), kind="mutual_information")


def tta_aggregate(
    stack: PredictionStack,
) -> tuple[ProbMap, UncertaintyMap, UncertaintyMap]:
    """Mean, population variance, and entropy-of-mean for a TTA stack.

    If the stack carries transform_ids, each plane is mapped back through the
    exact inverse of its transform before aggregation; otherwise the planes
    are taken as already aligned.

    Returns
    -------
    (ProbMap, UncertaintyMap, UncertaintyMap)
        mean, variance (divisor K), entropy of the mean.
    """
    if stack.source_tag in ("mc_dropout", "ensemble"):
        raise InputError(
            f"tta_aggregate needs a tta (or untagged) stack, got "
            f"source_tag={stack.source_tag!r}"
        )
    values = stack.values
    if stack.transform_ids is not None:
        aligned = np.empty_like(values)
        for k, tid in enumerate(stack.transform_ids):
            aligned[k] = invert_transform(values[k], tid)
        values = aligned

    flat = np.ascontiguousarray(values.reshape(stack.passes, -1))
    mean, var = _kernels.tta_moments(flat)
    mean_map = _mean_as_prob(mean, stack.plane_shape)
    ent = _kernels.entropy_flat(
        np.ascontiguousarray(mean_map.values.reshape(-1))
    )
    return (
        mean_map,
        UncertaintyMap(var.reshape(stack.plane_shape), kind="variance"),
        UncertaintyMap(ent.reshape(stack.plane_shape), kind="entropy"),
    )


def confidence_map(mean: ProbMap) -> np.ndarray:
    """Per-pixel confidence c = 2*|p - 0.5|, in [0, 1]."""
    return 2.0 * np.abs(mean.values - 0.5)
