"""Temperature scaling and calibration-quality measurement.

Temperature scaling rescales logits by a single scalar T fitted to minimize
binary cross-entropy on held-out data: p_cal = sigmoid(logit(p) / T). T > 1
softens overconfident predictions, T < 1 sharpens underconfident ones. The
map is monotone, so hard predictions and score orderings are unchanged.

Cross-entropy is evaluated in the numerically stable logit form
softplus(z) - y*z with softplus(z) = log(1 + exp(z)) computed by logaddexp,
which survives large |z| where a naive -log(p) underflows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InputError, InvariantError
from .maps import GroundTruthMask, LogitMap, ProbMap, fingerprint_arrays, require_same_shape
from .numerics import logit, sigmoid

__all__ = [
    "T_MIN",
    "TemperatureModel",
    "fit_temperature",
    "apply_temperature",
    "ReliabilityTable",
    "ece",
]

T_MIN = 0.05
# the search space is T in [T_MIN, inf); in practice the optimum of a scalar
# temperature sits far below this cap, so the bounded search uses [T_MIN, 100]
_T_MAX_SEARCH = 100.0
_XATOL = 1e-5  # keeps the located minimum within 1e-4 of the true one
_NLL_SLACK = 1e-12


def _nll_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy in nats, stable for any logit magnitude."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _pool_logits(preds, gts):
    if len(preds) == 0 or len(preds) != len(gts):
        raise InputError(
            f"need matching nonempty prediction/mask lists, got {len(preds)} and {len(gts)}"
        )
    zs, ys = [], []
    for pred, gt in zip(preds, gts):
        require_same_shape(pred, gt, "temperature fit")
        if isinstance(pred, LogitMap):
            z = pred.values.ravel()
        elif isinstance(pred, ProbMap):
            z = logit(pred.values).ravel()
        else:
            raise InputError(f"expected ProbMap or LogitMap, got {type(pred).__name__}")
        zs.append(z)
        ys.append((gt.values != 0).ravel().astype(np.float64))
    return np.concatenate(zs), np.concatenate(ys)


@dataclass(frozen=True)
class TemperatureModel:
    """A fitted temperature with its before/after validation cross-entropy."""

    T: float
    nll_before: float
    nll_after: float
    fitted_on: str = ""
    flat: bool = False

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T < T_MIN:
            raise InputError(f"temperature must be finite and >= {T_MIN}, got {self.T}")
        if self.nll_after > self.nll_before + _NLL_SLACK:
            raise InvariantError(
                f"nll_after {self.nll_after} exceeds nll_before {self.nll_before}; "
                f"a fitted temperature can only improve the objective"
            )

    def to_json_dict(self) -> dict:
        return {
            "T": self.T,
            "nll_before": self.nll_before,
            "nll_after": self.nll_after,
            "fitted_on": self.fitted_on,
            "flat": self.flat,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TemperatureModel":
        if not isinstance(data, dict):
            raise InputError("temperature model JSON must be an object")
        allowed = {"T", "nll_before", "nll_after", "fitted_on", "flat"}
        unknown = set(data) - allowed
        if unknown:
            raise InputError(f"unknown temperature model field(s): {sorted(unknown)}")
        missing = {"T", "nll_before", "nll_after"} - set(data)
        if missing:
            raise InputError(f"temperature model JSON missing {sorted(missing)}")
        return cls(
            T=data["T"],
            nll_before=data["nll_before"],
            nll_after=data["nll_after"],
            fitted_on=data.get("fitted_on", ""),
            flat=data.get("flat", False),
        )


def fit_temperature(preds, gts) -> TemperatureModel:
    """Fit a scalar temperature on validation images by bounded 1-D search.

    Probability inputs are converted to logits first (clamped away from 0
    and 1). If every logit is exactly zero the objective is constant in T;
    the fit then returns T=1 with flat=True rather than an arbitrary
    boundary value.
    """
    z, y = _pool_logits(preds, gts)
    fingerprint = fingerprint_arrays(
        [arr for pair in zip(preds, gts) for arr in (pair[0].values, pair[1].values)]
    )
    nll_before = _nll_from_logits(z, y)

    if float(np.max(np.abs(z))) == 0.0:
        return TemperatureModel(
            T=1.0, nll_before=nll_before, nll_after=nll_before,
            fitted_on=fingerprint, flat=True,
        )

    result = minimize_scalar(
        lambda t: _nll_from_logits(z / t, y),
        bounds=(T_MIN, _T_MAX_SEARCH),
        method="bounded",
        options={"xatol": _XATOL},
    )
    t_fit = float(result.x)
    nll_after = _nll_from_logits(z / t_fit, y)
    if nll_after > nll_before:  # never leave the data worse than unscaled
        t_fit, nll_after = 1.0, nll_before
    return TemperatureModel(
        T=t_fit, nll_before=nll_before, nll_after=nll_after, fitted_on=fingerprint,
    )


def apply_temperature(pred, T: float) -> ProbMap:
    """Rescale one image's predictions: sigmoid(logit(p) / T)."""
    if not np.isfinite(T) or T < T_MIN:
        raise InputError(f"temperature must be finite and >= {T_MIN}, got {T}")
    if isinstance(pred, LogitMap):
        z = pred.values
    elif isinstance(pred, ProbMap):
        z = logit(pred.values)
    else:
        raise InputError(f"expected ProbMap or LogitMap, got {type(pred).__name__}")
    return ProbMap(sigmoid(z / T))


@dataclass(frozen=True)
class ReliabilityTable:
    """Per-bin reliability rows; empty bins keep frac=0 and blank stats."""

    rows: tuple  # (bin_lo, bin_hi, frac, conf | None, acc | None, gap | None)
    bins: int
    acc_mode: str

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["bin_lo,bin_hi,frac,conf,acc,gap"]
        for lo, hi, frac, conf, acc, gap in self.rows:
            cells = [repr(lo), repr(hi), repr(frac)]
            cells += ["" if v is None else repr(v) for v in (conf, acc, gap)]
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_ACC_MODES = ("positive_frequency", "correctness")


def ece(preds, gts, bins: int = 15, acc_mode: str = "positive_frequency"):
    """Expected calibration error over equal-width probability bins.

    Pixels from all images are pooled and assigned to bin
    min(floor(p * bins), bins - 1). Per bin, conf is the mean predicted
    probability; acc is the positive-label frequency (default) or, with
    acc_mode="correctness", the hard-prediction accuracy. ECE is the
    frac-weighted mean absolute conf/acc gap. Returns (ece, table).
    """
    if bins < 2:
        raise InputError(f"ece: bins must be >= 2, got {bins}")
    if acc_mode not in _ACC_MODES:
        raise InputError(f"unknown acc_mode {acc_mode!r}, expected one of {_ACC_MODES}")
    if len(preds) == 0 or len(preds) != len(gts):
        raise InputError(
            f"need matching nonempty prediction/mask lists, got {len(preds)} and {len(gts)}"
        )
    ps, ys = [], []
    for pred, gt in zip(preds, gts):
        if not isinstance(pred, ProbMap):
            raise InputError(f"ece expects ProbMap inputs, got {type(pred).__name__}")
        require_same_shape(pred, gt, "ece")
        ps.append(pred.values.ravel())
        ys.append((gt.values != 0).ravel())
    p = np.concatenate(ps)
    y = np.concatenate(ys)

    idx = np.minimum((p * bins).astype(np.int64), bins - 1)
    count = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=p, minlength=bins)
    if acc_mode == "positive_frequency":
        acc_sum = np.bincount(idx, weights=y.astype(np.float64), minlength=bins)
    else:
        correct = ((p > 0.5) == y).astype(np.float64)
        acc_sum = np.bincount(idx, weights=correct, minlength=bins)

    n = p.size
    rows = []
    total = 0.0
    for b in range(bins):
        lo, hi = b / bins, (b + 1) / bins
        if count[b] == 0:
            rows.append((lo, hi, 0.0, None, None, None))
            continue
        frac = count[b] / n
        conf = conf_sum[b] / count[b]
        acc = acc_sum[b] / count[b]
        gap = abs(acc - conf)
        total += frac * gap
        rows.append((lo, hi, float(frac), float(conf), float(acc), float(gap)))
    return float(total), ReliabilityTable(rows=tuple(rows), bins=bins, acc_mode=acc_mode)
