"""Evaluation quantities: overlap metrics, AUC, ERR, risk-coverage, tests.

Conventions that recur below:

* hard prediction: y_hat = 1[p > 0.5]; an error pixel is y_hat != y.
* empty-set overlap: Dice/IoU are 1.0 when prediction and truth are both
  empty, 0.0 when exactly one is (callers can flag this in reports).
* e_after conventions: selective risk divides surviving errors by accepted
  pixel count; residual error divides by all pixels. The residual form makes
  ERR the fraction of errors removed by deferral (random deferral at rate r
  then removes a fraction r). Reports carry both; err() is pure arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import stdtr

from .errors import DegenerateTestError, InputError, UndefinedMetricError
from .maps import GroundTruthMask, ProbMap, UncertaintyMap, require_same_shape

__all__ = [
    "HARD_THRESHOLD",
    "hard_labels",
    "error_mask",
    "confusion_counts",
    "dice_from_counts",
    "iou_from_counts",
    "dice",
    "iou",
    "roc_auc",
    "unc_auroc",
    "err",
    "RiskCoverageCurve",
    "aucc_from_points",
    "risk_coverage_curve",
    "write_curve_csv",
    "operating_points",
    "paired_ttest",
    "bootstrap_ci",
]

HARD_THRESHOLD = 0.5

# binned AUC: 2**16 equal-width bins give a rank quantization whose AUC error
# is at most half the cross-class pair mass falling inside one bin; for score
# distributions spread over a known range this is bounded by 1/2**15
BINNED_AUC_BINS = 2 ** 16
BINNED_AUC_BOUND = 1.0 / 2 ** 15


def hard_labels(pred: ProbMap) -> np.ndarray:
    """Boolean hard prediction 1[p > 0.5]."""
    return pred.values > HARD_THRESHOLD


def error_mask(pred: ProbMap, gt: GroundTruthMask) -> np.ndarray:
    """Boolean per-pixel prediction-error indicator."""
    require_same_shape(pred, gt, "error_mask")
    return hard_labels(pred) != (gt.values != 0)


def _as_binary(arr, what: str) -> np.ndarray:
    values = arr.values if hasattr(arr, "values") else np.asarray(arr)
    if values.dtype == bool:
        return values
    bad = (values != 0) & (values != 1)
    if bad.any():
        raise InputError(f"{what}: expected a binary map")
    return values != 0


def confusion_counts(pred_hard, gt, roi=None) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) over the roi (accepted pixels) or the whole plane."""
    ph = _as_binary(pred_hard, "confusion_counts pred")
    y = _as_binary(gt, "confusion_counts gt")
    if ph.shape != y.shape:
        raise InputError(f"confusion_counts: shape mismatch {ph.shape} vs {y.shape}")
    if roi is not None:
        r = _as_binary(roi, "confusion_counts roi")
        if r.shape != y.shape:
            raise InputError(f"confusion_counts: roi shape mismatch {r.shape} vs {y.shape}")
        ph, y = ph[r], y[r]
    tp = int(np.count_nonzero(ph & y))
    fp = int(np.count_nonzero(ph & ~y))
    fn = int(np.count_nonzero(~ph & y))
    tn = int(np.count_nonzero(~ph & ~y))
    return tp, fp, fn, tn


def dice_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0  # both sets empty
    return 2.0 * tp / denom


def iou_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    if denom == 0:
        return 1.0
    return tp / denom


def dice(pred_hard, gt, roi=None) -> float:
    """Dice overlap 2TP/(2TP+FP+FN) on roi pixels (all pixels if roi=None)."""
    tp, fp, fn, _ = confusion_counts(pred_hard, gt, roi)
    return dice_from_counts(tp, fp, fn)


def iou(pred_hard, gt, roi=None) -> float:
    """Intersection over union TP/(TP+FP+FN), same conventions as dice()."""
    tp, fp, fn, _ = confusion_counts(pred_hard, gt, roi)
    return iou_from_counts(tp, fp, fn)


def _midranks(sorted_values: np.ndarray) -> np.ndarray:
    """1-based midranks of an already sorted array (ties share the mean rank)."""
    n = sorted_values.shape[0]
    change = np.flatnonzero(sorted_values[1:] != sorted_values[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [n]))
    mid = (starts + 1 + ends) / 2.0  # exact: integers and halves
    return np.repeat(mid, ends - starts)


def roc_auc(
    scores,
    labels,
    *,
    binned: bool = False,
    bins: int = BINNED_AUC_BINS,
    score_range: tuple[float, float] | None = None,
) -> float:
    """Area under the ROC curve of `scores` against binary `labels`.

    Default is the exact Mann-Whitney statistic with midrank tie handling:
    AUC = [sum of positive ranks - n_pos(n_pos+1)/2] / (n_pos * n_neg).

    binned=True switches to an O(n + bins) approximation that quantizes
    scores into `bins` equal-width bins over `score_range` (data min/max when
    not given) and computes the exact midrank AUC of the quantized scores.
    Only cross-class pairs that land in the same bin can be misranked, and
    midranking credits them 1/2, so the absolute error is at most half the
    cross-class same-bin pair mass — bounded by 1/2**15 at the default bin
    count for scores spread over the known range (distributions concentrated
    at sub-bin scale can exceed this; the exact mode has no such caveat).

    Raises
    ------
    UndefinedMetricError
        If labels are single-class.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary(np.asarray(labels).ravel(), "roc_auc labels")
    if s.shape != labels.shape:
        raise InputError(f"roc_auc: {s.shape[0]} scores vs {labels.shape[0]} labels")
    n_pos = int(np.count_nonzero(labels))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"roc_auc undefined: labels are single-class "
            f"({n_pos} positive, {n_neg} negative)"
        )

    if binned:
        if bins < 2:
            raise InputError(f"roc_auc: bins must be >= 2, got {bins}")
        lo, hi = score_range if score_range is not None else (float(s.min()), float(s.max()))
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
            raise InputError(f"roc_auc: invalid score range [{lo}, {hi}]")
        if hi == lo:
            return 0.5  # all ties
        idx = np.clip(((s - lo) / (hi - lo) * bins).astype(np.int64), 0, bins - 1)
        pos_hist = np.bincount(idx[labels], minlength=bins)
        neg_hist = np.bincount(idx[~labels], minlength=bins)
        neg_below = np.concatenate(([0], np.cumsum(neg_hist)[:-1]))
        wins = int(np.sum(pos_hist * neg_below))
        ties = int(np.sum(pos_hist * neg_hist))
        return (wins + 0.5 * ties) / (n_pos * n_neg)

    order = np.argsort(s, kind="stable")
    ranks = _midranks(s[order])
    pos_rank_sum = float(np.sum(ranks[labels[order]]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def unc_auroc(unc: UncertaintyMap, pred: ProbMap, gt: GroundTruthMask, **auc_kwargs) -> float:
    """AUC of uncertainty as a detector of per-pixel prediction error."""
    require_same_shape(unc, pred, "unc_auroc")
    errors = error_mask(pred, gt)
    return roc_auc(unc.values.ravel(), errors.ravel(), **auc_kwargs)


def err(e_before: float, e_after: float) -> float:
    """Error reduction ratio (e_before - e_after) / e_before."""
    if not np.isfinite(e_before) or not np.isfinite(e_after):
        raise InputError("err: error rates must be finite")
    if e_after < 0.0:
        raise InputError(f"err: e_after must be >= 0, got {e_after}")
    if e_before <= 0.0:
        raise UndefinedMetricError(
            f"err undefined: baseline error rate must be > 0, got {e_before}"
        )
    return (e_before - e_after) / e_before


@dataclass(frozen=True)
class RiskCoverageCurve:
    """Metric-vs-coverage points and the area under them.

    points are (coverage, value, defined) with coverage strictly increasing;
    undefined levels carry value=None and are excluded from the AUCC, which
    integrates the defined points by trapezoid after extending coverage 0
    with the value at the smallest defined positive coverage.
    """

    points: tuple[tuple[float, float | None, bool], ...]
    metric_kind: str
    aucc: float
    undefined_count: int = 0
    note: str = ""


_METRIC_KINDS = ("dice", "auc", "error_rate")


def aucc_from_points(points) -> float:
    """Trapezoid area under (coverage, value) curve points spanning [0, 1].

    Accepts (coverage, value) pairs or (coverage, value, defined) triples.
    Points marked undefined (or with value None) are excluded. When the
    lowest remaining coverage is positive the curve is extended flat to
    coverage 0 with that point's value, so the area always integrates the
    full axis.
    """
    defined = []
    for point in points:
        if len(point) == 2:
            q, v = point
            ok = v is not None
        else:
            q, v, ok = point
        if ok:
            defined.append((float(q), float(v)))
    if not defined:
        raise UndefinedMetricError("aucc undefined: no defined curve points")
    qs = [q for q, _ in defined]
    vs = [v for _, v in defined]
    if any(b <= a for a, b in zip(qs, qs[1:])):
        raise InputError("aucc: coverages must be strictly increasing")
    if qs[0] < 0.0 or qs[-1] > 1.0:
        raise InputError("aucc: coverages must lie in [0, 1]")
    if qs[0] > 0.0:
        qs.insert(0, 0.0)
        vs.insert(0, vs[0])  # endpoint extension with smallest positive value
    return float(np.trapezoid(np.asarray(vs), np.asarray(qs)))


def risk_coverage_curve(
    score,
    pred: ProbMap,
    gt: GroundTruthMask,
    metric_kind: str = "dice",
    grid=None,
) -> RiskCoverageCurve:
    """Sweep coverage levels, accepting the lowest-score pixels first.

    At level q the round(q*N) pixels with the lowest score are accepted (ties
    broken by row-major pixel index), and the metric is computed on them.
    metric_kind "dice" and "error_rate" run in O(N log N + levels) via prefix
    counts; "auc" recomputes an exact AUC per level and is intended for
    moderate sizes.
    """
    if metric_kind not in _METRIC_KINDS:
        raise InputError(
            f"unknown metric_kind {metric_kind!r}, expected one of {_METRIC_KINDS}"
        )
    s = score.values if isinstance(score, UncertaintyMap) else np.asarray(score, dtype=np.float64)
    if s.shape != pred.shape:
        raise InputError(f"risk_coverage_curve: score shape {s.shape} vs pred {pred.shape}")
    require_same_shape(pred, gt, "risk_coverage_curve")

    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    grid = np.unique(np.asarray(grid, dtype=np.float64))
    if grid.size == 0 or grid.min() < 0.0 or grid.max() > 1.0:
        raise InputError("risk_coverage_curve: grid must be nonempty within [0, 1]")

    n = s.size
    order = np.argsort(s.ravel(), kind="stable")
    yhat = hard_labels(pred).ravel()[order]
    y = (gt.values != 0).ravel()[order]
    errors = yhat != y
    cum_tp = np.concatenate(([0], np.cumsum(yhat & y)))
    cum_fp = np.concatenate(([0], np.cumsum(yhat & ~y)))
    cum_fn = np.concatenate(([0], np.cumsum(~yhat & y)))
    cum_err = np.concatenate(([0], np.cumsum(errors)))
    p_sorted = pred.values.ravel()[order] if metric_kind == "auc" else None

    points = []
    undefined = 0
    for q in grid:
        k = int(np.rint(q * n))
        value: float | None
        if k == 0:
            value = None
        elif metric_kind == "dice":
            value = dice_from_counts(int(cum_tp[k]), int(cum_fp[k]), int(cum_fn[k]))
        elif metric_kind == "error_rate":
            value = int(cum_err[k]) / k
        else:  # auc
            try:
                value = roc_auc(p_sorted[:k], y[:k])
            except UndefinedMetricError:
                value = None
        if value is None:
            undefined += 1
        points.append((float(q), value, value is not None))

    aucc = aucc_from_points(points)
    note = f"{undefined} undefined level(s) excluded from AUCC" if undefined else ""
    return RiskCoverageCurve(
        points=tuple(points),
        metric_kind=metric_kind,
        aucc=aucc,
        undefined_count=undefined,
        note=note,
    )


def write_curve_csv(curve: RiskCoverageCurve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["coverage,value,defined"]
    for q, v, ok in curve.points:
        lines.append(f"{q!r},{'' if v is None else repr(v)},{int(ok)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def operating_points(curve: RiskCoverageCurve, targets) -> list[dict]:
    """Resolve coverage/metric targets against a risk-coverage curve.

    Each target is {"metric": x} (largest coverage whose curve value still
    meets x — at least x for dice/auc, at most x for error_rate — linearly
    interpolated between grid points) or {"coverage": q} (curve value at q,
    linearly interpolated). Unreachable targets get reachable=False.
    """
    defined = [(q, v) for q, v, ok in curve.points if ok]
    if not defined:
        raise UndefinedMetricError("operating_points: curve has no defined points")

    results = []
    for target in targets:
        if not isinstance(target, dict) or len(target) != 1:
            raise InputError(f"target must be {{'metric': x}} or {{'coverage': q}}, got {target!r}")
        ((kind, value),) = target.items()
        if kind == "metric":
            results.append(_metric_target(curve, defined, float(value)))
        elif kind == "coverage":
            results.append(_coverage_target(defined, float(value)))
        else:
            raise InputError(f"unknown target kind {kind!r}")
    return results


def _meets(kind: str, value: float, target: float) -> bool:
    return value <= target if kind == "error_rate" else value >= target


def _metric_target(curve, defined, target: float) -> dict:
    base = {"target_kind": "metric", "target": target, "metric_kind": curve.metric_kind}
    for i in range(len(defined) - 1, -1, -1):
        q_i, v_i = defined[i]
        if not _meets(curve.metric_kind, v_i, target):
            continue
        if i == len(defined) - 1:
            return {**base, "coverage": q_i, "value": v_i, "reachable": True}
        q_j, v_j = defined[i + 1]  # first point to the right that misses
        q_star = q_i + (q_j - q_i) * (v_i - target) / (v_i - v_j)
        return {**base, "coverage": q_star, "value": target, "reachable": True}
    return {**base, "coverage": None, "value": None, "reachable": False}


def _coverage_target(defined, q_target: float) -> dict:
    base = {"target_kind": "coverage", "target": q_target}
    qs = [q for q, _ in defined]
    vs = [v for _, v in defined]
    if q_target > qs[-1]:
        return {**base, "coverage": None, "value": None, "reachable": False}
    if q_target <= qs[0]:
        return {**base, "coverage": q_target, "value": vs[0], "reachable": True}
    value = float(np.interp(q_target, qs, vs))
    return {**base, "coverage": q_target, "value": value, "reachable": True}


def paired_ttest(a, b) -> tuple[float, float]:
    """Standard paired t-test.

    t = mean(d) / (sd(d)/sqrt(n)) with d = a-b and ddof=1, n-1 degrees of
    freedom; two-sided p through the Student-t CDF.

    Raises
    ------
    DegenerateTestError
        If the differences have zero variance.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise InputError(f"paired_ttest: need equal-length 1-D inputs, got {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise InputError(f"paired_ttest: need n >= 2 pairs, got {n}")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateTestError("paired_ttest: zero-variance differences")
    t = float(np.mean(d) / (sd / np.sqrt(n)))
    p = 2.0 * float(stdtr(n - 1, -abs(t)))
    return t, p


def bootstrap_ci(values, resamples: int = 1000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap CI for the mean of per-image values.

    Uses the Philox counter-based generator keyed by `seed`, so the interval
    is bitwise reproducible for identical inputs.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise InputError("bootstrap_ci: need a nonempty 1-D value list")
    if resamples < 100:
        raise InputError(f"bootstrap_ci: resamples must be >= 100, got {resamples}")
    if not 0.0 < level < 1.0:
        raise InputError(f"bootstrap_ci: level must be in (0, 1), got {level}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    lo_q = (1.0 - level) / 2.0 * 100.0
    lo = float(np.percentile(means, lo_q, method="linear"))
    hi = float(np.percentile(means, 100.0 - lo_q, method="linear"))
    return lo, hi
