"""Slow reference implementations used to cross-check the fast paths.

Everything here is written the most literal way available: explicit pixel
loops, textbook formulas, grid search instead of smart optimization, pair
counting instead of rank algebra. None of it shares code with the modules it
checks. The test suite compares both routes; keeping these in the installed
package also lets downstream users audit a result the same way.

All entry points enforce small-input guards (maps at most 64x64, score lists
at most 2000 entries) because the implementations are deliberately O(n^2) or
worse in places.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError

__all__ = [
    "oracle_entropy",
    "oracle_mi",
    "oracle_tta_var",
    "oracle_auc_paircount",
    "oracle_ece",
    "oracle_dice",
    "oracle_iou",
    "oracle_err",
    "oracle_deferral_f1",
    "oracle_percentile",
    "oracle_temperature_grid",
    "oracle_defer_global",
    "oracle_defer_adaptive",
    "oracle_confidence_aware_score",
]

MAX_SIDE = 64
MAX_LIST = 2000          # for the O(n^2) pairwise oracles
MAX_GRID_LIST = 2 ** 21  # grid search is O(grid * n), so it tolerates planes


def _as_plane(arr, what: str) -> np.ndarray:
    values = np.asarray(getattr(arr, "values", arr), dtype=np.float64)
    if values.ndim != 2:
        raise InputError(f"{what}: expected a 2-D map, got shape {values.shape}")
    if values.shape[0] > MAX_SIDE or values.shape[1] > MAX_SIDE:
        raise InputError(
            f"{what}: oracle inputs are capped at {MAX_SIDE}x{MAX_SIDE}, got {values.shape}"
        )
    return values


def _as_stack(arr, what: str) -> np.ndarray:
    values = np.asarray(getattr(arr, "values", arr), dtype=np.float64)
    if values.ndim != 3:
        raise InputError(f"{what}: expected a 3-D stack, got shape {values.shape}")
    if values.shape[1] > MAX_SIDE or values.shape[2] > MAX_SIDE:
        raise InputError(
            f"{what}: oracle inputs are capped at {MAX_SIDE}x{MAX_SIDE}, "
            f"got {values.shape[1:]} planes"
        )
    return values


def _as_list(arr, what: str, cap: int = MAX_LIST) -> np.ndarray:
    values = np.asarray(getattr(arr, "values", arr), dtype=np.float64).ravel()
    if values.size > cap:
        raise InputError(f"{what}: oracle lists are capped at {cap}, got {values.size}")
    return values


def oracle_entropy(p: float) -> float:
    """Binary entropy of one probability, in nats."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p))


def oracle_mi(stack):
    """(mean map, mutual-information map) by per-pixel loops."""
    values = _as_stack(stack, "oracle_mi")
    t, h, w = values.shape
    mean = np.zeros((h, w))
    mi = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            ps = [float(values[k, i, j]) for k in range(t)]
            m = sum(ps) / t
            mean[i, j] = m
            mi[i, j] = oracle_entropy(m) - sum(oracle_entropy(p) for p in ps) / t
    return mean, mi


def oracle_tta_var(stack):
    """(mean map, population-variance map) by per-pixel loops."""
    values = _as_stack(stack, "oracle_tta_var")
    t, h, w = values.shape
    mean = np.zeros((h, w))
    var = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            ps = [float(values[k, i, j]) for k in range(t)]
            m = sum(ps) / t
            mean[i, j] = m
            var[i, j] = sum((p - m) ** 2 for p in ps) / t
    return mean, var


def oracle_auc_paircount(scores, labels) -> float:
    """AUC by counting all positive/negative pairs (ties count one half)."""
    s = _as_list(scores, "oracle_auc_paircount")
    y = np.asarray(getattr(labels, "values", labels)).ravel()
    if s.size != y.size:
        raise InputError(f"oracle_auc_paircount: {s.size} scores vs {y.size} labels")
    pos = [float(s[i]) for i in range(s.size) if y[i]]
    neg = [float(s[i]) for i in range(s.size) if not y[i]]
    if not pos or not neg:
        raise InputError("oracle_auc_paircount: labels are single-class")
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def oracle_ece(pred, gt, bins: int = 15, acc_mode: str = "positive_frequency") -> float:
    """Pooled calibration error of one image by explicit binning loops."""
    p = _as_plane(pred, "oracle_ece").ravel()
    y = _as_plane(gt, "oracle_ece").ravel()
    tallies = [[0, 0.0, 0.0] for _ in range(bins)]  # count, sum p, sum acc
    for k in range(p.size):
        b = min(int(p[k] * bins), bins - 1)
        tallies[b][0] += 1
        tallies[b][1] += float(p[k])
        if acc_mode == "positive_frequency":
            tallies[b][2] += 1.0 if y[k] else 0.0
        else:
            tallies[b][2] += 1.0 if (p[k] > 0.5) == bool(y[k]) else 0.0
    total = 0.0
    for count, p_sum, a_sum in tallies:
        if count:
            total += (count / p.size) * abs(a_sum / count - p_sum / count)
    return total


def _oracle_counts(pred_hard, gt, roi=None):
    ph = _as_plane(pred_hard, "oracle_dice")
    y = _as_plane(gt, "oracle_dice")
    r = None if roi is None else _as_plane(roi, "oracle_dice")
    tp = fp = fn = 0
    for i in range(ph.shape[0]):
        for j in range(ph.shape[1]):
            if r is not None and not r[i, j]:
                continue
            a, b = bool(ph[i, j]), bool(y[i, j])
            if a and b:
                tp += 1
            elif a:
                fp += 1
            elif b:
                fn += 1
    return tp, fp, fn


def oracle_dice(pred_hard, gt, roi=None) -> float:
    tp, fp, fn = _oracle_counts(pred_hard, gt, roi)
    if 2 * tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def oracle_iou(pred_hard, gt, roi=None) -> float:
    tp, fp, fn = _oracle_counts(pred_hard, gt, roi)
    if tp + fp + fn == 0:
        return 1.0
    return tp / (tp + fp + fn)


def oracle_err(e_before: float, e_after: float) -> float:
    if e_before <= 0:
        raise InputError("oracle_err: baseline error rate must be > 0")
    return (e_before - e_after) / e_before


def oracle_deferral_f1(decision, pred, gt):
    """(precision, recall, f1) of deferral as an error detector, by loops."""
    d = _as_plane(decision, "oracle_deferral_f1")
    p = _as_plane(pred, "oracle_deferral_f1")
    y = _as_plane(gt, "oracle_deferral_f1")
    n_def = n_err = n_hit = 0
    for i in range(d.shape[0]):
        for j in range(d.shape[1]):
            deferred = d[i, j] == 0
            wrong = (p[i, j] > 0.5) != bool(y[i, j])
            n_def += deferred
            n_err += wrong
            n_hit += deferred and wrong
    prec = n_hit / n_def if n_def else 0.0
    rec = n_hit / n_err if n_err else 0.0
    return prec, rec, (2 * prec * rec / (prec + rec) if prec + rec else 0.0)


def oracle_percentile(values, alpha: float) -> float:
    """Linear-interpolation percentile from a sorted copy, textbook form."""
    v = sorted(float(x) for x in _as_list(values, "oracle_percentile"))
    if not v:
        raise InputError("oracle_percentile: empty input")
    h = (len(v) - 1) * alpha / 100.0
    lo = math.floor(h)
    hi = math.ceil(h)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def oracle_temperature_grid(logits, labels, t_lo: float = 0.05, t_hi: float = 10.0,
                            step: float = 1e-3):
    """(t_best, nll_best, flat) by brute-force grid search over T.

    Uses the naive cross-entropy -[y log p + (1-y) log(1-p)] with clipped
    probabilities, which is a different formula route from the production
    logit-form objective.
    """
    z = _as_list(logits, "oracle_temperature_grid", cap=MAX_GRID_LIST)
    y = np.asarray(getattr(labels, "values", labels)).ravel().astype(np.float64)
    if z.size != y.size:
        raise InputError(f"oracle_temperature_grid: {z.size} logits vs {y.size} labels")
    if float(np.max(np.abs(z))) == 0.0:
        p = np.full_like(z, 0.5)
        nll = float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))
        return 1.0, nll, True
    grid = np.arange(t_lo, t_hi + step / 2, step)
    best_t, best_nll = None, math.inf
    for t in grid:
        p = 1.0 / (1.0 + np.exp(-z / t))
        p = np.clip(p, 1e-300, 1.0 - 1e-16)
        nll = float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))
        if nll < best_nll:
            best_t, best_nll = float(t), nll
    return best_t, best_nll, False


def oracle_defer_global(unc, tau: float) -> np.ndarray:
    u = _as_plane(unc, "oracle_defer_global")
    out = np.zeros(u.shape, dtype=np.uint8)
    for i in range(u.shape[0]):
        for j in range(u.shape[1]):
            out[i, j] = 1 if u[i, j] <= tau else 0
    return out


def oracle_defer_adaptive(unc, alpha: float) -> np.ndarray:
    u = _as_plane(unc, "oracle_defer_adaptive")
    tau = oracle_percentile(u.ravel(), alpha)
    return oracle_defer_global(u, tau)


def oracle_confidence_aware_score(unc, mean) -> np.ndarray:
    u = _as_plane(unc, "oracle_confidence_aware_score")
    p = _as_plane(mean, "oracle_confidence_aware_score")
    out = np.zeros(u.shape)
    for i in range(u.shape[0]):
        for j in range(u.shape[1]):
            out[i, j] = u[i, j] * (1.0 - 2.0 * abs(p[i, j] - 0.5))
    return out
