"""Deferral policies: turn uncertainty maps into accept/defer decisions.

A decision map accepts a pixel (1) when its score is at or below a threshold
and defers it (0) otherwise. Three policies produce that threshold:

* global: one tau shared by every image.
* adaptive: per-image tau at a percentile alpha of that image's scores, so
  each image defers roughly the same fraction of its own pixels.
* confidence_aware: global thresholding of s = u * (1 - c), where
  c = 2*|p - 0.5| is the confidence of the mean prediction. Uncertain pixels
  the model is also unconfident about score highest.

fit_threshold() picks tau (or alpha) on a validation set by sweeping a fixed
candidate grid and scoring each candidate on pooled pixel counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleFitError, InputError
from .maps import (
    DecisionMap,
    GroundTruthMask,
    ProbMap,
    UncertaintyMap,
    fingerprint_arrays,
    require_same_shape,
)
from .metrics import dice_from_counts, error_mask, hard_labels
from .numerics import percentile

__all__ = [
    "POLICIES",
    "CRITERIA",
    "DEFAULT_DICE_FLOOR",
    "DeferralModel",
    "defer_global",
    "defer_adaptive",
    "confidence_aware_score",
    "defer_confidence_aware",
    "apply_model",
    "deferral_f1",
    "fit_threshold",
]

POLICIES = ("global", "adaptive", "confidence_aware")
CRITERIA = ("max_f1", "coverage_dice")
DEFAULT_DICE_FLOOR = 0.82

# candidate grids: tau over the half-percent percentiles of the pooled
# validation scores plus the pooled maximum (so the all-accept model stays
# reachable), alpha over whole percents from half coverage up
_TAU_PERCENTILES = np.append(np.linspace(0.5, 99.5, 199), 100.0)
_ALPHA_GRID = np.arange(50.0, 101.0)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0.0:
        raise InputError(f"threshold must be finite and >= 0, got {tau}")
    return tau


def _threshold(unc: UncertaintyMap, tau: float) -> DecisionMap:
    return DecisionMap((unc.values <= tau).astype(np.uint8))


def defer_global(unc: UncertaintyMap, tau: float) -> DecisionMap:
    """Accept pixels with uncertainty at or below a shared threshold."""
    return _threshold(unc, _check_tau(tau))


def defer_adaptive(unc: UncertaintyMap, alpha: float) -> DecisionMap:
    """Accept pixels at or below this image's alpha-th score percentile."""
    tau = percentile(unc.values, alpha)
    return _threshold(unc, tau)


def confidence_aware_score(unc: UncertaintyMap, mean: ProbMap) -> UncertaintyMap:
    """Combine uncertainty with prediction confidence: s = u * (1 - 2|p-0.5|)."""
    require_same_shape(unc, mean, "confidence_aware_score")
    confidence = 2.0 * np.abs(mean.values - 0.5)
    return UncertaintyMap(unc.values * (1.0 - confidence), kind="confidence_aware_score")


def defer_confidence_aware(score: UncertaintyMap, tau: float) -> DecisionMap:
    """Accept pixels whose confidence-aware score is at or below tau."""
    if score.kind != "confidence_aware_score":
        raise InputError(
            f"defer_confidence_aware expects a confidence_aware_score map, "
            f"got kind {score.kind!r} (build one with confidence_aware_score())"
        )
    return _threshold(score, _check_tau(tau))


def deferral_f1(decision: DecisionMap, pred: ProbMap, gt: GroundTruthMask):
    """Precision/recall/F1 of deferral as a detector of prediction errors.

    Precision is the fraction of deferred pixels that are errors, recall the
    fraction of errors that are deferred. Empty denominators yield 0.
    """
    require_same_shape(decision, pred, "deferral_f1")
    deferred = decision.values == 0
    errors = error_mask(pred, gt)
    n_def = int(np.count_nonzero(deferred))
    n_err = int(np.count_nonzero(errors))
    n_hit = int(np.count_nonzero(deferred & errors))
    prec = n_hit / n_def if n_def else 0.0
    rec = n_hit / n_err if n_err else 0.0
    f1 = 2.0 * prec * rec / (prec + rec) if prec + rec > 0.0 else 0.0
    return prec, rec, f1


@dataclass(frozen=True)
class DeferralModel:
    """A fitted deferral policy; only the active policy's fields are set."""

    policy: str
    criterion: str
    tau: float | None = None
    alpha: float | None = None
    dice_floor: float | None = None
    fitted_on: str = ""

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise InputError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.criterion not in CRITERIA:
            raise InputError(f"unknown criterion {self.criterion!r}, expected one of {CRITERIA}")
        if self.policy == "adaptive":
            if self.tau is not None:
                raise InputError("adaptive policy carries alpha, not tau")
            if self.alpha is None or not 0.0 <= self.alpha <= 100.0:
                raise InputError(f"adaptive policy needs alpha in [0, 100], got {self.alpha}")
        else:
            if self.alpha is not None:
                raise InputError(f"{self.policy} policy carries tau, not alpha")
            if self.tau is None:
                raise InputError(f"{self.policy} policy needs tau")
            _check_tau(self.tau)
        if self.criterion == "coverage_dice":
            if self.dice_floor is None or not 0.0 <= self.dice_floor < 1.0:
                raise InputError(
                    f"coverage_dice needs dice_floor in [0, 1), got {self.dice_floor}"
                )
        elif self.dice_floor is not None:
            raise InputError("dice_floor only applies to the coverage_dice criterion")

    def to_json_dict(self) -> dict:
        out = {"policy": self.policy, "criterion": self.criterion}
        if self.tau is not None:
            out["tau"] = self.tau
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.dice_floor is not None:
            out["dice_floor"] = self.dice_floor
        out["fitted_on"] = self.fitted_on
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "DeferralModel":
        if not isinstance(data, dict):
            raise InputError("deferral model JSON must be an object")
        allowed = {"policy", "criterion", "tau", "alpha", "dice_floor", "fitted_on"}
        unknown = set(data) - allowed
        if unknown:
            raise InputError(f"unknown deferral model field(s): {sorted(unknown)}")
        for key in ("policy", "criterion"):
            if key not in data:
                raise InputError(f"deferral model JSON missing {key!r}")
        return cls(
            policy=data["policy"],
            criterion=data["criterion"],
            tau=data.get("tau"),
            alpha=data.get("alpha"),
            dice_floor=data.get("dice_floor"),
            fitted_on=data.get("fitted_on", ""),
        )


def apply_model(model: DeferralModel, unc: UncertaintyMap, mean: ProbMap | None = None) -> DecisionMap:
    """Apply a fitted model to one image's uncertainty (and mean, if needed)."""
    if model.policy == "global":
        return defer_global(unc, model.tau)
    if model.policy == "adaptive":
        return defer_adaptive(unc, model.alpha)
    if mean is None:
        raise InputError("confidence_aware policy needs the mean prediction map")
    return defer_confidence_aware(confidence_aware_score(unc, mean), model.tau)


class _ImageCounts:
    """Per-image prefix counts along the score ordering, for fast sweeps."""

    __slots__ = ("sorted_scores", "cum_err", "cum_tp", "cum_fp", "cum_fn", "n")

    def __init__(self, scores: np.ndarray, pred: ProbMap, gt: GroundTruthMask):
        s = scores.ravel()
        order = np.argsort(s, kind="stable")
        self.sorted_scores = s[order]
        yhat = hard_labels(pred).ravel()[order]
        y = (gt.values != 0).ravel()[order]
        self.cum_err = np.concatenate(([0], np.cumsum(yhat != y)))
        self.cum_tp = np.concatenate(([0], np.cumsum(yhat & y)))
        self.cum_fp = np.concatenate(([0], np.cumsum(yhat & ~y)))
        self.cum_fn = np.concatenate(([0], np.cumsum(~yhat & y)))
        self.n = s.size

    def counts_at(self, taus: np.ndarray):
        """Accepted-set counts for each threshold (score <= tau accepted)."""
        k = np.searchsorted(self.sorted_scores, taus, side="right")
        return k, self.cum_err[k], self.cum_tp[k], self.cum_fp[k], self.cum_fn[k]


def _validate_items(items):
    items = list(items)
    if not items:
        raise InputError("fit_threshold: empty validation set")
    for pred, unc, gt in items:
        require_same_shape(pred, unc, "fit_threshold item")
        require_same_shape(pred, gt, "fit_threshold item")
    return items


def fit_threshold(
    items,
    policy: str,
    criterion: str = "max_f1",
    dice_floor: float = DEFAULT_DICE_FLOOR,
) -> DeferralModel:
    """Fit a deferral threshold on validation triples (pred, unc, gt).

    Global and confidence-aware policies sweep tau over the half-percent
    percentiles of the pooled validation scores (plus the pooled maximum);
    the adaptive policy sweeps whole-percent alpha from 50 to 100, applying
    each candidate per image. Candidates are scored on pooled pixel counts:

    * max_f1 keeps the candidate with the highest deferral F1;
    * coverage_dice keeps the highest-coverage candidate whose accepted-pixel
      Dice stays at or above dice_floor, and raises InfeasibleFitError (with
      the best reachable Dice and its coverage) when no candidate does.

    Ties prefer higher coverage, then the larger threshold.
    """
    if policy not in POLICIES:
        raise InputError(f"unknown policy {policy!r}, expected one of {POLICIES}")
    if criterion not in CRITERIA:
        raise InputError(f"unknown criterion {criterion!r}, expected one of {CRITERIA}")
    if criterion == "coverage_dice" and not 0.0 <= dice_floor < 1.0:
        raise InputError(f"dice_floor must be in [0, 1), got {dice_floor}")
    items = _validate_items(items)

    per_image = []
    pooled_scores = []
    for pred, unc, gt in items:
        if policy == "confidence_aware":
            scores = confidence_aware_score(unc, pred).values
        else:
            scores = unc.values
        per_image.append(_ImageCounts(scores, pred, gt))
        pooled_scores.append(scores.ravel())

    if policy == "adaptive":
        params = _ALPHA_GRID
        taus_per_image = [
            np.percentile(img.sorted_scores, params, method="linear") for img in per_image
        ]
    else:
        pooled = np.concatenate(pooled_scores)
        params = np.percentile(pooled, _TAU_PERCENTILES, method="linear")
        taus_per_image = [params] * len(per_image)

    n_candidates = params.size
    accepted = np.zeros(n_candidates, dtype=np.int64)
    acc_err = np.zeros(n_candidates, dtype=np.int64)
    acc_tp = np.zeros(n_candidates, dtype=np.int64)
    acc_fp = np.zeros(n_candidates, dtype=np.int64)
    acc_fn = np.zeros(n_candidates, dtype=np.int64)
    n_total = 0
    for img, taus in zip(per_image, taus_per_image):
        k, e, tp, fp, fn = img.counts_at(taus)
        accepted += k
        acc_err += e
        acc_tp += tp
        acc_fp += fp
        acc_fn += fn
        n_total += img.n
    total_err = sum(int(img.cum_err[-1]) for img in per_image)

    best = None  # (key tuple, param value)
    best_dice = None  # (dice, coverage) for the infeasible diagnostic
    for c in range(n_candidates):
        coverage = accepted[c] / n_total
        param = float(params[c])
        if criterion == "max_f1":
            deferred = n_total - int(accepted[c])
            def_err = total_err - int(acc_err[c])
            prec = def_err / deferred if deferred else 0.0
            rec = def_err / total_err if total_err else 0.0
            f1 = 2.0 * prec * rec / (prec + rec) if prec + rec > 0.0 else 0.0
            key = (f1, coverage, param)
            if best is None or key > best[0]:
                best = (key, param)
        else:
            d = dice_from_counts(int(acc_tp[c]), int(acc_fp[c]), int(acc_fn[c]))
            if best_dice is None or (d, coverage) > best_dice:
                best_dice = (d, coverage)
            if d >= dice_floor:
                key = (coverage, param)
                if best is None or key > best[0]:
                    best = (key, param)

    if best is None:
        raise InfeasibleFitError(
            f"no candidate reaches Dice >= {dice_floor} on accepted pixels "
            f"(best {best_dice[0]:.4f} at coverage {best_dice[1]:.4f})",
            best_dice=best_dice[0],
            best_coverage=best_dice[1],
        )

    fingerprint = fingerprint_arrays(
        [arr for pred, unc, gt in items for arr in (pred.values, unc.values, gt.values)]
    )
    param = best[1]
    # the alpha grid is whole percents; keep the model (and its JSON) integral
    kwargs = {"alpha": int(param)} if policy == "adaptive" else {"tau": param}
    if criterion == "coverage_dice":
        kwargs["dice_floor"] = dice_floor
    return DeferralModel(policy=policy, criterion=criterion, fitted_on=fingerprint, **kwargs)
