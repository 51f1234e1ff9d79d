"""Assemble evaluation runs into one JSON-ready report.

The report separates three aggregation views that are easy to conflate:

* pooled: every pixel from every image in one bag. Count-based metrics
  (Dice, IoU, error rate) divide pooled counts.
* image_mean: the metric per image, then the mean across images, with a
  seeded bootstrap CI. This is the view that treats images as the unit.
* deferral: pooled counts restricted to accepted pixels. Two e_after
  conventions appear side by side (residual errors over all pixels, which
  feeds the headline error-reduction ratio, and selective risk over
  accepted pixels only).

Everything numeric lands in plain Python floats so the report serializes
with shortest-repr literals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .calibration import ReliabilityTable, TemperatureModel, apply_temperature, ece
from .deferral import DeferralModel, apply_model, confidence_aware_score
from .errors import InputError, UndefinedMetricError
from .maps import GroundTruthMask, ProbMap, UncertaintyMap, require_same_shape
from .metrics import (
    RiskCoverageCurve,
    bootstrap_ci,
    confusion_counts,
    dice_from_counts,
    err,
    error_mask,
    hard_labels,
    iou_from_counts,
    operating_points,
    risk_coverage_curve,
    roc_auc,
    unc_auroc,
)

__all__ = ["REPORT_SCHEMA", "EvaluationResult", "evaluate"]

REPORT_SCHEMA = "deferseg-report/1"


@dataclass(frozen=True)
class EvaluationResult:
    report: dict
    curve: RiskCoverageCurve | None = None
    reliability: ReliabilityTable | None = None


def _validate_items(items):
    items = list(items)
    if not items:
        raise InputError("evaluate: empty item list")
    for pred, unc, gt in items:
        require_same_shape(pred, gt, "evaluate item")
        if unc is not None:
            require_same_shape(pred, unc, "evaluate item")
    return items


def _pooled_map(arrays, cls, **kwargs):
    flat = np.concatenate([a.ravel() for a in arrays])
    return cls(flat.reshape(1, flat.size), **kwargs)


def evaluate(
    items,
    model: DeferralModel | None = None,
    temperature: TemperatureModel | None = None,
    *,
    curve_metric: str | None = "dice",
    curve_grid=None,
    targets=(),
    ece_bins: int = 15,
    ece_acc_mode: str = "positive_frequency",
    auc_mode: str = "exact",
    bootstrap_seed: int = 0,
    bootstrap_resamples: int = 1000,
    threads: int = 1,
    config: dict | None = None,
) -> EvaluationResult:
    """Evaluate (pred, unc, gt) triples; unc may be None when unused.

    When `temperature` is given, predictions are rescaled before anything is
    measured. When `model` is given, its decisions drive the deferral
    section. The risk-coverage curve needs uncertainty maps; pass
    curve_metric=None to skip it. auc_mode "binned" switches both AUROCs to
    the fast approximation with the documented error bound.
    """
    items = _validate_items(items)
    if auc_mode not in ("exact", "binned"):
        raise InputError(f"unknown auc_mode {auc_mode!r}, expected exact or binned")
    binned = auc_mode == "binned"
    flags: list[str] = []

    if temperature is not None:
        items = [(apply_temperature(pred, temperature.T), unc, gt) for pred, unc, gt in items]

    have_unc = all(unc is not None for _, unc, _ in items)

    # per-image overlap and the pooled counts in one pass
    images = []
    pool_tp = pool_fp = pool_fn = pool_err = pool_n = 0
    dices, ious = [], []
    for i, (pred, unc, gt) in enumerate(items):
        tp, fp, fn, _ = confusion_counts(hard_labels(pred), gt.values)
        n_err = int(np.count_nonzero(error_mask(pred, gt)))
        n = pred.values.size
        d, j = dice_from_counts(tp, fp, fn), iou_from_counts(tp, fp, fn)
        degenerate = (tp + fp == 0) or (tp + fn == 0)
        if degenerate:
            flags.append(f"image {i}: empty prediction or truth, overlap by convention")
        images.append(
            {
                "index": i,
                "dice": d,
                "iou": j,
                "error_rate": n_err / n,
                "degenerate_overlap": degenerate,
            }
        )
        dices.append(d)
        ious.append(j)
        pool_tp += tp
        pool_fp += fp
        pool_fn += fn
        pool_err += n_err
        pool_n += n

    pooled = {
        "dice": dice_from_counts(pool_tp, pool_fp, pool_fn),
        "iou": iou_from_counts(pool_tp, pool_fp, pool_fn),
        "error_rate": pool_err / pool_n,
        "n_pixels": pool_n,
        "n_images": len(items),
    }
    try:
        pooled["auroc"] = roc_auc(
            np.concatenate([p.values.ravel() for p, _, _ in items]),
            np.concatenate([g.values.ravel() for _, _, g in items]),
            binned=binned,
        )
    except UndefinedMetricError as exc:
        flags.append(f"auroc skipped: {exc}")
    if have_unc:
        try:
            pooled["unc_auroc"] = _pooled_unc_auroc(items, binned=binned)
        except UndefinedMetricError as exc:
            flags.append(f"unc_auroc skipped: {exc}")

    ece_value, reliability = ece(
        [pred for pred, _, _ in items],
        [gt for _, _, gt in items],
        bins=ece_bins,
        acc_mode=ece_acc_mode,
    )
    pooled["ece"] = ece_value

    image_mean = {
        "dice": float(np.mean(dices)),
        "iou": float(np.mean(ious)),
    }
    if len(items) > 1:
        image_mean["dice_ci"] = list(
            bootstrap_ci(dices, resamples=bootstrap_resamples, seed=bootstrap_seed)
        )
        image_mean["iou_ci"] = list(
            bootstrap_ci(ious, resamples=bootstrap_resamples, seed=bootstrap_seed)
        )

    deferral = None
    if model is not None:
        if not have_unc:
            raise InputError("deferral evaluation needs an uncertainty map per image")
        deferral = _deferral_section(items, model, pool_err, pool_n, flags)

    curve = None
    curve_summary = None
    if curve_metric is not None:
        if not have_unc:
            flags.append("risk-coverage curve skipped: no uncertainty maps")
        else:
            curve = _pooled_curve(items, model, curve_metric, curve_grid)
            if curve.note:
                flags.append(f"risk-coverage: {curve.note}")
            curve_summary = {
                "metric_kind": curve.metric_kind,
                "aucc": curve.aucc,
                "levels": len(curve.points),
                "undefined_levels": curve.undefined_count,
            }

    ops = operating_points(curve, list(targets)) if curve is not None and targets else []

    report = {
        "schema": REPORT_SCHEMA,
        "metadata": {
            "package_version": __version__,
            "backend": BACKEND,
            "entropy_base": "nats",
            "threads": threads,
            "bootstrap_seed": bootstrap_seed,
            "config": dict(config) if config else {},
        },
        "images": images,
        "pooled": pooled,
        "image_mean": image_mean,
        "deferral": deferral,
        "calibration": _calibration_section(temperature, ece_value, ece_acc_mode),
        "curve": curve_summary,
        "operating_points": ops,
        "flags": flags,
    }
    return EvaluationResult(report=report, curve=curve, reliability=reliability)


def _pooled_unc_auroc(items, binned: bool = False) -> float:
    pred = _pooled_map([p.values for p, _, _ in items], ProbMap)
    gt = _pooled_map([g.values for _, _, g in items], GroundTruthMask)
    kind = items[0][1].kind
    unc = _pooled_map([u.values for _, u, _ in items], UncertaintyMap, kind=kind)
    return unc_auroc(unc, pred, gt, binned=binned)


def _score_map(model: DeferralModel, pred: ProbMap, unc: UncertaintyMap) -> UncertaintyMap:
    if model.policy == "confidence_aware":
        return confidence_aware_score(unc, pred)
    return unc


def _deferral_section(items, model, pool_err, pool_n, flags) -> dict:
    acc_tp = acc_fp = acc_fn = acc_err = accepted = 0
    n_def = n_def_err = 0
    score_min, score_max = np.inf, -np.inf
    for pred, unc, gt in items:
        decision = apply_model(model, unc, pred)
        acc = decision.values != 0
        tp, fp, fn, _ = confusion_counts(hard_labels(pred), gt.values, roi=acc)
        errors = error_mask(pred, gt)
        acc_tp += tp
        acc_fp += fp
        acc_fn += fn
        acc_err += int(np.count_nonzero(errors & acc))
        accepted += int(np.count_nonzero(acc))
        n_def += int(np.count_nonzero(~acc))
        n_def_err += int(np.count_nonzero(errors & ~acc))
        scores = _score_map(model, pred, unc).values
        score_min = min(score_min, float(scores.min()))
        score_max = max(score_max, float(scores.max()))

    e_before = pool_err / pool_n
    e_after_residual = acc_err / pool_n
    section = {
        "model": model.to_json_dict(),
        "coverage": accepted / pool_n,
        "e_before": e_before,
        "e_after_residual": e_after_residual,
        "accepted_dice": dice_from_counts(acc_tp, acc_fp, acc_fn),
        "accepted_iou": iou_from_counts(acc_tp, acc_fp, acc_fn),
        "score_stats": {"min": score_min, "max": score_max},
    }
    prec = n_def_err / n_def if n_def else 0.0
    rec = n_def_err / pool_err if pool_err else 0.0
    section["deferral_f1"] = {
        "precision": prec,
        "recall": rec,
        "f1": 2.0 * prec * rec / (prec + rec) if prec + rec > 0.0 else 0.0,
    }
    if accepted:
        section["selective_risk"] = acc_err / accepted
    else:
        section["selective_risk"] = None
        flags.append("deferral: no pixels accepted, selective risk undefined")
    if e_before > 0.0:
        section["err"] = err(e_before, e_after_residual)
        if section["selective_risk"] is not None:
            section["err_selective"] = err(e_before, section["selective_risk"])
    else:
        section["err"] = None
        flags.append("deferral: baseline error rate is 0, ERR undefined")
    return section


def _pooled_curve(items, model, metric_kind, grid) -> RiskCoverageCurve:
    preds = [p.values for p, _, _ in items]
    gts = [g.values for _, _, g in items]
    if model is not None:
        scores = [_score_map(model, p, u).values for p, u, _ in items]
    else:
        scores = [u.values for _, u, _ in items]
    return risk_coverage_curve(
        _pooled_map(scores, UncertaintyMap, kind=items[0][1].kind
                    if model is None or model.policy != "confidence_aware"
                    else "confidence_aware_score"),
        _pooled_map(preds, ProbMap),
        _pooled_map(gts, GroundTruthMask),
        metric_kind=metric_kind,
        grid=grid,
    )


def _calibration_section(temperature, ece_value, acc_mode) -> dict:
    section = {"ece": ece_value, "ece_acc_mode": acc_mode}
    if temperature is not None:
        section["temperature"] = temperature.to_json_dict()
    return section
