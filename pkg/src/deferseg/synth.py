"""Synthetic prediction sets with planted, analytically known structure.

The point of this generator is that every quantity the evaluation layer
measures is decided up front, so tests can check measured values against
planted ones instead of against the code being tested:

* the hard prediction is a smoothed-noise mask and the error count is
  exact: each image flips round(error_rate * N) pixels of that mask to form
  the ground truth, picking them with probability 0.5 - margin. Flipping
  relative to the prediction (not the truth) makes the reported probability
  0.5 + margin toward the predicted class a genuine posterior: whatever the
  class prior, P(label=1 | reported p) = p, so the set is calibrated in the
  label-frequency sense as well as the confidence sense;
* reported probabilities are optionally mis-scaled through a planted
  temperature, reported_logit = t_plant * calibrated_logit, so a temperature
  fit on the output should recover t_plant (overconfident plants t > 1,
  underconfident t < 1, calibrated leaves logits untouched);
* per-pixel uncertainty is planted through the pass spread: pass k holds
  p + w * xi_k with a fixed zero-sum pattern xi, so the pass variance is
  exactly w^2 * mean(xi^2). The spread w is monotone in a planted driver
  that ranks error pixels above correct ones with probability
  unc_error_corr: the variance AUROC against errors is (1 + corr) / 2 in
  expectation, and corr = 1 separates errors from correct pixels exactly,
  pooled across the whole set (the spread scale is a deterministic function
  of the spec, shared by every image, so cross-image ranks stay valid).

The per-pass zero-sum pattern keeps the pass mean equal to the reported
probability up to rounding, and the spread scale (just under the smallest
distance any reported probability can have to {0, 1}) keeps every pass
value strictly inside (0, 1) without clipping.

Images are generated independently under a counter-based RNG keyed by
(seed, image index), so any image can be regenerated alone, bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InputError
from .maps import (
    GroundTruthMask,
    LogitMap,
    PredictionStack,
    ProbMap,
    UncertaintyMap,
    fingerprint_arrays,
)
from .transforms import TRANSFORM_IDS, apply_transform

__all__ = ["CALIBRATION_MODES", "SynthSpec", "SynthImage", "SynthSet", "generate"]

CALIBRATION_MODES = ("calibrated", "overconfident", "underconfident")

_MARGIN_MIN = 1e-3
_MARGIN_MAX = 0.4995
_POS_FRAC = (0.10, 0.15)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic prediction set."""

    height: int = 32
    width: int = 32
    n_images: int = 4
    error_rate: float = 0.1
    unc_error_corr: float = 0.5
    calibration_mode: str = "calibrated"
    t_plant: float = 2.0
    passes: int = 4
    seed: int = 0
    source_tag: str = "mc_dropout"
    emit_transformed: bool = False

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise InputError(f"images must be at least 2x2, got {self.height}x{self.width}")
        if self.n_images < 1:
            raise InputError(f"n_images must be >= 1, got {self.n_images}")
        if not 0.0 < self.error_rate < 0.5:
            raise InputError(
                f"error_rate must be in (0, 0.5), got {self.error_rate}: planted "
                f"confidence margins average 0.5 - error_rate, and a calibrated "
                f"binary predictor cannot be wrong half the time or more"
            )
        if not 0.0 <= self.unc_error_corr <= 1.0:
            raise InputError(f"unc_error_corr must be in [0, 1], got {self.unc_error_corr}")
        if self.calibration_mode not in CALIBRATION_MODES:
            raise InputError(
                f"unknown calibration_mode {self.calibration_mode!r}, "
                f"expected one of {CALIBRATION_MODES}"
            )
        if not 0.05 <= self.t_plant <= 5.0:
            raise InputError(f"t_plant must be in [0.05, 5], got {self.t_plant}")
        if self.calibration_mode == "overconfident" and self.t_plant <= 1.0:
            raise InputError(
                f"overconfident mode scales logits up and needs t_plant > 1, "
                f"got {self.t_plant}"
            )
        if self.calibration_mode == "underconfident" and self.t_plant >= 1.0:
            raise InputError(
                f"underconfident mode scales logits down and needs t_plant < 1, "
                f"got {self.t_plant}"
            )
        if self.passes != 0 and not 2 <= self.passes <= 64:
            raise InputError(f"passes must be 0 (no stack) or in [2, 64], got {self.passes}")
        if self.emit_transformed and not 2 <= self.passes <= len(TRANSFORM_IDS):
            raise InputError(
                f"emit_transformed needs 2..{len(TRANSFORM_IDS)} passes, got {self.passes}"
            )
        if self.emit_transformed and self.height != self.width:
            raise InputError("emit_transformed uses rotations and needs square images")
        if not 0 <= self.seed < 2 ** 63:
            raise InputError(f"seed must be a nonnegative 63-bit integer, got {self.seed}")

    def to_json_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "n_images": self.n_images,
            "error_rate": self.error_rate,
            "unc_error_corr": self.unc_error_corr,
            "calibration_mode": self.calibration_mode,
            "t_plant": self.t_plant,
            "passes": self.passes,
            "seed": self.seed,
            "source_tag": self.source_tag,
            "emit_transformed": self.emit_transformed,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SynthSpec":
        if not isinstance(data, dict):
            raise InputError("synth spec JSON must be an object")
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - allowed
        if unknown:
            raise InputError(f"unknown synth spec field(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SynthImage:
    """One generated image plus the planted quantities tests compare against."""

    gt: GroundTruthMask
    prob: ProbMap       # reported probabilities (after any planted temperature)
    logits: LogitMap    # reported logits, exact counterpart of prob
    stack: PredictionStack | None
    error_mask: np.ndarray      # bool, exactly round(error_rate * N) pixels set
    margins: np.ndarray         # planted |p_calibrated - 0.5| per pixel
    driver: np.ndarray          # uncertainty driver in [0, 1), monotone in variance
    variance: np.ndarray        # planted pass variance, spread^2 * mean(xi^2)

    @property
    def planted_unc(self) -> UncertaintyMap:
        return UncertaintyMap(self.variance, kind="variance")


@dataclass(frozen=True)
class SynthSet:
    spec: SynthSpec
    images: tuple[SynthImage, ...] = field(default=())

    @property
    def error_count(self) -> int:
        return sum(int(np.count_nonzero(img.error_mask)) for img in self.images)

    @property
    def pixel_count(self) -> int:
        return sum(img.gt.values.size for img in self.images)

    def triples(self, unc_source: str = "planted"):
        """(prob, uncertainty, gt) triples for fitting and evaluation."""
        if unc_source != "planted":
            raise InputError(f"unknown unc_source {unc_source!r}")
        return [(img.prob, img.planted_unc, img.gt) for img in self.images]

    def fingerprint(self) -> str:
        return fingerprint_arrays(
            [arr for img in self.images for arr in (img.prob.values, img.gt.values)]
        )


def _pass_pattern(passes: int) -> np.ndarray:
    """Zero-sum pattern with max |xi| = 1: paired +/- powers of two."""
    xi = []
    for i in range(passes // 2):
        mag = 2.0 ** -i
        xi += [mag, -mag]
    if passes % 2:
        xi.append(0.0)
    return np.asarray(xi)


def _image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _prediction_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    noise = rng.standard_normal((h, w))
    smooth = gaussian_filter(noise, sigma=max(1.0, min(h, w) / 10.0))
    frac = rng.uniform(*_POS_FRAC)
    thresh = np.quantile(smooth, 1.0 - frac)
    return (smooth > thresh).astype(np.uint8)


def _margins(rng: np.random.Generator, n: int, error_rate: float, cap: float) -> np.ndarray:
    # Beta(a, b) scaled to (0, 0.5) with mean 0.5 - error_rate and a + b = 6,
    # so the planted error probabilities 0.5 - margin average to error_rate
    a = 6.0 * (1.0 - 2.0 * error_rate)
    b = 12.0 * error_rate
    g = 0.5 * rng.beta(a, b, size=n)
    return np.clip(g, _MARGIN_MIN, cap)


def _plant_errors(rng: np.random.Generator, weights: np.ndarray, k: int) -> np.ndarray:
    """Pick exactly k pixels with inclusion probability proportional to weight.

    Weighted reservoir keys (Gumbel trick): taking the top k of
    log(w) + Gumbel draws a weighted sample without replacement.
    """
    n = weights.size
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        rng.gumbel(size=n)  # keep the draw sequence stable across k
        return mask
    keys = np.log(weights) + rng.gumbel(size=n)
    mask[np.argpartition(keys, n - k)[n - k:]] = True
    return mask


def _margin_cap(spec: SynthSpec) -> tuple[float, float]:
    """(margin cap, planted temperature), capped so no reported logit
    passes ~13 and lands probabilities inside the input clamp zone."""
    t_plant = 1.0 if spec.calibration_mode == "calibrated" else spec.t_plant
    t_scale = max(t_plant, 1.0)
    cap = min(_MARGIN_MAX, 1.0 / (1.0 + np.exp(-13.0 / t_scale)) - 0.5)
    return cap, t_plant


def _spread_scale(spec: SynthSpec) -> float:
    """Largest pass spread safe for every pixel the spec can produce.

    Deterministic in the spec (not the draws) so all images share one
    variance scale and planted ranks stay comparable across the set.
    """
    cap, t_plant = _margin_cap(spec)
    z_rep_max = t_plant * (np.log(0.5 + cap) - np.log(0.5 - cap))
    p_closest = 1.0 / (1.0 + np.exp(z_rep_max))  # nearest approach to {0, 1}
    return 0.99 * float(p_closest)


def _generate_image(spec: SynthSpec, index: int) -> SynthImage:
    rng = _image_rng(spec.seed, index)
    h, w = spec.height, spec.width
    n = h * w

    y_hat = _prediction_mask(rng, h, w).ravel()

    cap, t_plant = _margin_cap(spec)
    margins = _margins(rng, n, spec.error_rate, cap)

    k = int(np.rint(spec.error_rate * n))
    error_mask = _plant_errors(rng, 0.5 - margins, k)
    y = np.where(error_mask, 1 - y_hat, y_hat).astype(np.uint8)

    signed = margins * (2.0 * y_hat - 1.0)
    z_cal = np.log(0.5 + signed) - np.log(0.5 - signed)  # logit of 0.5 + signed
    z_rep = t_plant * z_cal
    p_rep = 1.0 / (1.0 + np.exp(-z_rep))

    # uncertainty driver: errors outrank correct pixels with prob corr
    v = rng.uniform(0.0, 1.0, size=n)
    lift = rng.uniform(0.0, 1.0, size=n) < spec.unc_error_corr
    rho = np.where(error_mask & lift, 1.0 + v, v) / 2.0  # in [0, 1)

    xi = _pass_pattern(spec.passes) if spec.passes else np.zeros(0)
    # without passes there is no pattern; unit scale keeps the planted
    # variance a usable (rank-preserving) uncertainty plane
    msq = float(np.mean(xi ** 2)) if xi.size else 1.0
    w_max = _spread_scale(spec)
    spread = w_max * np.sqrt(rho)
    variance = (w_max * w_max * msq) * rho  # == spread^2 * msq, monotone in rho

    stack = None
    if spec.passes:
        planes = p_rep[None, :] + spread[None, :] * xi[:, None]  # (T, N)
        planes = planes.reshape(spec.passes, h, w)
        if spec.emit_transformed:
            ids = TRANSFORM_IDS[: spec.passes]
            planes = np.stack(
                [apply_transform(planes[t], ids[t]) for t in range(spec.passes)]
            )
            stack = PredictionStack(planes, source_tag="tta", transform_ids=ids)
        else:
            stack = PredictionStack(planes, source_tag=spec.source_tag)

    return SynthImage(
        gt=GroundTruthMask(y.reshape(h, w)),
        prob=ProbMap(p_rep.reshape(h, w)),
        logits=LogitMap(z_rep.reshape(h, w)),
        stack=stack,
        error_mask=error_mask.reshape(h, w),
        margins=margins.reshape(h, w),
        driver=rho.reshape(h, w),
        variance=variance.reshape(h, w),
    )


def generate(spec: SynthSpec) -> SynthSet:
    """Generate the full set described by `spec`, one keyed stream per image."""
    images = tuple(_generate_image(spec, i) for i in range(spec.n_images))
    return SynthSet(spec=spec, images=images)
