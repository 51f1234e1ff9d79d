"""Canonical 2-D/3-D array types.

All types adopt the array they are given, convert it to the canonical dtype
and C order, and freeze it (writeable=False). Pass a copy if you need to keep
mutating the source array. Frozen instances are safe to share across threads.

Probability-like values are stored as 64-bit floats regardless of the file
dtype they came from; the originating storage dtype is kept so file output
can reproduce the source representation bit-for-bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InvariantError
from .numerics import LN2

__all__ = [
    "SOURCE_TAGS",
    "UNCERTAINTY_KINDS",
    "ProbMap",
    "PredictionStack",
    "GroundTruthMask",
    "UncertaintyMap",
    "DecisionMap",
    "LogitMap",
    "require_same_shape",
    "fingerprint_arrays",
]

SOURCE_TAGS = ("mc_dropout", "tta", "ensemble", "other")
UNCERTAINTY_KINDS = ("mutual_information", "variance", "entropy", "confidence_aware_score")

# headroom for rounding in variance / entropy upper-bound checks
_BOUND_TOL = 1e-12


def _frozen(values, dtype, rank: int, what: str) -> np.ndarray:
    try:
        arr = np.require(np.asarray(values), dtype=dtype, requirements=["C"])
    except (TypeError, ValueError) as exc:
        raise InvariantError(f"{what}: cannot interpret values as {dtype}: {exc}") from exc
    if arr.ndim != rank:
        raise InvariantError(f"{what}: expected rank {rank}, got rank {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise InvariantError(f"{what}: every dimension must be >= 1, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{what}: values must be finite")


def _check_unit_range(arr: np.ndarray, what: str) -> None:
    _check_finite(arr, what)
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise InvariantError(f"{what}: values must lie in [0, 1], got range [{lo}, {hi}]")


def _check_binary(arr: np.ndarray, what: str) -> None:
    bad = (arr != 0) & (arr != 1)
    if bad.any():
        raise InvariantError(f"{what}: values must be exactly 0 or 1")


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel probabilities in [0, 1], row-major."""

    values: np.ndarray
    storage_dtype: np.dtype = field(default=np.dtype(np.float64))

    def __post_init__(self):
        arr = _frozen(self.values, np.float64, 2, "ProbMap")
        _check_unit_range(arr, "ProbMap")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "storage_dtype", np.dtype(self.storage_dtype))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PredictionStack:
    """T per-pass probability planes for one image.

    transform_ids may only be present for source_tag="tta", and means the
    planes are still in transformed orientation (aggregation undoes them).
    """

    values: np.ndarray
    source_tag: str = "other"
    transform_ids: tuple[str, ...] | None = None
    storage_dtype: np.dtype = field(default=np.dtype(np.float64))

    def __post_init__(self):
        arr = _frozen(self.values, np.float64, 3, "PredictionStack")
        _check_unit_range(arr, "PredictionStack")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "storage_dtype", np.dtype(self.storage_dtype))
        if self.source_tag not in SOURCE_TAGS:
            raise InvariantError(
                f"PredictionStack: unknown source_tag {self.source_tag!r}, "
                f"expected one of {SOURCE_TAGS}"
            )
        ids = self.transform_ids
        if ids is not None:
            from .transforms import TRANSFORM_IDS  # local import, no cycle at module load

            ids = tuple(ids)
            object.__setattr__(self, "transform_ids", ids)
            if self.source_tag != "tta":
                raise InvariantError(
                    "PredictionStack: transform_ids only apply to source_tag='tta'"
                )
            if len(ids) != self.passes:
                raise InvariantError(
                    f"PredictionStack: {len(ids)} transform_ids for {self.passes} passes"
                )
            unknown = [t for t in ids if t not in TRANSFORM_IDS]
            if unknown:
                raise InvariantError(f"PredictionStack: unknown transform ids {unknown}")
            if len(set(ids)) != len(ids):
                raise InvariantError("PredictionStack: duplicate transform ids")
            needs_square = any(t in ("rot90", "rot270") for t in ids)
            if needs_square and self.height != self.width:
                raise InvariantError(
                    "PredictionStack: rotation transform ids require square planes"
                )

    @property
    def passes(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def plane_shape(self) -> tuple[int, int]:
        return self.values.shape[1:]


@dataclass(frozen=True)
class GroundTruthMask:
    """Per-pixel binary labels."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values, np.uint8, 2, "GroundTruthMask")
        _check_binary(arr, "GroundTruthMask")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class UncertaintyMap:
    """Per-pixel nonnegative uncertainty of a stated kind.

    Kind-specific upper bounds are enforced: variance <= 0.25,
    mutual_information / entropy <= ln 2 (natural log throughout).
    """

    values: np.ndarray
    kind: str

    def __post_init__(self):
        arr = _frozen(self.values, np.float64, 2, "UncertaintyMap")
        _check_finite(arr, "UncertaintyMap")
        object.__setattr__(self, "values", arr)
        if self.kind not in UNCERTAINTY_KINDS:
            raise InvariantError(
                f"UncertaintyMap: unknown kind {self.kind!r}, expected one of {UNCERTAINTY_KINDS}"
            )
        lo = float(arr.min())
        if lo < 0.0:
            raise InvariantError(f"UncertaintyMap[{self.kind}]: negative value {lo}")
        hi = float(arr.max())
        if self.kind == "variance" and hi > 0.25 + _BOUND_TOL:
            raise InvariantError(f"UncertaintyMap[variance]: value {hi} exceeds 0.25")
        if self.kind in ("mutual_information", "entropy") and hi > LN2 + _BOUND_TOL:
            raise InvariantError(f"UncertaintyMap[{self.kind}]: value {hi} exceeds ln 2")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DecisionMap:
    """Per-pixel accept(1)/defer(0) decisions."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values, np.uint8, 2, "DecisionMap")
        _check_binary(arr, "DecisionMap")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def coverage(self) -> float:
        """Fraction of accepted pixels."""
        return int(np.count_nonzero(self.values)) / self.values.size


@dataclass(frozen=True)
class LogitMap:
    """Per-pixel real logits; finite values only."""

    values: np.ndarray
    storage_dtype: np.dtype = field(default=np.dtype(np.float64))

    def __post_init__(self):
        arr = _frozen(self.values, np.float64, 2, "LogitMap")
        _check_finite(arr, "LogitMap")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "storage_dtype", np.dtype(self.storage_dtype))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def require_same_shape(a, b, what: str) -> None:
    """Raise InputError unless the two maps share one H x W shape."""
    sa = a.shape if isinstance(a, tuple) else a.values.shape[-2:]
    sb = b.shape if isinstance(b, tuple) else b.values.shape[-2:]
    if sa != sb:
        raise InputError(f"{what}: shape mismatch {sa} vs {sb}")


def fingerprint_arrays(arrays) -> str:
    """Dataset fingerprint: sha256 over dtypes, shapes and raw bytes.

    Stable across runs and platforms for identical data (all canonical dtypes
    are little-endian single-byte-order on supported platforms).
    """
    h = hashlib.sha256()
    count = 0
    for arr in arrays:
        a = np.ascontiguousarray(arr)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
        count += 1
    h.update(f"n={count}".encode())
    return "ds-" + h.hexdigest()[:12]
