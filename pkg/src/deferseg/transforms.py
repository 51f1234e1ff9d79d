"""The six exact geometric transforms: identity, flips, quarter rotations.

Every transform is a pure index permutation — no interpolation — so applying
a transform and then its inverse reproduces the input bit-for-bit. Rotations
are restricted to square grids; rot90 is counterclockwise and rot270 is its
inverse.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

__all__ = [
    "TRANSFORM_IDS",
    "inverse_of",
    "apply_transform",
    "invert_transform",
    "apply_transform_map",
    "invert_transform_map",
]

TRANSFORM_IDS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")

_INVERSE = {
    "identity": "identity",
    "hflip": "hflip",
    "vflip": "vflip",
    "rot90": "rot270",
    "rot180": "rot180",
    "rot270": "rot90",
}


def inverse_of(transform_id: str) -> str:
    _require_known(transform_id)
    return _INVERSE[transform_id]


def _require_known(transform_id: str) -> None:
    if transform_id not in _INVERSE:
        raise InputError(
            f"unknown transform id {transform_id!r}, expected one of {TRANSFORM_IDS}"
        )


def apply_transform(plane: np.ndarray, transform_id: str) -> np.ndarray:
    """Transform a 2-D array; returns a fresh C-contiguous copy."""
    _require_known(transform_id)
    if plane.ndim != 2:
        raise InputError(f"transforms operate on 2-D planes, got rank {plane.ndim}")
    if transform_id in ("rot90", "rot270") and plane.shape[0] != plane.shape[1]:
        raise InputError(
            f"{transform_id} requires a square plane, got shape {plane.shape}"
        )
    if transform_id == "identity":
        view = plane
    elif transform_id == "hflip":
        view = plane[:, ::-1]
    elif transform_id == "vflip":
        view = plane[::-1, :]
    elif transform_id == "rot90":
        view = np.rot90(plane, 1)
    elif transform_id == "rot180":
        view = np.rot90(plane, 2)
    else:  # rot270
        view = np.rot90(plane, 3)
    out = np.ascontiguousarray(view)
    if out is plane:
        out = plane.copy()
    return out


def invert_transform(plane: np.ndarray, transform_id: str) -> np.ndarray:
    """Undo a transform: apply its exact inverse."""
    return apply_transform(plane, inverse_of(transform_id))


def apply_transform_map(prob_map, transform_id: str):
    """ProbMap-level wrapper around apply_transform."""
    from .maps import ProbMap

    return ProbMap(apply_transform(prob_map.values, transform_id),
                   storage_dtype=prob_map.storage_dtype)


def invert_transform_map(prob_map, transform_id: str):
    """ProbMap-level wrapper around invert_transform."""
    return apply_transform_map(prob_map, inverse_of(transform_id))
