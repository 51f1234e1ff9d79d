"""Bit-exact file I/O for the canonical array container and PGM output.

The canonical container is the NPY v1.0 format restricted to: magic
\\x93NUMPY, version 1.0, little-endian, C order, dtypes float32/float64/uint8,
rank 2 or 3. The reader parses the header itself so every way a file can
violate the subset produces its own diagnostic instead of a generic failure.

Probability-like payloads are widened to float64 internally; the file dtype
is remembered on the map so write_array_file() reproduces the original bytes.
"""

from __future__ import annotations

import ast
import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError, InvariantError
from .maps import (
    DecisionMap,
    GroundTruthMask,
    LogitMap,
    PredictionStack,
    ProbMap,
)

__all__ = [
    "read_array_file",
    "write_array_file",
    "write_decision_pgm",
    "write_uncertainty_pgm",
    "read_json",
    "write_json",
]

_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCR = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "|u1": np.dtype("u1")}
_FLOAT_DESCR = ("<f4", "<f8")

_KINDS = ("prob", "stack", "mask", "logits", "decision")


def _parse_header(path: Path, raw: bytes):
    """Strict NPY v1.0 header parse; returns (dtype, shape, payload offset)."""
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise InputError(f"{path}: not a canonical array file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise InputError(
            f"{path}: unsupported container version {major}.{minor} (only 1.0 is accepted)"
        )
    (header_len,) = struct.unpack("<H", raw[8:10])
    end = 10 + header_len
    if len(raw) < end:
        raise InputError(f"{path}: malformed header (truncated)")
    try:
        header = ast.literal_eval(raw[10:end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise InputError(f"{path}: malformed header (not a literal dict): {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise InputError(f"{path}: malformed header (unexpected keys)")
    descr = header["descr"]
    if descr not in _SUPPORTED_DESCR:
        raise InputError(
            f"{path}: unsupported dtype {descr!r} "
            f"(supported: {sorted(_SUPPORTED_DESCR)})"
        )
    if header["fortran_order"] is not False:
        raise InputError(f"{path}: Fortran-order arrays are not supported")
    shape = header["shape"]
    if (
        not isinstance(shape, tuple)
        or not all(isinstance(d, int) and d >= 1 for d in shape)
        or len(shape) not in (2, 3)
    ):
        raise InputError(f"{path}: unsupported shape {shape!r} (rank 2 or 3, dims >= 1)")
    return _SUPPORTED_DESCR[descr], shape, end


def _read_raw(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: cannot read file: {exc}") from exc
    dtype, shape, offset = _parse_header(path, raw)
    n_expected = int(np.prod(shape))
    payload = raw[offset:]
    if len(payload) != n_expected * dtype.itemsize:
        raise InputError(
            f"{path}: payload size mismatch "
            f"(header promises {n_expected} x {dtype.itemsize} bytes, found {len(payload)})"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape)


def _check_prob_payload(path: Path, arr: np.ndarray, kind_hint: str | None) -> None:
    wide = arr.astype(np.float64)
    if not np.all(np.isfinite(wide)):
        raise InputError(f"{path}: non-finite value where probabilities expected")
    lo, hi = float(wide.min()), float(wide.max())
    if lo < 0.0 or hi > 1.0:
        hint = "" if kind_hint is not None else " (pass kind='logits' to read raw logits)"
        raise InputError(
            f"{path}: probability outside [0, 1]: range [{lo}, {hi}]{hint}"
        )


def _read_sidecar(path: Path) -> dict:
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        return {}
    meta = read_json(sidecar)
    unknown = set(meta) - {"source_tag", "transform_ids"}
    if unknown:
        raise InputError(f"{sidecar}: unknown sidecar keys {sorted(unknown)}")
    return meta


def read_array_file(path, kind: str | None = None):
    """Read a canonical array file into its map type.

    Parameters
    ----------
    path : str or Path
    kind : str, optional
        One of "prob", "stack", "mask", "logits", "decision". Without it the
        type is inferred: rank-3 float -> PredictionStack, rank-2 uint8 ->
        GroundTruthMask, rank-2 float in [0,1] -> ProbMap. Logits and
        decision maps cannot be inferred and need an explicit kind.

    Returns
    -------
    ProbMap | PredictionStack | GroundTruthMask | LogitMap | DecisionMap
    """
    path = Path(path)
    if kind is not None and kind not in _KINDS:
        raise InputError(f"unknown read kind {kind!r}, expected one of {_KINDS}")
    arr = _read_raw(path)
    file_descr = arr.dtype.str.lstrip("=")

    if arr.ndim == 3:
        if kind not in (None, "stack"):
            raise InputError(f"{path}: rank-3 array cannot be read as kind={kind!r}")
        if file_descr not in _FLOAT_DESCR:
            raise InputError(f"{path}: prediction stacks must be float32/float64")
        _check_prob_payload(path, arr, kind)
        meta = _read_sidecar(path)
        ids = meta.get("transform_ids")
        try:
            return PredictionStack(
                arr.astype(np.float64),
                source_tag=meta.get("source_tag", "other"),
                transform_ids=tuple(ids) if ids is not None else None,
                storage_dtype=arr.dtype,
            )
        except InvariantError as exc:
            raise InputError(f"{path}: {exc}") from exc

    # rank 2
    if arr.dtype == np.uint8:
        if kind in (None, "mask", "decision"):
            bad = (arr != 0) & (arr != 1)
            if bad.any():
                what = "decision" if kind == "decision" else "label"
                raise InputError(f"{path}: {what} values must be exactly 0 or 1")
            return DecisionMap(arr.copy()) if kind == "decision" else GroundTruthMask(arr.copy())
        raise InputError(f"{path}: uint8 array cannot be read as kind={kind!r}")

    if kind in ("mask", "decision"):
        raise InputError(f"{path}: kind={kind!r} requires a uint8 file, got {file_descr}")
    if kind == "stack":
        raise InputError(f"{path}: kind='stack' requires a rank-3 file")
    if kind == "logits":
        wide = arr.astype(np.float64)
        if not np.all(np.isfinite(wide)):
            raise InputError(f"{path}: non-finite value in logit plane")
        return LogitMap(wide, storage_dtype=arr.dtype)
    _check_prob_payload(path, arr, kind)
    return ProbMap(arr.astype(np.float64), storage_dtype=arr.dtype)


def write_array_file(m, path) -> None:
    """Write a map back to the canonical container at its storage dtype.

    read_array_file(write_array_file(x)) reproduces x bit-for-bit: float64
    values that originated from a float32 file are exactly representable in
    float32, so narrowing on write loses nothing.
    """
    path = Path(path)
    if isinstance(m, (ProbMap, LogitMap, PredictionStack)):
        dtype = np.dtype(m.storage_dtype)
        if dtype.str.lstrip("=") not in _FLOAT_DESCR:
            raise InputError(f"storage dtype {dtype} is not a supported float dtype")
        payload = np.ascontiguousarray(m.values.astype(dtype))
    elif isinstance(m, (GroundTruthMask, DecisionMap)):
        payload = np.ascontiguousarray(m.values)
    else:
        raise InputError(f"cannot write object of type {type(m).__name__}")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fp:
        np.lib.format.write_array(fp, payload, version=(1, 0))

    if isinstance(m, PredictionStack):
        meta = {"source_tag": m.source_tag}
        if m.transform_ids is not None:
            meta["transform_ids"] = list(m.transform_ids)
        write_json(meta, Path(str(path) + ".json"))


def write_decision_pgm(decision: DecisionMap, path) -> None:
    """Binary PGM (P5, maxval 255): defer=0 black, accept=255 white."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{decision.width} {decision.height}\n255\n".encode("ascii")
    payload = (decision.values * np.uint8(255)).tobytes()
    path.write_bytes(header + payload)


def write_uncertainty_pgm(unc, path) -> None:
    """Uncertainty as P5 PGM, linearly scaled to [0, 255].

    The scaling bounds are recorded in a sidecar JSON ("<path>.json") so the
    grayscale image can be mapped back to uncertainty units. A constant map
    has no defined scale and is written as all-zero.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = unc.values
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.zeros(values.shape, dtype=np.uint8)
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + scaled.tobytes())
    write_json({"min": lo, "max": hi, "kind": unc.kind}, Path(str(path) + ".json"))


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fp:
            return json.load(fp)
    except OSError as exc:
        raise InputError(f"{path}: cannot read file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc


def write_json(obj, path) -> None:
    """JSON with shortest round-trip float repr (bit-faithful on re-read)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, indent=2)
        fp.write("\n")
