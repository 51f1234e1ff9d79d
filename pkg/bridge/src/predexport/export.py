"""Export model outputs into the canonical array container.

The consumer side of the contract reads plain NPY files with JSON
sidecars and a manifest; this module is the producer side. It validates
raw training-loop dumps (per-pass probability planes, logits, binary
masks), writes them in canonical form, and records a checksummed
manifest so a reader can prove the files arrived intact. It computes
nothing downstream: no aggregation, no calibration, no metrics.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "MANIFEST_SCHEMA",
    "SOURCE_TAGS",
    "TRANSFORM_IDS",
    "ExportError",
    "ExportManifest",
    "ExportWarning",
    "export_logits",
    "export_mask",
    "export_stack",
    "file_sha256",
    "verify_manifest",
]

MANIFEST_SCHEMA = "predexport-manifest/1"

# Vocabulary shared with the consumer. Tags say how the passes were
# produced; transform ids may only accompany "tta" and mean the planes
# are still in transformed orientation.
SOURCE_TAGS = ("mc_dropout", "tta", "ensemble", "other")
TRANSFORM_IDS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")

# float16 dumps widen losslessly to float32; float32/float64 are stored
# as-is so every source value survives bit-exact at its own precision.
_STORAGE_DTYPE = {
    np.dtype(np.float16): np.dtype("<f4"),
    np.dtype(np.float32): np.dtype("<f4"),
    np.dtype(np.float64): np.dtype("<f8"),
}


class ExportError(ValueError):
    """Raised when model output cannot be exported as handed over."""


class ExportWarning(UserWarning):
    """Raised when an export succeeds but the input needed normalizing."""


def _write_npy(path: Path, values: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, np.ascontiguousarray(values), version=(1, 0))


def _write_sidecar(path: Path, meta: Mapping[str, object]) -> None:
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(dict(meta), indent=2, sort_keys=True) + "\n")


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _entry(path: Path, values: np.ndarray) -> dict:
    return {
        "path": path.name,
        "sha256": file_sha256(path),
        "shape": [int(n) for n in values.shape],
        "dtype": values.dtype.str,
    }


def _as_planes(passes: object, label: str) -> np.ndarray:
    """Stack per-pass planes into one (T, H, W) array, validating shape."""
    if isinstance(passes, np.ndarray):
        if passes.ndim != 3:
            raise ExportError(f"{label}: expected rank-3 (passes, H, W), got rank {passes.ndim}")
        planes = [passes[k] for k in range(passes.shape[0])]
    else:
        planes = [np.asarray(p) for p in passes]
    if not planes:
        raise ExportError(f"{label}: no passes given")
    for k, plane in enumerate(planes):
        if plane.ndim != 2:
            raise ExportError(f"{label}: pass {k} has rank {plane.ndim}, expected 2")
        if plane.shape != planes[0].shape:
            raise ExportError(
                f"{label}: pass {k} shape {plane.shape} differs from pass 0 "
                f"shape {planes[0].shape}"
            )
        if plane.dtype != planes[0].dtype:
            raise ExportError(
                f"{label}: pass {k} dtype {plane.dtype} differs from pass 0 "
                f"dtype {planes[0].dtype}"
            )
    return np.stack(planes, axis=0)


def _storage_dtype(dtype: np.dtype, label: str) -> np.dtype:
    stored = _STORAGE_DTYPE.get(np.dtype(dtype))
    if stored is None:
        raise ExportError(
            f"{label}: dtype {np.dtype(dtype).name} is not a float type; "
            "export the raw model output, not a quantized copy"
        )
    return stored


def _check_finite(values: np.ndarray, label: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        flat = int(np.flatnonzero(bad)[0])
        where = np.unravel_index(flat, values.shape)
        raise ExportError(
            f"{label}: {int(bad.sum())} non-finite value(s), first at index "
            f"{tuple(int(i) for i in where)}"
        )


def _check_transform_ids(ids: Sequence[str], passes: int, source_tag: str) -> tuple[str, ...]:
    ids = tuple(str(t) for t in ids)
    if source_tag != "tta":
        raise ExportError("transform_ids only apply to source_tag='tta'")
    if len(ids) != passes:
        raise ExportError(f"{len(ids)} transform_ids for {passes} passes")
    unknown = [t for t in ids if t not in TRANSFORM_IDS]
    if unknown:
        raise ExportError(f"unknown transform ids {unknown}, expected from {TRANSFORM_IDS}")
    if len(set(ids)) != len(ids):
        raise ExportError("duplicate transform ids")
    return ids


def export_stack(
    passes: object,
    path: str | Path,
    *,
    source_tag: str,
    transform_ids: Sequence[str] | None = None,
) -> dict:
    """Write per-pass probability planes as one canonical stack file.

    `passes` is a (T, H, W) float array or a sequence of (H, W) planes.
    Values must be finite probabilities in [0, 1]; float32 and float64
    are stored at source precision, float16 widens to float32. A JSON
    sidecar records the source tag (and transform ids for TTA stacks,
    which stay in transformed orientation). Returns the manifest entry
    for the written file.
    """
    path = Path(path)
    label = path.name
    stacked = _as_planes(passes, label)
    stored = _storage_dtype(stacked.dtype, label)
    _check_finite(stacked, label)
    lo, hi = float(stacked.min()), float(stacked.max())
    if lo < 0.0 or hi > 1.0:
        raise ExportError(
            f"{label}: values span [{lo}, {hi}], expected probabilities in [0, 1]; "
            "pass post-sigmoid planes here and logits to export_logits"
        )
    if source_tag not in SOURCE_TAGS:
        raise ExportError(f"{label}: unknown source_tag {source_tag!r}, expected one of {SOURCE_TAGS}")
    meta: dict[str, object] = {"source_tag": source_tag}
    if transform_ids is not None:
        ids = _check_transform_ids(transform_ids, stacked.shape[0], source_tag)
        rotates = any(t in ("rot90", "rot270") for t in ids)
        if rotates and stacked.shape[1] != stacked.shape[2]:
            raise ExportError(f"{label}: rotation transform ids require square planes")
        meta["transform_ids"] = list(ids)
    values = stacked.astype(stored, copy=False)
    _write_npy(path, values)
    _write_sidecar(path, meta)
    entry = _entry(path, values)
    entry["passes"] = int(values.shape[0])
    if transform_ids is not None:
        entry["transform_ids"] = list(meta["transform_ids"])  # type: ignore[arg-type]
    return entry


def export_logits(values: object, path: str | Path) -> dict:
    """Write one plane of raw pre-sigmoid scores; finite floats, any range."""
    path = Path(path)
    label = path.name
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ExportError(f"{label}: expected rank-2 (H, W), got rank {arr.ndim}")
    stored = _storage_dtype(arr.dtype, label)
    _check_finite(arr, label)
    out = arr.astype(stored, copy=False)
    _write_npy(path, out)
    return _entry(path, out)


def export_mask(mask: object, path: str | Path) -> dict:
    """Write a binary ground-truth mask as canonical uint8 {0, 1}.

    Accepts bool or integer planes with values {0, 1}; a {0, 255} plane
    is normalized with a warning since many annotation tools save white
    foreground. Multi-channel input (e.g. RGB) is rejected rather than
    guessed at. Returns the manifest entry for the written file.
    """
    path = Path(path)
    label = path.name
    arr = np.asarray(mask)
    if arr.ndim == 3:
        raise ExportError(
            f"{label}: got a {arr.shape[2]}-channel image; collapse to a single "
            "binary plane before export"
        )
    if arr.ndim != 2:
        raise ExportError(f"{label}: expected rank-2 (H, W), got rank {arr.ndim}")
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if not np.issubdtype(arr.dtype, np.integer):
        raise ExportError(f"{label}: dtype {arr.dtype.name} is not binary; threshold it explicitly")
    levels = np.unique(arr)
    if set(levels.tolist()) <= {0, 255} and 255 in levels:
        warnings.warn(f"{label}: mask uses {{0, 255}}, normalizing to {{0, 1}}", ExportWarning)
        arr = (arr == 255).astype(np.uint8)
    elif not set(levels.tolist()) <= {0, 1}:
        raise ExportError(
            f"{label}: mask has levels {levels.tolist()[:8]}, expected binary {{0, 1}}"
        )
    out = arr.astype(np.uint8, copy=False)
    _write_npy(path, out)
    return _entry(path, out)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ExportError(message)


@dataclass(frozen=True)
class ExportManifest:
    """Inventory of one export run: what was written, for whom, intact.

    Each image record carries the file entries (path relative to the
    manifest, sha256, shape, dtype) for its stack and mask, plus logits
    when exported. `passes` is the run-wide number of stack planes and
    every stack entry must agree with it.
    """

    dataset: str
    source_tag: str
    passes: int
    images: tuple[dict, ...]
    transform_ids: tuple[str, ...] | None = None
    schema: str = field(default=MANIFEST_SCHEMA)

    def __post_init__(self):
        _require(self.schema == MANIFEST_SCHEMA, f"unknown manifest schema {self.schema!r}")
        _require(bool(self.dataset), "manifest needs a dataset name")
        _require(
            self.source_tag in SOURCE_TAGS,
            f"unknown source_tag {self.source_tag!r}, expected one of {SOURCE_TAGS}",
        )
        _require(self.passes >= 1, f"passes must be >= 1, got {self.passes}")
        object.__setattr__(self, "images", tuple(dict(rec) for rec in self.images))
        _require(len(self.images) >= 1, "manifest lists no images")
        if self.transform_ids is not None:
            ids = _check_transform_ids(self.transform_ids, self.passes, self.source_tag)
            object.__setattr__(self, "transform_ids", ids)
        seen: set[str] = set()
        for rec in self.images:
            _require(set(rec) == {"id", "files"}, f"image record keys {sorted(rec)} != ['files', 'id']")
            image_id = rec["id"]
            _require(
                isinstance(image_id, str) and bool(image_id),
                f"image id {image_id!r} is not a nonempty string",
            )
            _require(image_id not in seen, f"duplicate image id {image_id!r}")
            seen.add(image_id)
            files = rec["files"]
            _require(
                {"stack", "mask"} <= set(files) <= {"stack", "mask", "logits"},
                f"image {image_id}: file roles {sorted(files)}, expected stack and mask "
                "with optional logits",
            )
            for role, entry in files.items():
                missing = {"path", "sha256", "shape", "dtype"} - set(entry)
                _require(not missing, f"image {image_id}: {role} entry missing {sorted(missing)}")
            stack_entry, mask_entry = files["stack"], files["mask"]
            _require(
                int(stack_entry.get("passes", -1)) == self.passes,
                f"image {image_id}: stack has {stack_entry.get('passes')} passes, "
                f"manifest says {self.passes}",
            )
            plane = list(stack_entry["shape"])[1:]
            _require(
                list(mask_entry["shape"]) == plane,
                f"image {image_id}: mask shape {mask_entry['shape']} != stack plane {plane}",
            )
            if "logits" in files:
                _require(
                    list(files["logits"]["shape"]) == plane,
                    f"image {image_id}: logits shape {files['logits']['shape']} "
                    f"!= stack plane {plane}",
                )

    def to_json_dict(self) -> dict:
        out: dict[str, object] = {
            "schema": self.schema,
            "dataset": self.dataset,
            "source_tag": self.source_tag,
            "passes": self.passes,
            "images": [dict(rec) for rec in self.images],
        }
        if self.transform_ids is not None:
            out["transform_ids"] = list(self.transform_ids)
        return out

    @classmethod
    def from_json_dict(cls, data: Mapping[str, object]) -> "ExportManifest":
        allowed = {"schema", "dataset", "source_tag", "passes", "images", "transform_ids"}
        unknown = set(data) - allowed
        _require(not unknown, f"unknown manifest keys {sorted(unknown)}")
        missing = {"schema", "dataset", "source_tag", "passes", "images"} - set(data)
        _require(not missing, f"manifest missing keys {sorted(missing)}")
        ids = data.get("transform_ids")
        return cls(
            dataset=str(data["dataset"]),
            source_tag=str(data["source_tag"]),
            passes=int(data["passes"]),  # type: ignore[call-overload]
            images=tuple(data["images"]),  # type: ignore[arg-type]
            transform_ids=tuple(str(t) for t in ids) if ids is not None else None,  # type: ignore[union-attr]
            schema=str(data["schema"]),
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "ExportManifest":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ExportError(f"cannot read manifest {path}: {exc}") from exc
        return cls.from_json_dict(data)


def _verify_entry(base: Path, image_id: str, role: str, entry: Mapping[str, object]) -> None:
    path = base / str(entry["path"])
    _require(path.exists(), f"image {image_id}: {role} file {entry['path']} is missing")
    digest = file_sha256(path)
    _require(
        digest == entry["sha256"],
        f"image {image_id}: {role} file {entry['path']} checksum mismatch "
        f"(manifest {str(entry['sha256'])[:12]}.., file {digest[:12]}..)",
    )
    arr = np.load(path, allow_pickle=False)
    _require(
        list(arr.shape) == list(entry["shape"]),  # type: ignore[arg-type]
        f"image {image_id}: {role} file {entry['path']} shape {list(arr.shape)} "
        f"!= manifest {entry['shape']}",
    )
    _require(
        arr.dtype.str == entry["dtype"],
        f"image {image_id}: {role} file {entry['path']} dtype {arr.dtype.str} "
        f"!= manifest {entry['dtype']}",
    )


def verify_manifest(manifest: ExportManifest | str | Path, base_dir: str | Path | None = None) -> int:
    """Check every listed file exists, matches its checksum, shape, and dtype.

    `base_dir` defaults to the manifest's own directory when a path is
    given. Returns the number of files verified; raises ExportError on
    the first discrepancy.
    """
    if not isinstance(manifest, ExportManifest):
        path = Path(manifest)
        if base_dir is None:
            base_dir = path.parent
        manifest = ExportManifest.read(path)
    _require(base_dir is not None, "verify_manifest needs base_dir when given a manifest object")
    base = Path(base_dir)  # type: ignore[arg-type]
    checked = 0
    for rec in manifest.images:
        for role, entry in rec["files"].items():
            _verify_entry(base, str(rec["id"]), role, entry)
            checked += 1
    return checked


def collect_entries(
    records: Iterable[tuple[str, dict, dict, dict | None]],
    *,
    dataset: str,
    source_tag: str,
    transform_ids: Sequence[str] | None = None,
) -> ExportManifest:
    """Assemble image records (id, stack entry, mask entry, logits entry) into a manifest."""
    images = []
    passes = None
    for image_id, stack_entry, mask_entry, logits_entry in records:
        if passes is None:
            passes = int(stack_entry["passes"])
        files = {"stack": stack_entry, "mask": mask_entry}
        if logits_entry is not None:
            files["logits"] = logits_entry
        images.append({"id": image_id, "files": files})
    _require(passes is not None, "no images to record")
    return ExportManifest(
        dataset=dataset,
        source_tag=source_tag,
        passes=int(passes),  # type: ignore[arg-type]
        images=tuple(images),
        transform_ids=tuple(transform_ids) if transform_ids is not None else None,
    )
