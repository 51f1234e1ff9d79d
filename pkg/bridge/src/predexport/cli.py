"""Command line adapter: raw training dumps in, canonical container out.

The input directory holds plain NPY dumps straight from a sampling
loop: `stack_<id>.npy` (T, H, W) probability planes, `mask_<id>.npy`
or `gt_<id>.npy` binary masks, and optional `logit_<id>.npy` planes.
Ids are free-form text between the prefix and the extension. The
output directory receives the canonical files plus `manifest.json`.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from .export import (
    ExportError,
    collect_entries,
    export_logits,
    export_mask,
    export_stack,
)

__all__ = ["build_parser", "main", "entry"]

_DUMP = re.compile(r"^(?P<prefix>stack|mask|gt|logit)_(?P<id>[A-Za-z0-9._-]+)\.npy$")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predexport",
        description="export per-pass prediction stacks, logits, and masks "
        "into the canonical array container",
    )
    parser.add_argument("--input-dir", required=True, help="directory of raw NPY dumps")
    parser.add_argument("--output-dir", required=True, help="directory for canonical files")
    parser.add_argument(
        "--tag",
        required=True,
        choices=("mc_dropout", "tta", "ensemble", "other"),
        help="how the passes were produced",
    )
    parser.add_argument("--dataset", default=None, help="dataset name (default: input dir name)")
    parser.add_argument(
        "--transforms",
        default=None,
        help="comma-separated transform ids for tta stacks still in transformed orientation",
    )
    return parser


def _scan(input_dir: Path) -> dict[str, dict[str, Path]]:
    if not input_dir.is_dir():
        raise ExportError(f"{input_dir} is not a directory")
    found: dict[str, dict[str, Path]] = {}
    for child in sorted(input_dir.iterdir()):
        match = _DUMP.match(child.name)
        if match is None:
            continue
        prefix = {"gt": "mask"}.get(match["prefix"], match["prefix"])
        roles = found.setdefault(match["id"], {})
        if prefix in roles:
            raise ExportError(f"image {match['id']}: both {roles[prefix].name} and {child.name}")
        roles[prefix] = child
    if not found:
        raise ExportError(f"{input_dir} has no stack_*/mask_*/gt_*/logit_* NPY dumps")
    for image_id, roles in found.items():
        missing = {"stack", "mask"} - set(roles)
        if missing:
            raise ExportError(f"image {image_id}: missing {sorted(missing)} dump(s)")
    return found


def _load(path: Path) -> np.ndarray:
    try:
        return np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ExportError(f"cannot read {path}: {exc}") from exc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    input_dir = Path(args.input_dir)
    output_dir = Path(args.output_dir)
    transforms = args.transforms.split(",") if args.transforms else None
    try:
        found = _scan(input_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for image_id, roles in found.items():
            stack_entry = export_stack(
                _load(roles["stack"]),
                output_dir / f"stack_{image_id}.npy",
                source_tag=args.tag,
                transform_ids=transforms,
            )
            mask_entry = export_mask(_load(roles["mask"]), output_dir / f"gt_{image_id}.npy")
            logits_entry = None
            if "logit" in roles:
                logits_entry = export_logits(
                    _load(roles["logit"]), output_dir / f"logit_{image_id}.npy"
                )
            records.append((image_id, stack_entry, mask_entry, logits_entry))
        manifest = collect_entries(
            records,
            dataset=args.dataset or input_dir.name,
            source_tag=args.tag,
            transform_ids=transforms,
        )
        manifest.write(output_dir / "manifest.json")
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    n_logits = sum(1 for rec in records if rec[3] is not None)
    print(
        f"exported {len(records)} image(s) ({manifest.passes} passes, "
        f"{n_logits} with logits) -> {output_dir}"
    )
    return 0


def entry() -> None:
    raise SystemExit(main())
