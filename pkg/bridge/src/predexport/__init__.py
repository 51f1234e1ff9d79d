"""predexport: push model outputs into the canonical array container.

Producer-side bridge for dense binary predictors: validates per-pass
probability stacks, logits, and ground-truth masks from a training
environment, writes them as NPY files with JSON sidecars, and records
a sha256-checksummed manifest. Consumers read the files; this package
never computes uncertainty, calibration, or metrics.
"""

from .export import (
    MANIFEST_SCHEMA,
    SOURCE_TAGS,
    TRANSFORM_IDS,
    ExportError,
    ExportManifest,
    ExportWarning,
    collect_entries,
    export_logits,
    export_mask,
    export_stack,
    file_sha256,
    verify_manifest,
)

__version__ = "1.0.0"

__all__ = [
    "MANIFEST_SCHEMA",
    "SOURCE_TAGS",
    "TRANSFORM_IDS",
    "ExportError",
    "ExportManifest",
    "ExportWarning",
    "__version__",
    "collect_entries",
    "export_logits",
    "export_mask",
    "export_stack",
    "file_sha256",
    "verify_manifest",
]
