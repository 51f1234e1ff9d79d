"""Kernel backend selection.

The compiled Cython kernels are preferred when the extension built; the numpy
implementations are a drop-in fallback. DEFERSEG_KERNELS forces a choice:

    auto   (default) compiled if available, else numpy
    cython compiled, ImportError if the extension is missing
    numpy  fallback, even when the extension is available

The active backend name is exported as BACKEND and recorded in evaluation
reports, because bitwise reproducibility is only promised within one backend.
"""

from __future__ import annotations

import os

_requested = os.environ.get("DEFERSEG_KERNELS", "auto").lower()
if _requested not in {"auto", "cython", "numpy"}:
    raise ImportError(
        f"DEFERSEG_KERNELS must be auto, cython or numpy, got {_requested!r}"
    )

if _requested == "numpy":
    from . import _numpy as _impl
else:
    try:
        from . import _cykernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise
        from . import _numpy as _impl

BACKEND: str = _impl.BACKEND_NAME
entropy_flat = _impl.entropy_flat
mc_moments = _impl.mc_moments
tta_moments = _impl.tta_moments

__all__ = ["BACKEND", "entropy_flat", "mc_moments", "tta_moments"]
