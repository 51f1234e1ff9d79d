"""Pure-numpy kernel backend.

Mirrors the Cython kernels operation-for-operation, including summation order
(plane-by-plane accumulation), so both backends are deterministic run-to-run
and agree with each other to ulp-scale differences in the log evaluations.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def entropy_flat(p: np.ndarray) -> np.ndarray:
    """Binary entropy in nats, elementwise; 0*ln(0) = 0 at the endpoints."""
    out = np.zeros_like(p)
    interior = (p > 0.0) & (p < 1.0)
    q = p[interior]
    out[interior] = -(q * np.log(q) + (1.0 - q) * np.log1p(-q))
    return out


def mc_moments(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel mean and mean per-pass entropy of a (T, N) stack."""
    n_passes = stack.shape[0]
    acc = np.zeros(stack.shape[1], dtype=np.float64)
    ent = np.zeros(stack.shape[1], dtype=np.float64)
    for t in range(n_passes):
        plane = stack[t]
        acc += plane
        ent += entropy_flat(plane)
    return acc / n_passes, ent / n_passes


def tta_moments(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel mean and population variance (divisor K) of a (K, N) stack."""
    n_passes = stack.shape[0]
    acc = np.zeros(stack.shape[1], dtype=np.float64)
    for k in range(n_passes):
        acc += stack[k]
    mean = acc / n_passes
    sq = np.zeros(stack.shape[1], dtype=np.float64)
    for k in range(n_passes):
        d = stack[k] - mean
        sq += d * d
    return mean, sq / n_passes
