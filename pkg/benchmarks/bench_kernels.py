"""Compare the compiled kernel backend against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--passes 30] [--side 512] [--repeats 5]

Loads each backend module directly so both can be timed in one process, and
checks that their outputs agree to float precision before reporting timings.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from deferseg._kernels import _numpy


def _load_cython():
    try:
        from deferseg._kernels import _cykernels
    except ImportError:
        return None
    return _cykernels


def _time(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--passes", type=int, default=30)
    parser.add_argument("--side", type=int, default=512)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cy = _load_cython()
    if cy is None:
        print("compiled backend not available; nothing to compare")
        return 1

    rng = np.random.Generator(np.random.Philox(key=np.array([args.seed, 0], dtype=np.uint64)))
    stack = rng.uniform(0.001, 0.999, size=(args.passes, args.side * args.side))
    plane = stack[0].copy()

    for name, a, b in [
        ("entropy_flat", _numpy.entropy_flat(plane), cy.entropy_flat(plane)),
        ("mc_moments.mean", _numpy.mc_moments(stack)[0], cy.mc_moments(stack)[0]),
        ("mc_moments.ent", _numpy.mc_moments(stack)[1], cy.mc_moments(stack)[1]),
        ("tta_moments.var", _numpy.tta_moments(stack)[1], cy.tta_moments(stack)[1]),
    ]:
        worst = float(np.max(np.abs(a - b)))
        status = "ok" if worst <= 1e-12 else "MISMATCH"
        print(f"agreement {name:<16} max |diff| = {worst:.3e}  {status}")
        if worst > 1e-12:
            return 1

    print(f"\nstack: {args.passes} passes x {args.side}x{args.side} float64, "
          f"best of {args.repeats}")
    rows = [
        ("entropy_flat", (plane,)),
        ("mc_moments", (stack,)),
        ("tta_moments", (stack,)),
    ]
    for name, call_args in rows:
        t_np = _time(getattr(_numpy, name), *call_args, repeats=args.repeats)
        t_cy = _time(getattr(cy, name), *call_args, repeats=args.repeats)
        print(f"{name:<14} numpy {t_np * 1e3:8.2f} ms   cython {t_cy * 1e3:8.2f} ms   "
              f"speedup {t_np / t_cy:5.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
