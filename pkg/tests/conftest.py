"""Shared builders for randomized test inputs.

Every builder takes an explicit Generator so each test owns its seed and
failures reproduce from the test body alone.
"""

import numpy as np
import pytest

from deferseg.maps import GroundTruthMask, PredictionStack, ProbMap, UncertaintyMap


def make_prob_plane(rng, h=12, w=10, lo=1e-6, hi=1.0 - 1e-6):
    return ProbMap(rng.uniform(lo, hi, size=(h, w)))


def make_stack(rng, t=5, h=12, w=10, tag="mc_dropout", lo=1e-6, hi=1.0 - 1e-6):
    return PredictionStack(rng.uniform(lo, hi, size=(t, h, w)), source_tag=tag)


def make_gt(rng, h=12, w=10, p=0.3):
    return GroundTruthMask((rng.uniform(size=(h, w)) < p).astype(np.uint8))


def make_unc(rng, h=12, w=10, kind="variance"):
    return UncertaintyMap(rng.uniform(0.0, 0.25, size=(h, w)), kind=kind)


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
