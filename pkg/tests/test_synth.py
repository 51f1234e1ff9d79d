"""The generator's planted quantities must be recoverable by measurement.

These tests close the loop: generate with a planted error rate, calibration,
and uncertainty ranking, then confirm the measuring code reads those exact
values back out.
"""

import numpy as np
import pytest

from deferseg.aggregate import mc_aggregate, tta_aggregate
from deferseg.errors import InputError
from deferseg.maps import PredictionStack
from deferseg.metrics import roc_auc
from deferseg.synth import CALIBRATION_MODES, SynthImage, SynthSpec, generate


def test_error_count_is_exact():
    for rate, n in ((0.25, 36), (0.1, 64), (0.05, 100)):
        side = int(np.sqrt(n))
        spec = SynthSpec(height=side, width=side, n_images=3, error_rate=rate, seed=5)
        for im in generate(spec).images:
            assert int(np.count_nonzero(im.error_mask)) == round(rate * n)


def test_error_mask_means_hard_disagreement():
    spec = SynthSpec(height=16, width=16, n_images=2, error_rate=0.2, seed=9)
    for im in generate(spec).images:
        disagree = (im.prob.values > 0.5) != (im.gt.values != 0)
        assert np.array_equal(disagree, im.error_mask)


def test_stack_mean_reproduces_reported_probability():
    spec = SynthSpec(height=24, width=24, n_images=2, error_rate=0.1, passes=6, seed=13)
    for im in generate(spec).images:
        mean, _ = mc_aggregate(im.stack)
        np.testing.assert_allclose(mean.values, im.prob.values, rtol=0.0, atol=1e-12)


def test_stack_variance_matches_planted_variance():
    spec = SynthSpec(height=20, width=20, n_images=2, error_rate=0.1, passes=5, seed=21)
    for im in generate(spec).images:
        tta = PredictionStack(im.stack.values, source_tag="tta")
        _, var_unc, _ = tta_aggregate(tta)
        np.testing.assert_allclose(var_unc.values, im.variance, rtol=1e-9, atol=0.0)


def test_perfect_correlation_separates_errors_pooled():
    spec = SynthSpec(height=32, width=32, n_images=4, error_rate=0.1,
                     unc_error_corr=1.0, seed=3)
    ss = generate(spec)
    u = np.concatenate([im.variance.ravel() for im in ss.images])
    e = np.concatenate([im.error_mask.ravel() for im in ss.images])
    assert u[e].min() > u[~e].max()
    assert roc_auc(u, e.astype(np.uint8)) == 1.0


def test_zero_correlation_gives_chance_auroc():
    spec = SynthSpec(height=512, width=512, n_images=1, error_rate=0.1,
                     unc_error_corr=0.0, passes=0, seed=8)
    im = generate(spec).images[0]
    auroc = roc_auc(im.variance.ravel(), im.error_mask.ravel().astype(np.uint8))
    assert 0.47 <= auroc <= 0.53


def test_intermediate_correlation_tracks_the_target():
    spec = SynthSpec(height=256, width=256, n_images=1, error_rate=0.1,
                     unc_error_corr=0.5, passes=0, seed=15)
    im = generate(spec).images[0]
    auroc = roc_auc(im.variance.ravel(), im.error_mask.ravel().astype(np.uint8))
    assert auroc == pytest.approx((1.0 + 0.5) / 2.0, abs=0.05)


def test_generation_is_deterministic():
    spec = SynthSpec(height=16, width=16, n_images=3, error_rate=0.1, seed=77)
    a, b = generate(spec), generate(spec)
    assert a.fingerprint() == b.fingerprint()
    for x, y in zip(a.images, b.images):
        assert np.array_equal(x.prob.values, y.prob.values)
        assert np.array_equal(x.stack.values, y.stack.values)


def test_images_are_independent_streams():
    # image i is a pure function of (seed, i): shrinking n_images cannot
    # change earlier images
    big = generate(SynthSpec(height=12, width=12, n_images=4, error_rate=0.1, seed=6))
    small = generate(SynthSpec(height=12, width=12, n_images=2, error_rate=0.1, seed=6))
    for x, y in zip(small.images, big.images):
        assert np.array_equal(x.prob.values, y.prob.values)
        assert np.array_equal(x.gt.values, y.gt.values)


def test_frozen_generator_vectors():
    # pinned values guard the documented counter-based RNG contract: if these
    # move, previously published fixtures are no longer reproducible
    spec = SynthSpec(height=6, width=6, n_images=1, error_rate=0.25,
                     unc_error_corr=1.0, passes=4, seed=2024)
    im = generate(spec).images[0]
    assert im.prob.values.ravel()[:4].tolist() == [
        0.28423634036893614,
        0.2639582743937313,
        0.24806782521804505,
        0.39223766064955734,
    ]
    assert im.gt.values[0].tolist() == [0, 0, 0, 0, 1, 1]
    assert im.variance.ravel()[:2].tolist() == [
        4.900174086829269e-09,
        5.460008846257876e-08,
    ]
    assert im.stack.values[0, 0, :2].tolist() == [
        0.28432488571629516,
        0.26425384188439993,
    ]
    assert int(np.count_nonzero(im.error_mask)) == 9


def test_positive_fraction_is_plausible():
    spec = SynthSpec(height=64, width=64, n_images=6, error_rate=0.05, seed=31)
    for im in generate(spec).images:
        frac = float(np.mean(im.gt.values))
        # prediction mask keeps 10-15% positives; truth differs on <= 5%
        assert 0.05 <= frac <= 0.20


def test_transformed_stacks_round_trip_through_tta():
    spec = SynthSpec(height=16, width=16, n_images=2, error_rate=0.1, passes=4,
                     seed=19, emit_transformed=True)
    for im in generate(spec).images:
        assert im.stack.source_tag == "tta"
        assert im.stack.transform_ids is not None
        mean, _, _ = tta_aggregate(im.stack)
        np.testing.assert_allclose(mean.values, im.prob.values, rtol=0.0, atol=1e-12)


def test_no_stack_mode():
    spec = SynthSpec(height=8, width=8, n_images=1, error_rate=0.1, passes=0, seed=1)
    im = generate(spec).images[0]
    assert im.stack is None
    assert isinstance(im, SynthImage)


def test_calibration_modes_registry():
    assert CALIBRATION_MODES == ("calibrated", "overconfident", "underconfident")


def test_spec_validation():
    with pytest.raises(InputError, match="error_rate"):
        SynthSpec(error_rate=0.0)
    with pytest.raises(InputError, match="error_rate"):
        SynthSpec(error_rate=0.5)
    with pytest.raises(InputError, match="unc_error_corr"):
        SynthSpec(unc_error_corr=1.5)
    with pytest.raises(InputError, match="calibration_mode"):
        SynthSpec(calibration_mode="sharpened")
    with pytest.raises(InputError, match="t_plant > 1"):
        SynthSpec(calibration_mode="overconfident", t_plant=0.5)
    with pytest.raises(InputError, match="t_plant < 1"):
        SynthSpec(calibration_mode="underconfident", t_plant=2.0)
    with pytest.raises(InputError, match="passes"):
        SynthSpec(passes=1)
    with pytest.raises(InputError, match="square"):
        SynthSpec(height=8, width=10, passes=4, emit_transformed=True)
    with pytest.raises(InputError, match="seed"):
        SynthSpec(seed=-1)


def test_spec_json_round_trip():
    spec = SynthSpec(height=8, width=8, error_rate=0.2,
                     calibration_mode="underconfident", t_plant=0.25, seed=9)
    back = SynthSpec.from_json_dict(spec.to_json_dict())
    assert back == spec
    with pytest.raises(InputError, match="unknown"):
        SynthSpec.from_json_dict({"height": 8, "sigma": 2})


def test_reported_logits_scale_with_planted_temperature():
    spec = SynthSpec(height=16, width=16, n_images=1, error_rate=0.1, seed=44,
                     calibration_mode="overconfident", t_plant=2.0)
    im = generate(spec).images[0]
    # rebuild the calibrated logit from the planted margins and check the
    # reported logit is exactly the planted multiple of it
    signed = im.margins * (2.0 * (im.prob.values > 0.5) - 1.0)
    z_cal = np.log(0.5 + signed) - np.log(0.5 - signed)
    assert np.array_equal(im.logits.values, 2.0 * z_cal)
