"""Base prior maps: pinned arithmetic, range/idempotence properties,
generator-level sanity."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pgma.affinity import cross_affinity, masked_flatten
from pgma.priors import (
    minmax_norm,
    support_clip_prior,
    support_gt_prior,
    textual_prior,
    visual_prior,
)
from pgma.synth import SynthConfig, synth_episode

from .oracles import affinity_double_loop


def test_minmax_pinned_values():
    np.testing.assert_allclose(
        minmax_norm(np.array([0.2, 0.6, 1.0])), [0.0, 0.5, 1.0], atol=1e-7
    )
    np.testing.assert_array_equal(minmax_norm(np.full((3, 3), 4.2)), np.zeros((3, 3)))
    already = np.array([0.0, 0.25, 1.0])
    np.testing.assert_allclose(minmax_norm(already), already, atol=1e-7)


@given(
    hnp.arrays(
        np.float64,
        hnp.array_shapes(min_dims=1, max_dims=2, min_side=2, max_side=8),
        elements=st.floats(-100, 100),
    )
)
@settings(max_examples=80, deadline=None)
def test_minmax_range_and_idempotence(m):
    out = minmax_norm(m)
    assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-12
    # the epsilon guard shifts the result by ~eps/span, so idempotence is
    # only meaningful when the span is not vanishing
    assume(float(m.max() - m.min()) > 1e-3)
    np.testing.assert_allclose(minmax_norm(out), out, atol=1e-4)


def test_textual_prior_two_by_two_hand_case():
    # one pixel aligned with the text vector, the rest orthogonal
    t = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)
    cv = np.zeros((2, 2, 4), dtype=np.float32)
    cv[0, 0] = t
    cv[0, 1] = [0, 1, 0, 0]
    cv[1, 0] = [0, 0, 1, 0]
    cv[1, 1] = [0, 0, 0, 1]
    prior = textual_prior(cv, t)
    np.testing.assert_allclose(prior, [[1.0, 0.0], [0.0, 0.0]], atol=1e-6)


def test_textual_prior_zero_pixel_and_zero_text():
    cv = np.zeros((2, 2, 3), dtype=np.float32)
    cv[0, 0] = [1, 0, 0]
    cv[1, 1] = [-1, 0, 0]
    prior = textual_prior(cv, np.array([1.0, 0, 0]))
    # zero-norm pixels sit at cosine 0, between the aligned and opposed ones
    np.testing.assert_allclose(prior, [[1.0, 0.5], [0.5, 0.0]], atol=1e-6)
    with pytest.raises(ValueError, match="zero norm"):
        textual_prior(cv, np.zeros(3))


def test_textual_prior_scale_invariant_in_text():
    rng = np.random.default_rng(5)
    cv = rng.standard_normal((4, 5, 8)).astype(np.float32)
    t = rng.standard_normal(8).astype(np.float32)
    np.testing.assert_allclose(
        textual_prior(cv, t), textual_prior(cv, 3.0 * t), atol=1e-6
    )


def test_textual_prior_upsamples_when_asked():
    rng = np.random.default_rng(7)
    cv = rng.standard_normal((4, 4, 6)).astype(np.float32)
    t = rng.standard_normal(6).astype(np.float32)
    out = textual_prior(cv, t, out_hw=(9, 9))
    assert out.shape == (9, 9)
    assert out.min() >= -1e-6 and out.max() <= 1 + 1e-6


def test_noise_free_episode_separates_foreground():
    cfg = SynthConfig(noise=0.0)
    ep = synth_episode(cfg, class_id=8, seed=3, shots=0)
    side = cfg.clip_side
    prior = textual_prior(ep.query.clip_visual, ep.text_embed)
    from pgma.synth import _downsample

    fg = _downsample(ep.query_mask.astype(np.float64), side) > 0.5
    assert prior[fg].mean() > prior[~fg].mean()


def test_visual_prior_takes_column_max():
    a_sq = np.array([[0.9, 0.2], [0.1, 0.4]])
    prior = visual_prior(a_sq, (1, 2))
    # raw values (0.9, 0.4) min-max to (1, 0)
    np.testing.assert_allclose(prior, [[1.0, 0.0]], atol=1e-6)


def test_visual_prior_zero_affinity_yields_zero_map():
    out = visual_prior(np.zeros((4, 4)), (2, 2))
    np.testing.assert_array_equal(out, np.zeros((2, 2)))


def test_visual_prior_support_permutation_invariant():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((6, 4))
    perm = rng.permutation(6)
    np.testing.assert_array_equal(visual_prior(a, (2, 2)), visual_prior(a[perm], (2, 2)))


def test_identical_images_make_selfmatch_the_nearest_neighbor():
    # argmax over the support axis must agree with a brute-force NN search
    rng = np.random.default_rng(11)
    f = rng.standard_normal((4, 4, 8)).astype(np.float32)
    flat = masked_flatten(f)
    a_sq = cross_affinity(flat, flat)
    oracle = affinity_double_loop(flat.astype(np.float64), flat.astype(np.float64))
    np.testing.assert_array_equal(np.argmax(a_sq, axis=0), np.argmax(oracle, axis=0))
    np.testing.assert_array_equal(np.argmax(a_sq, axis=0), np.arange(16))


def test_support_gt_prior_constants_and_checkerboard():
    ones = np.ones((8, 8), dtype=np.uint8)
    for grid in [(8, 8), (4, 4), (2, 2)]:
        np.testing.assert_allclose(support_gt_prior(ones, grid), 1.0, atol=1e-6)
    checker = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    np.testing.assert_allclose(support_gt_prior(checker, (1, 1)), [[0.5]], atol=1e-7)


def test_support_mask_survives_downsample_roundtrip():
    """Blob masks keep IoU >= 0.8 after a 16^2 round trip."""
    from pgma.model import _resize_prior

    cfg = SynthConfig()
    kept = []
    for seed in range(30):
        ep = synth_episode(cfg, class_id=seed % 20, seed=500 + seed, shots=0)
        m = ep.query_mask
        down = support_gt_prior(m, (16, 16))
        back = _resize_prior(down, m.shape) > 0.5
        inter = np.logical_and(back, m).sum()
        union = np.logical_or(back, m).sum()
        kept.append(inter / union)
    assert np.mean(kept) >= 0.8, f"mean round-trip IoU {np.mean(kept):.3f}"


def test_support_clip_prior_matches_textual_on_grid():
    rng = np.random.default_rng(3)
    cv = rng.standard_normal((4, 4, 6)).astype(np.float32)
    t = rng.standard_normal(6).astype(np.float32)
    np.testing.assert_array_equal(
        support_clip_prior(cv, t, (4, 4)), textual_prior(cv, t)
    )
    assert support_clip_prior(cv, t, (8, 8)).shape == (8, 8)
