"""Flow preprocessing: quantile suppression, area downsampling, the
frame-difference fallback, and the full pipeline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flaming.flowproc import (
    FlowMap,
    downsample_area,
    flow_pipeline,
    frame_difference_flow,
    quantile_suppress_normalize,
)


def test_quantile_suppress_basic(rng):
    raw = rng.random((10, 12)) * 4.0
    out = quantile_suppress_normalize(raw)
    assert out.shape == raw.shape
    assert out.min() >= 0.0
    assert out.max() == pytest.approx(1.0)


def test_quantile_suppress_zeroes_the_background(rng):
    # 100 pixels: 90 at a low plateau, 10 hot — the plateau must vanish
    raw = np.full(100, 0.5)
    raw[:10] = 5.0
    out = quantile_suppress_normalize(raw.reshape(10, 10))
    assert (out.reshape(-1)[10:] == 0.0).all()
    assert out.max() == pytest.approx(1.0)


def test_quantile_suppress_uniform_offset_invariance(rng):
    """Whole-frame motion (camera jitter) is an additive magnitude offset;
    suppression must remove it exactly."""
    base = rng.random((8, 8)) * 2.0
    a = quantile_suppress_normalize(base)
    b = quantile_suppress_normalize(base + 3.7)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_quantile_suppress_flat_frame_is_all_zero():
    out = quantile_suppress_normalize(np.full((6, 6), 2.5))
    np.testing.assert_array_equal(out, np.zeros((6, 6)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quantile_survivor_fraction_bounded(seed):
    """At most ~15% of pixels survive suppression (ties can push slightly
    past the nominal cut, never below it by construction)."""
    rng = np.random.default_rng(seed)
    raw = rng.random(400)
    out = quantile_suppress_normalize(raw.reshape(20, 20))
    frac = (out > 0).mean()
    assert frac <= 0.16


def test_downsample_area_is_block_mean(rng):
    x = rng.random((8, 12))
    out = downsample_area(x, 4, 6)
    expect = x.reshape(4, 2, 6, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_downsample_area_preserves_total_mass(rng):
    x = rng.random((16, 24))
    out = downsample_area(x, 4, 6)
    assert out.mean() == pytest.approx(x.mean())


def test_frame_difference_flow_shapes_and_values():
    frames = np.zeros((3, 4, 4, 3))
    frames[1, 2, 2] = 1.0  # a pixel lights up between frames 0 and 1
    flow = frame_difference_flow(frames)
    assert flow.shape == (3, 4, 4)
    assert flow[1, 2, 2] > 0.0
    assert flow[1, 0, 0] == 0.0
    # first frame pairs with itself forward
    assert flow[0].sum() > 0.0


def test_frame_difference_flow_static_video_is_zero():
    frames = np.ones((4, 5, 5, 3)) * 0.3
    np.testing.assert_array_equal(frame_difference_flow(frames),
                                  np.zeros((4, 5, 5)))


def test_flow_pipeline_output_contract(rng):
    raw = rng.random((5, 32, 48)) * 3.0
    fm = flow_pipeline(raw, 8, 12)
    assert isinstance(fm, FlowMap)
    assert fm.values.shape == (5, 96)
    assert fm.H == 8 and fm.W == 12
    assert fm.values.min() >= 0.0
    for t in range(5):
        peak = fm.values[t].max()
        assert peak == pytest.approx(1.0) or peak == 0.0


def test_flow_pipeline_frame_accessor(rng):
    raw = rng.random((2, 16, 16))
    fm = flow_pipeline(raw, 4, 4)
    np.testing.assert_array_equal(fm.frame(1), fm.values[1].reshape(4, 4))


def test_flow_pipeline_clip_normalization(rng):
    raw = rng.random((4, 16, 16))
    raw[2] *= 10.0  # one frame dominates
    per_frame = flow_pipeline(raw, 4, 4)
    per_clip = flow_pipeline(raw, 4, 4, per_clip_norm=True)
    # per-frame: every nonempty frame peaks at 1; per-clip: only the hot one
    assert per_frame.values[0].max() == pytest.approx(1.0)
    assert per_clip.values.max() == pytest.approx(1.0)
    assert per_clip.values[0].max() < 1.0


def test_flow_pipeline_rejects_bad_grid(rng):
    raw = rng.random((2, 15, 15))
    with pytest.raises(Exception):
        flow_pipeline(raw, 4, 4)  # 15 not divisible by 4
