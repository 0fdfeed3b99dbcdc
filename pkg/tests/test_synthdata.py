"""Scene generator: determinism, geometric invariants, the mirror relabeling,
and the on-disk dataset format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flaming.numerics import TensorIOError
from flaming.synthdata import (
    CLASS_NAMES,
    DatasetError,
    GenConfig,
    GenerationError,
    TracksUnavailableError,
    VideoSample,
    flip_class,
    generate_dataset,
    generate_sample,
    horizontal_flip,
    key_attention_masks,
    read_dataset,
    segment_indices,
    tracks_disabled,
    write_dataset,
)


def test_eight_distinct_class_names():
    assert len(CLASS_NAMES) == 8
    assert len(set(CLASS_NAMES)) == 8


def test_flip_class_is_involution():
    for c in range(len(CLASS_NAMES)):
        assert flip_class(flip_class(c)) == c


def test_flip_class_swaps_directional_pairs():
    swapped = {c for c in range(len(CLASS_NAMES)) if flip_class(c) != c}
    names = {CLASS_NAMES[c] for c in swapped}
    assert names == {"converge-left", "converge-right", "cross-l2r", "cross-r2l"}


def test_generate_sample_shapes(tiny_gen_cfg):
    s = generate_sample(3, tiny_gen_cfg, seed=5)
    T, H, W = tiny_gen_cfg.T_raw, tiny_gen_cfg.H0, tiny_gen_cfg.W0
    assert s.frames.shape == (T, H, W, 3)
    assert s.gt_flow.shape == (T, H, W)
    assert s.camera_jitter.shape == (T, 2)
    assert s.label == 3


def test_frames_in_unit_range(tiny_gen_cfg):
    s = generate_sample(1, tiny_gen_cfg, seed=2)
    assert s.frames.min() >= 0.0 and s.frames.max() <= 1.0


def test_flow_nonnegative_and_moving(tiny_gen_cfg):
    s = generate_sample(2, tiny_gen_cfg, seed=3)
    assert s.gt_flow.min() >= 0.0
    # something moves in every class
    assert s.gt_flow.max() > 0.0


def test_generation_deterministic(tiny_gen_cfg):
    a = generate_sample(4, tiny_gen_cfg, seed=11)
    b = generate_sample(4, tiny_gen_cfg, seed=11)
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(a.gt_flow, b.gt_flow)
    np.testing.assert_array_equal(a.camera_jitter, b.camera_jitter)


def test_different_seeds_differ(tiny_gen_cfg):
    a = generate_sample(4, tiny_gen_cfg, seed=1)
    b = generate_sample(4, tiny_gen_cfg, seed=2)
    assert np.abs(a.frames - b.frames).max() > 0.0


@settings(max_examples=8, deadline=None)
@given(label=st.integers(0, 7), seed=st.integers(0, 10_000))
def test_track_invariants_hold(label, seed):
    cfg = GenConfig(H0=32, W0=48, T_raw=6, actor_min=3, actor_max=4,
                    jitter_amplitude=0.2, seed=0)
    s = generate_sample(label, cfg, seed=seed)
    tracks = s.tracks_for_eval()
    assert any(tr.is_key for tr in tracks)
    lo = np.array([0.0, 0.0])
    hi = np.array([cfg.W0, cfg.H0])
    for tr in tracks:
        assert np.all(tr.positions >= lo + tr.radius - 1e-9)
        assert np.all(tr.positions <= hi - tr.radius + 1e-9)


def test_actor_count_respects_range(tiny_gen_cfg):
    for seed in range(5):
        s = generate_sample(0, tiny_gen_cfg, seed=seed)
        n = len(s.tracks_for_eval())
        assert tiny_gen_cfg.actor_min <= n <= tiny_gen_cfg.actor_max


def test_overcrowded_scene_raises():
    cfg = GenConfig(H0=16, W0=16, T_raw=4, actor_min=40, actor_max=40)
    with pytest.raises(GenerationError):
        generate_sample(0, cfg, seed=0)


def test_generate_dataset_balanced_and_shuffled(tiny_gen_cfg):
    samples = generate_dataset(tiny_gen_cfg, 16)
    labels = [s.label for s in samples]
    assert len(samples) == 16
    assert all(labels.count(c) == 2 for c in range(8))
    assert labels != sorted(labels)  # not grouped by class


def test_generate_dataset_deterministic(tiny_gen_cfg):
    a = generate_dataset(tiny_gen_cfg, 8)
    b = generate_dataset(tiny_gen_cfg, 8)
    assert [s.label for s in a] == [s.label for s in b]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.frames, y.frames)


def test_horizontal_flip_mirrors_frames(tiny_gen_cfg):
    s = generate_sample(0, tiny_gen_cfg, seed=9)
    f = horizontal_flip(s)
    np.testing.assert_array_equal(f.frames, s.frames[:, :, ::-1, :])
    np.testing.assert_array_equal(f.gt_flow, s.gt_flow[:, :, ::-1])
    assert f.label == flip_class(s.label)


def test_horizontal_flip_twice_restores(tiny_gen_cfg):
    s = generate_sample(5, tiny_gen_cfg, seed=4)
    ff = horizontal_flip(horizontal_flip(s))
    np.testing.assert_array_equal(ff.frames, s.frames)
    assert ff.label == s.label


def test_flipped_directional_sample_matches_mirror_generation(tiny_gen_cfg):
    """A converge-left scene flipped horizontally must look exactly like the
    converge-right scene generated from the mirrored draw stream."""
    left = CLASS_NAMES.index("converge-left")
    s = generate_sample(left, tiny_gen_cfg, seed=21)
    m = generate_sample(flip_class(left), tiny_gen_cfg, seed=21, mirror=True)
    np.testing.assert_allclose(horizontal_flip(s).frames, m.frames, atol=1e-12)


def test_segment_indices_eval_centers():
    idx = segment_indices(24, 6, "eval")
    assert idx.tolist() == [1, 5, 9, 13, 17, 21]
    assert segment_indices(6, 6, "eval").tolist() == list(range(6))


def test_segment_indices_train_stay_in_segments():
    rng = np.random.default_rng(0)
    starts = [(i * 24) // 6 for i in range(7)]
    for _ in range(20):
        idx = segment_indices(24, 6, "train", rng)
        for i, t in enumerate(idx):
            assert starts[i] <= t < starts[i + 1]


def test_segment_indices_validates():
    with pytest.raises(ValueError):
        segment_indices(4, 6, "eval")
    with pytest.raises(ValueError):
        segment_indices(8, 4, "test")


def test_key_masks_cover_key_actors_only(tiny_gen_cfg):
    s = generate_sample(CLASS_NAMES.index("lone-runner"), tiny_gen_cfg, seed=13)
    masks = key_attention_masks(s, [0, 4], H=8, W=12)
    assert masks.shape == (2, 96)
    assert set(np.unique(masks)) <= {0.0, 1.0}
    assert masks.sum() > 0  # the runner is visible
    # key actors are a minority of the scene
    assert masks.mean() < 0.5


def test_tracks_disabled_context(tiny_gen_cfg):
    s = generate_sample(0, tiny_gen_cfg, seed=1)
    with tracks_disabled():
        with pytest.raises(TracksUnavailableError):
            s.tracks_for_eval()
    assert isinstance(s.tracks_for_eval(), list)


def test_dataset_round_trip(tmp_path, tiny_gen_cfg):
    samples = generate_dataset(tiny_gen_cfg, 4)
    d = str(tmp_path / "ds")
    write_dataset(samples, d)
    back = read_dataset(d)
    assert len(back) == 4
    for a, b in zip(samples, back):
        assert a.label == b.label
        np.testing.assert_allclose(a.frames, b.frames, atol=1e-7)
        np.testing.assert_allclose(a.gt_flow, b.gt_flow, atol=1e-6)


def test_read_dataset_skips_flow_files(tmp_path, tiny_gen_cfg):
    samples = generate_dataset(tiny_gen_cfg, 2)
    d = str(tmp_path / "ds")
    write_dataset(samples, d)
    import os
    for sub in os.listdir(d):
        fp = os.path.join(d, sub, "flow.flmt")
        if os.path.exists(fp):
            os.remove(fp)  # prove the loader never opens it
    back = read_dataset(d, load_flow=False)
    assert all(s.gt_flow is None for s in back)


def test_read_dataset_missing_manifest_raises(tmp_path):
    with pytest.raises(DatasetError):
        read_dataset(str(tmp_path))


def test_read_dataset_rejects_corrupt_manifest(tmp_path, tiny_gen_cfg):
    samples = generate_dataset(tiny_gen_cfg, 2)
    d = str(tmp_path / "ds")
    write_dataset(samples, d)
    man = f"{d}/manifest.tsv"
    with open(man, "a") as fh:
        fh.write("s99999\t3\n")  # entry without files
    with pytest.raises((DatasetError, TensorIOError)):
        read_dataset(d)
