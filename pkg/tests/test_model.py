"""Assembled model: forward contract, path switches, and checkpointing."""

import numpy as np
import pytest

from flaming.config import ConfigError, RunConfig
from flaming.model import (
    ModelParams,
    forward,
    init_model,
    load_checkpoint,
    model_named_parameters,
    save_checkpoint,
)
from flaming.numerics import TensorIOError, f32_quantize


def tiny_cfg(**kw):
    base = dict(height=32, width=48, channels=12, tokens=5, blocks=2, heads=2,
                widths=(6, 8, 12), t_frames=5, epochs=2, warmup_epochs=1)
    base.update(kw)
    return RunConfig(**base)


def make_frames(cfg, n=2, seed=3):
    rng = np.random.default_rng(seed)
    return rng.random((n, cfg.t_frames, cfg.height, cfg.width, 3))


def test_init_model_deterministic():
    cfg = tiny_cfg()
    a = init_model(cfg, seed=5)
    b = init_model(cfg, seed=5)
    for (ka, ta), (kb, tb) in zip(model_named_parameters(a).items(),
                                  model_named_parameters(b).items()):
        assert ka == kb
        np.testing.assert_array_equal(ta.data, tb.data)
    c = init_model(cfg, seed=6)
    z_a = model_named_parameters(a)["encoder.z0"].data
    z_c = model_named_parameters(c)["encoder.z0"].data
    assert np.abs(z_a - z_c).max() > 0


def test_named_parameters_unique_and_owned():
    params = init_model(tiny_cfg(), seed=0)
    named = model_named_parameters(params)
    assert all(t.requires_grad for t in named.values())
    ids = [id(t) for t in named.values()]
    assert len(ids) == len(set(ids))  # shared tensors listed once


def test_forward_output_shapes():
    cfg = tiny_cfg()
    params = init_model(cfg, seed=0)
    out = forward(params, make_frames(cfg))
    n, t, k, c = 2, cfg.t_frames, cfg.tokens, cfg.channels
    hw = (cfg.height >> 3) * (cfg.width >> 3)
    assert out.tokens.shape == (n, t, k, c)
    assert out.att.shape == (cfg.blocks, n * t, k, hw)
    assert out.fused_logits.shape == (n, cfg.n_classes)
    assert out.frame_logits.shape == (n, t, cfg.n_classes)
    assert (out.feat_h, out.feat_w) == (cfg.height >> 3, cfg.width >> 3)


def test_forward_rejects_wrong_rank():
    cfg = tiny_cfg()
    params = init_model(cfg, seed=0)
    with pytest.raises(ConfigError):
        forward(params, np.zeros((cfg.t_frames, cfg.height, cfg.width, 3)))


def test_actor_only_path_skips_group_outputs():
    cfg = tiny_cfg(paths="actor")
    params = init_model(cfg, seed=0)
    out = forward(params, make_frames(cfg))
    assert out.logits_group is None and out.frame_logits is None
    np.testing.assert_array_equal(out.fused_logits.data, out.logits_actor.data)


def test_group_only_path_skips_actor_outputs():
    cfg = tiny_cfg(paths="group")
    params = init_model(cfg, seed=0)
    out = forward(params, make_frames(cfg))
    assert out.logits_actor is None and out.f_a is None
    np.testing.assert_array_equal(out.fused_logits.data, out.logits_group.data)


def test_fused_is_mean_of_both_paths():
    cfg = tiny_cfg()
    params = init_model(cfg, seed=0)
    out = forward(params, make_frames(cfg))
    np.testing.assert_allclose(
        out.fused_logits.data,
        (out.logits_actor.data + out.logits_group.data) / 2, atol=1e-12)


def test_batched_forward_matches_single_samples():
    """The batch dimension must be inert: running samples together or
    one-by-one gives identical logits."""
    cfg = tiny_cfg()
    params = init_model(cfg, seed=1)
    frames = make_frames(cfg, n=3)
    full = forward(params, frames).fused_logits.data
    solo = np.concatenate([forward(params, frames[i:i + 1]).fused_logits.data
                           for i in range(3)])
    np.testing.assert_allclose(full, solo, atol=1e-9)


def test_logits_vary_across_samples():
    """Different inputs must produce measurably different logits even at
    init — a constant-output model cannot learn."""
    cfg = tiny_cfg()
    params = init_model(cfg, seed=0)
    logits = forward(params, make_frames(cfg, n=4)).fused_logits.data
    spread = logits.std(axis=0).mean()
    assert spread > 1e-4


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_cfg()
    params = init_model(cfg, seed=2)
    d = str(tmp_path / "ckpt")
    save_checkpoint(params, d)
    loaded = load_checkpoint(d)
    a = model_named_parameters(params)
    b = model_named_parameters(loaded)
    assert set(a) == set(b)
    for k in a:
        np.testing.assert_array_equal(b[k].data, f32_quantize(a[k].data))
    assert loaded.cfg.tokens == cfg.tokens
    assert loaded.cfg.widths == cfg.widths


def test_checkpoint_forward_agreement(tmp_path):
    """Save, reload, and verify the model computes the same predictions
    (up to storage quantization)."""
    cfg = tiny_cfg()
    params = init_model(cfg, seed=4)
    d = str(tmp_path / "ckpt")
    save_checkpoint(params, d)
    loaded = load_checkpoint(d)
    frames = make_frames(cfg)
    a = forward(params, frames).fused_logits.data
    b = forward(loaded, frames).fused_logits.data
    np.testing.assert_allclose(a, b, atol=1e-4)


def test_load_checkpoint_keeps_training_knobs(tmp_path):
    cfg = tiny_cfg(lr_peak=3e-3)
    params = init_model(cfg, seed=0)
    d = str(tmp_path / "ckpt")
    save_checkpoint(params, d)
    eval_cfg = tiny_cfg(lr_peak=9e-9, tokens=99)  # architecture lies
    loaded = load_checkpoint(d, eval_cfg)
    assert loaded.cfg.tokens == cfg.tokens  # stored architecture wins
    assert loaded.cfg.lr_peak == pytest.approx(9e-9)  # training knob survives


def test_load_checkpoint_missing_dir_raises():
    with pytest.raises(TensorIOError):
        load_checkpoint("/nonexistent/ckpt")


def test_load_checkpoint_detects_missing_tensor(tmp_path):
    """A tensor absent from the index is an architecture mismatch; a present
    index entry whose payload file is gone is an I/O failure."""
    import os
    cfg = tiny_cfg()
    params = init_model(cfg, seed=0)
    d = str(tmp_path / "ckpt")
    save_checkpoint(params, d)
    index = next(os.path.join(d, fn) for fn in os.listdir(d)
                 if fn.endswith((".tsv", ".txt", ".idx")) or "index" in fn)
    with open(index) as fh:
        lines = fh.readlines()
    with open(index, "w") as fh:
        fh.writelines(lines[1:])  # drop the first tensor
    with pytest.raises(ConfigError):
        load_checkpoint(d)

    save_checkpoint(params, d)  # restore, then delete a payload file
    name, fname = lines[0].strip().split("\t")
    os.remove(os.path.join(d, fname))
    with pytest.raises(TensorIOError):
        load_checkpoint(d)
