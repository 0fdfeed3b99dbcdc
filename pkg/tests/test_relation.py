"""Dual relation paths: shapes, the shared attention, and the gradient stop."""

import numpy as np
import pytest

from flaming.numerics import DimensionError, Tape, backward, constant, parameter, tmean
from flaming.relation import (
    RelationParams,
    actor_path,
    fuse_and_classify,
    group_path,
    predict,
)


def make_params(seed=0, C=8, heads=2, **kw):
    return RelationParams.init(np.random.default_rng(seed), C=C,
                               n_classes=8, heads=heads, **kw)


def make_tokens(seed=1, N=2, T=5, K=5, C=8, grad=False):
    data = np.random.default_rng(seed).standard_normal((N, T, K, C))
    return parameter(data, name="W") if grad else constant(data)


def test_actor_path_shapes():
    p = make_params()
    f_a, logits = actor_path(make_tokens(), p)
    assert f_a.shape == (2, 8)
    assert logits.shape == (2, 8)


def test_group_path_shapes():
    p = make_params()
    f_g, logits, frame_logits = group_path(make_tokens(), p)
    assert f_g.shape == (2, 8)
    assert logits.shape == (2, 8)
    assert frame_logits.shape == (2, 5, 8)


def test_fuse_is_mean_of_logits(rng):
    a = constant(rng.standard_normal((3, 8)))
    b = constant(rng.standard_normal((3, 8)))
    fused = fuse_and_classify(a, b)
    np.testing.assert_allclose(fused.data, (a.data + b.data) / 2, atol=1e-12)
    with pytest.raises(DimensionError):
        fuse_and_classify(a, constant(np.zeros((3, 7))))


def test_predict_argmax_with_low_tie_break():
    logits = np.array([[0.0, 1.0, 1.0], [2.0, 0.0, 0.0]])
    np.testing.assert_array_equal(predict(logits), [1, 0])


def test_shared_relation_attention_is_same_object():
    p = make_params(share_relation=True)
    assert p.rel_attn_group is p.rel_attn_actor
    q = make_params(share_relation=False)
    assert q.rel_attn_group is not q.rel_attn_actor


def test_shared_weights_appear_once_in_named_parameters():
    shared = make_params(share_relation=True).named_parameters()
    split = make_params(share_relation=False).named_parameters()
    assert len(split) == len(shared) + 4  # extra wq/wk/wv/wo
    assert not any("rel_attn_group" in k for k in shared)


def test_one_shared_weight_drives_both_paths():
    """Perturbing a single shared-attention entry moves the actor AND the
    group logits (weight sharing is real, not a copy)."""
    p = make_params(share_relation=True)
    W = make_tokens()
    _, la0 = actor_path(W, p)
    _, lg0, _ = group_path(W, p)
    p.rel_attn_actor.wv.data[2, 3] += 0.25
    _, la1 = actor_path(W, p)
    _, lg1, _ = group_path(W, p)
    assert np.abs(la1.data - la0.data).max() > 1e-9
    assert np.abs(lg1.data - lg0.data).max() > 1e-9


def test_conv_input_detach_blocks_gradient_to_tokens():
    """With the default gradient stop, the group conv stack cannot push
    gradient back into the tokens; the frame head still can."""
    p = make_params(detach_mode="conv-input")
    W = make_tokens(grad=True)
    with Tape():
        f_g, logits, frame_logits = group_path(W, p)
        backward(tmean(f_g * f_g) + tmean(logits * logits))
    conv_only_grad = W.grad
    assert conv_only_grad is None  # nothing flows through the stopped grid

    with Tape():
        _, _, frame_logits = group_path(W, p)
        backward(tmean(frame_logits * frame_logits))
    assert W.grad is not None and np.abs(W.grad).max() > 0


def test_detach_off_lets_gradient_through():
    p = make_params(detach_mode="off")
    W = make_tokens(grad=True)
    with Tape():
        f_g, _, _ = group_path(W, p)
        backward(tmean(f_g * f_g))
    assert W.grad is not None and np.abs(W.grad).max() > 0


def test_frame_loss_detach_blocks_frame_head_only():
    p = make_params(detach_mode="frame-loss")
    W = make_tokens(grad=True)
    with Tape():
        _, _, frame_logits = group_path(W, p)
        backward(tmean(frame_logits * frame_logits))
    assert W.grad is None
    with Tape():
        f_g, _, _ = group_path(W, p)
        backward(tmean(f_g * f_g))
    assert W.grad is not None


def test_invalid_detach_mode_rejected():
    with pytest.raises(ValueError):
        make_params(detach_mode="sometimes")


def test_actor_path_time_average_invariance():
    """With valid-free 'same' padding and time averaging, permuting frames
    changes the conv responses — order matters through the temporal kernel."""
    p = make_params()
    W = make_tokens(T=6)
    _, base = actor_path(W, p)
    flipped = constant(W.data[:, ::-1])
    _, rev = actor_path(flipped, p)
    assert np.abs(base.data - rev.data).max() > 1e-9


def test_group_path_grid_orientation():
    """The conv grid is (token, time): stretching the time kernel must hit
    a (K, T) grid of the right orientation without dimension errors."""
    p = make_params(group_kt=3, group_ks=2)
    W = make_tokens(N=1, T=5, K=4)
    f_g, logits, _ = group_path(W, p)
    assert f_g.shape == (1, 8) and logits.shape == (1, 8)


def test_batch_rows_independent():
    """Sample i's logits don't depend on sample j's tokens."""
    p = make_params()
    W = make_tokens(N=3)
    _, base = actor_path(W, p)
    poked_data = W.data.copy()
    poked_data[2] += 1.0
    _, poked = actor_path(constant(poked_data), p)
    np.testing.assert_allclose(poked.data[:2], base.data[:2], atol=1e-12)
