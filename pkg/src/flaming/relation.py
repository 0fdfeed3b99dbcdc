"""Dual relation paths over the actor tokens and the averaged classifier head.

Actor-centric path: per-token temporal convolutions, then one shared
multi-head self-attention across tokens ("motion first, relations second").
Group-centric path: per-frame self-attention with the same shared weights,
a per-frame linear classifier, then a 2D convolution stack over the
(token, time) grid behind a gradient stop ("relations first, motion second").
Video logits are the elementwise mean of the two path classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .encoder import AttnWeights, multi_head_attention
from .numerics import (
    Tensor,
    conv1d_temporal,
    conv2d,
    linear,
    relu,
    reshape,
    stop_gradient,
    tmean,
    transpose,
)
from .numerics.tensor import DimensionError, parameter

__all__ = [
    "RelationParams",
    "RelationOutput",
    "actor_path",
    "group_path",
    "fuse_and_classify",
    "predict",
]

_DETACH_MODES = ("conv-input", "frame-loss", "off")


def _normal(rng: np.random.Generator, shape, fan_in: int,
            gain: float = 1.0) -> np.ndarray:
    """Fan-in-scaled Gaussian init; gain=2 ahead of a ReLU (He scaling)."""
    return rng.standard_normal(shape) * float(np.sqrt(gain / fan_in))


@dataclass
class RelationParams:
    actor_conv_w: List[Tensor]  # each (k, C, C)
    actor_conv_b: List[Tensor]
    actor_conv_padding: str
    rel_attn_actor: AttnWeights
    rel_attn_group: AttnWeights  # the same object as above when shared
    group_conv_w: List[Tensor]  # each (C, C, k_s, k_t); grid is (K, T)
    group_conv_b: List[Tensor]
    group_stride: Tuple[int, int]  # (s_s, s_t)
    frame_cls_w: Tensor
    frame_cls_b: Tensor
    actor_mlp: Tuple[Tensor, Tensor, Tensor, Tensor]  # w1, b1, w2, b2
    group_mlp: Tuple[Tensor, Tensor, Tensor, Tensor]
    shared: bool
    detach_mode: str
    n_classes: int

    @classmethod
    def init(cls, rng: np.random.Generator, C: int = 32, n_classes: int = 8,
             heads: int = 4, actor_layers: int = 2, actor_kernel: int = 3,
             actor_padding: str = "same", group_layers: int = 2,
             group_kt: int = 3, group_ks: int = 3, group_st: int = 1,
             group_ss: int = 1, share_relation: bool = True,
             detach_mode: str = "conv-input") -> "RelationParams":
        if detach_mode not in _DETACH_MODES:
            raise ValueError(f"detach_mode must be one of {_DETACH_MODES}")
        aw, ab = [], []
        for i in range(actor_layers):
            aw.append(parameter(
                _normal(rng, (actor_kernel, C, C), actor_kernel * C, gain=2.0),
                name=f"relation.actor_conv{i}.weight"))
            ab.append(parameter(np.zeros(C), name=f"relation.actor_conv{i}.bias"))
        attn_a = AttnWeights.init(rng, C, heads, "relation.rel_attn")
        if share_relation:
            attn_g = attn_a
        else:
            attn_g = AttnWeights.init(rng, C, heads, "relation.rel_attn_group")
        gw, gb = [], []
        for i in range(group_layers):
            gw.append(parameter(
                _normal(rng, (C, C, group_ks, group_kt), C * group_ks * group_kt, gain=2.0),
                name=f"relation.group_conv{i}.weight"))
            gb.append(parameter(np.zeros(C), name=f"relation.group_conv{i}.bias"))
        fw = parameter(_normal(rng, (C, n_classes), C), name="relation.frame_cls.weight")
        fb = parameter(np.zeros(n_classes), name="relation.frame_cls.bias")

        def mlp(pre):
            return (parameter(_normal(rng, (C, C), C, gain=2.0), name=f"{pre}.w1"),
                    parameter(np.zeros(C), name=f"{pre}.b1"),
                    parameter(_normal(rng, (C, n_classes), C), name=f"{pre}.w2"),
                    parameter(np.zeros(n_classes), name=f"{pre}.b2"))

        return cls(actor_conv_w=aw, actor_conv_b=ab,
                   actor_conv_padding=actor_padding,
                   rel_attn_actor=attn_a, rel_attn_group=attn_g,
                   group_conv_w=gw, group_conv_b=gb,
                   group_stride=(group_ss, group_st),
                   frame_cls_w=fw, frame_cls_b=fb,
                   actor_mlp=mlp("relation.actor_mlp"),
                   group_mlp=mlp("relation.group_mlp"),
                   shared=share_relation, detach_mode=detach_mode,
                   n_classes=n_classes)

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.actor_conv_w, self.actor_conv_b)):
            out[f"relation.actor_conv{i}.weight"] = w
            out[f"relation.actor_conv{i}.bias"] = b
        out.update(self.rel_attn_actor.named_parameters("relation.rel_attn"))
        if not self.shared:
            out.update(self.rel_attn_group.named_parameters("relation.rel_attn_group"))
        for i, (w, b) in enumerate(zip(self.group_conv_w, self.group_conv_b)):
            out[f"relation.group_conv{i}.weight"] = w
            out[f"relation.group_conv{i}.bias"] = b
        out["relation.frame_cls.weight"] = self.frame_cls_w
        out["relation.frame_cls.bias"] = self.frame_cls_b
        for pre, pack in (("relation.actor_mlp", self.actor_mlp),
                          ("relation.group_mlp", self.group_mlp)):
            w1, b1, w2, b2 = pack
            out[f"{pre}.w1"] = w1
            out[f"{pre}.b1"] = b1
            out[f"{pre}.w2"] = w2
            out[f"{pre}.b2"] = b2
        return out


@dataclass
class RelationOutput:
    f_A: Tensor  # (N, C)
    f_G: Tensor  # (N, C)
    logits_actor: Tensor  # (N, classes)
    logits_group: Tensor  # (N, classes)
    frame_logits: Tensor  # (N, T, classes)
    fused_logits: Tensor  # (N, classes)


def _mlp_apply(x: Tensor, pack) -> Tensor:
    w1, b1, w2, b2 = pack
    return linear(relu(linear(x, w1, b1)), w2, b2)


def actor_path(W: Tensor, params: RelationParams) -> Tuple[Tensor, Tensor]:
    """Tokens (N, T, K, C) -> (f_A (N, C), logits_actor (N, classes)).

    Temporal convs + ReLU per token, average over time, shared relation
    self-attention across the K tokens, average over tokens, MLP classifier.
    """
    N, T, K, C = W.data.shape
    x = reshape(transpose(W, (0, 2, 1, 3)), (N * K, T, C))
    for w, b in zip(params.actor_conv_w, params.actor_conv_b):
        x = relu(conv1d_temporal(x, w, b, padding=params.actor_conv_padding))
    x = tmean(x, axis=1)  # (N*K, C)
    x = reshape(x, (N, K, C))
    x, _ = multi_head_attention(x, x, x, params.rel_attn_actor)
    f_A = tmean(x, axis=1)
    return f_A, _mlp_apply(f_A, params.actor_mlp)


def group_path(W: Tensor, params: RelationParams
               ) -> Tuple[Tensor, Tensor, Tensor]:
    """Tokens (N, T, K, C) -> (f_G, logits_group, frame_logits).

    Per-frame shared self-attention gives U^t; a linear head classifies each
    frame from the token average; the stacked (C, K, T) grid goes through
    the 2D conv stack behind the configured gradient stop.
    """
    N, T, K, C = W.data.shape
    flat = reshape(W, (N * T, K, C))
    U, _ = multi_head_attention(flat, flat, flat, params.rel_attn_group)
    pooled = tmean(U, axis=1)  # (N*T, C)
    frame_in = stop_gradient(pooled) if params.detach_mode == "frame-loss" else pooled
    frame_logits = reshape(linear(frame_in, params.frame_cls_w, params.frame_cls_b),
                           (N, T, params.n_classes))
    grid = transpose(reshape(U, (N, T, K, C)), (0, 3, 2, 1))  # (N, C, K, T)
    if params.detach_mode == "conv-input":
        grid = stop_gradient(grid)
    x = grid
    for w, b in zip(params.group_conv_w, params.group_conv_b):
        x = relu(conv2d(x, w, b, stride=params.group_stride, padding="valid"))
    f_G = tmean(tmean(x, axis=3), axis=2)  # (N, C)
    return f_G, _mlp_apply(f_G, params.group_mlp), frame_logits


def fuse_and_classify(logits_actor: Tensor, logits_group: Tensor) -> Tensor:
    """Elementwise mean of the two classifier outputs."""
    if logits_actor.data.shape != logits_group.data.shape:
        raise DimensionError(
            f"logit shapes differ: {logits_actor.data.shape} vs "
            f"{logits_group.data.shape}")
    return (logits_actor + logits_group) * 0.5


def predict(fused_logits: np.ndarray) -> np.ndarray:
    """Argmax per row; ties break to the lowest class index."""
    return np.argmax(np.asarray(fused_logits), axis=-1)
