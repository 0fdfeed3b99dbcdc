"""End-to-end model assembly: backbone -> actor encoder -> relation paths.

The batch axis is flattened through the backbone and encoder (frames are
independent there) and regrouped per video for the relation module. The
`paths` config picks which classifier(s) produce the fused logits; "both"
is the standard averaged head, "actor"/"group" are the single-path
ablations.

Checkpoints are a directory: the shared named-tensor container for weights
plus a `model.cfg` key=value snapshot so a checkpoint rebuilds without the
original run config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from .backbone import BackboneParams, extract_features
from .config import ConfigError, RunConfig, cast_value, format_value, parse_kv_text
from .encoder import EncoderOutput, EncoderParams, encode_video
from .numerics import Tensor, as_tensor, reshape
from .numerics.tensor_io import (TensorIOError, load_named_tensors,
                                 save_named_tensors)
from .relation import (
    RelationOutput,
    RelationParams,
    actor_path,
    fuse_and_classify,
    group_path,
)

__all__ = [
    "ModelParams",
    "ForwardOutputs",
    "init_model",
    "model_named_parameters",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
]

# config keys that shape the parameter tensors or the forward graph
_MODEL_KEYS = (
    "channels", "tokens", "blocks", "heads", "widths", "n_classes",
    "use_ffn", "use_pos", "actor_layers", "actor_kernel", "actor_padding",
    "group_layers", "group_kt", "group_ks", "group_st", "group_ss",
    "share_relation", "detach_mode", "paths",
)


@dataclass
class ModelParams:
    backbone: BackboneParams
    encoder: EncoderParams
    relation: RelationParams
    cfg: RunConfig
    seed: int


def init_model(cfg: RunConfig, seed: int = 0) -> ModelParams:
    """Seeded parameter init for all three stages."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    bb = BackboneParams.init(rng, widths=cfg.widths, out_channels=cfg.channels)
    enc = EncoderParams.init(rng, K=cfg.tokens, C=cfg.channels, L=cfg.blocks,
                             heads=cfg.heads, use_ffn=cfg.use_ffn,
                             use_pos=cfg.use_pos)
    rel = RelationParams.init(rng, C=cfg.channels, n_classes=cfg.n_classes,
                              heads=cfg.heads, actor_layers=cfg.actor_layers,
                              actor_kernel=cfg.actor_kernel,
                              actor_padding=cfg.actor_padding,
                              group_layers=cfg.group_layers,
                              group_kt=cfg.group_kt, group_ks=cfg.group_ks,
                              group_st=cfg.group_st, group_ss=cfg.group_ss,
                              share_relation=cfg.share_relation,
                              detach_mode=cfg.detach_mode)
    return ModelParams(backbone=bb, encoder=enc, relation=rel, cfg=cfg,
                       seed=seed)


def model_named_parameters(params: ModelParams) -> Dict[str, Tensor]:
    """All trainables by stable name; shared weights appear exactly once."""
    out: Dict[str, Tensor] = {}
    out.update(params.backbone.named_parameters())
    out.update(params.encoder.named_parameters())
    out.update(params.relation.named_parameters())
    return out


@dataclass
class ForwardOutputs:
    tokens: Tensor                  # (N, T, K, C)
    att: Tensor                     # (L, N*T, K, HW)
    feat_h: int
    feat_w: int
    fused_logits: Tensor            # (N, classes)
    logits_actor: Optional[Tensor]
    logits_group: Optional[Tensor]
    frame_logits: Optional[Tensor]  # (N, T, classes) when the group path runs
    f_a: Optional[Tensor]
    f_g: Optional[Tensor]


FRAME_MEAN = 0.4
FRAME_STD = 0.25


def forward(params: ModelParams,
            frames: Union[Tensor, np.ndarray]) -> ForwardOutputs:
    """Frames (N, T, H0, W0, 3) -> logits and the intermediates losses need.

    Input is standardized here with fixed constants so training and
    evaluation can never disagree about preprocessing.
    """
    x = as_tensor(frames)
    if x.data.ndim != 5:
        raise ConfigError(f"expected (N, T, H0, W0, 3) frames, got {x.data.shape}")
    x = (x - FRAME_MEAN) * (1.0 / FRAME_STD)
    n, t, h0, w0, ch = x.data.shape
    flat = reshape(x, (n * t, h0, w0, ch))
    fmap = extract_features(flat, params.backbone)
    enc: EncoderOutput = encode_video(fmap, params.encoder)
    k, c = params.encoder.K, params.encoder.C
    tokens = reshape(enc.tokens, (n, t, k, c))

    which = params.cfg.paths
    logits_actor = f_a = None
    logits_group = frame_logits = f_g = None
    if which in ("both", "actor"):
        f_a, logits_actor = actor_path(tokens, params.relation)
    if which in ("both", "group"):
        f_g, logits_group, frame_logits = group_path(tokens, params.relation)
    if which == "both":
        fused = fuse_and_classify(logits_actor, logits_group)
    elif which == "actor":
        fused = logits_actor
    else:
        fused = logits_group
    return ForwardOutputs(tokens=tokens, att=enc.att, feat_h=fmap.H,
                          feat_w=fmap.W, fused_logits=fused,
                          logits_actor=logits_actor,
                          logits_group=logits_group,
                          frame_logits=frame_logits, f_a=f_a, f_g=f_g)


def save_checkpoint(params: ModelParams, directory: str) -> None:
    """Weights into the named-tensor container + a model.cfg snapshot."""
    tensors = {name: t.data for name, t in model_named_parameters(params).items()}
    save_named_tensors(directory, tensors)
    lines = [f"{key} = {format_value(getattr(params.cfg, key))}"
             for key in _MODEL_KEYS]
    lines.append(f"seed = {params.seed}")
    with open(os.path.join(directory, "model.cfg"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory: str,
                    cfg: Optional[RunConfig] = None) -> ModelParams:
    """Rebuild a model from a checkpoint directory.

    Architecture keys come from the stored model.cfg (overriding the same
    keys of `cfg` when one is supplied, so training knobs survive but shapes
    always match the weights).
    """
    cfg_path = os.path.join(directory, "model.cfg")
    try:
        with open(cfg_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise TensorIOError(f"cannot read {cfg_path}: {e}") from e
    raw = parse_kv_text(text, source=cfg_path)
    seed = int(raw.pop("seed", "0"))
    base = cfg if cfg is not None else RunConfig()
    for key, val in raw.items():
        if key not in _MODEL_KEYS:
            raise ConfigError(f"{cfg_path}: unexpected key {key!r}")
        setattr(base, key, cast_value(key, val))
    params = init_model(base, seed=seed)
    stored = load_named_tensors(directory)
    named = model_named_parameters(params)
    missing = set(named) - set(stored)
    extra = set(stored) - set(named)
    if missing or extra:
        raise ConfigError(
            f"checkpoint/model mismatch: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}")
    for name, tensor in named.items():
        arr = stored[name]
        if arr.shape != tensor.data.shape:
            raise ConfigError(
                f"{name}: stored shape {arr.shape} != model {tensor.data.shape}")
        tensor.data = arr
    return params
