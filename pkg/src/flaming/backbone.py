"""Small trainable conv backbone: RGB frames -> flattened per-frame features.

A stack of stride-2 3x3 conv+ReLU stages followed by a 1x1 channel
compression (no ReLU), yielding one C-vector per cell of an (H0/2^S, W0/2^S)
grid. Stands in for a pretrained image network at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .numerics import Tensor, conv2d, relu, reshape, transpose
from .numerics.tensor import DimensionError, parameter

__all__ = ["BackboneParams", "FeatureMap", "extract_features"]


@dataclass
class FeatureMap:
    """Per-frame feature grid, flattened: values (T, H*W, C)."""

    values: Tensor
    H: int
    W: int


@dataclass
class BackboneParams:
    stage_weights: List[Tensor]
    stage_biases: List[Tensor]
    compress_weight: Tensor
    compress_bias: Tensor
    widths: Tuple[int, ...]
    out_channels: int

    @classmethod
    def init(cls, rng: np.random.Generator, widths=(16, 32, 64),
             out_channels: int = 32) -> "BackboneParams":
        ws, bs = [], []
        cin = 3
        for i, w in enumerate(widths):
            # He scaling: anything weaker shrinks activations geometrically
            # with depth and the frame content drowns under the position codes
            scale = np.sqrt(2.0 / (cin * 9))
            ws.append(parameter(rng.standard_normal((w, cin, 3, 3)) * scale,
                                name=f"backbone.stage{i}.weight"))
            bs.append(parameter(np.zeros(w), name=f"backbone.stage{i}.bias"))
            cin = w
        cw = parameter(rng.standard_normal((out_channels, cin, 1, 1))
                       * np.sqrt(1.0 / cin),
                       name="backbone.compress.weight")
        cb = parameter(np.zeros(out_channels), name="backbone.compress.bias")
        return cls(stage_weights=ws, stage_biases=bs, compress_weight=cw,
                   compress_bias=cb, widths=tuple(widths),
                   out_channels=out_channels)

    @property
    def n_stages(self) -> int:
        return len(self.stage_weights)

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.stage_weights, self.stage_biases)):
            out[f"backbone.stage{i}.weight"] = w
            out[f"backbone.stage{i}.bias"] = b
        out["backbone.compress.weight"] = self.compress_weight
        out["backbone.compress.bias"] = self.compress_bias
        return out


def extract_features(frames: Tensor, params: BackboneParams) -> FeatureMap:
    """Map (T, H0, W0, 3) frames to a FeatureMap with values (T, H*W, C).

    Each stage halves both extents (stride 2, pad 1) with a ReLU; the final
    1x1 compression is linear. H0 and W0 must be divisible by 2^n_stages.
    """
    if frames.data.ndim != 4 or frames.data.shape[-1] != 3:
        raise DimensionError(f"expected (T, H0, W0, 3), got {frames.data.shape}")
    T, H0, W0, _ = frames.data.shape
    S = params.n_stages
    if H0 % (1 << S) or W0 % (1 << S):
        raise DimensionError(
            f"frame extents ({H0},{W0}) not divisible by 2^{S}")
    x = transpose(frames, (0, 3, 1, 2))  # channels first
    for w, b in zip(params.stage_weights, params.stage_biases):
        x = relu(conv2d(x, w, b, stride=2, padding=1))
    x = conv2d(x, params.compress_weight, params.compress_bias)
    H, W = H0 >> S, W0 >> S
    C = params.out_channels
    x = transpose(x, (0, 2, 3, 1))  # (T, H, W, C)
    values = reshape(x, (T, H * W, C))
    return FeatureMap(values=values, H=H, W=W)
