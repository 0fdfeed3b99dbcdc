"""Motion-aware actor encoder: K learned queries decoded against each frame.

Each block self-attends the queries, cross-attends them into the frame's
flattened feature grid (fixed sinusoidal position codes on the keys), and
applies post-norm residual updates with an optional feed-forward sublayer.
The head-averaged cross-attention maps are kept per block — they are what
the flow-alignment loss pulls on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .numerics import (
    Tensor,
    constant,
    layer_norm,
    linear,
    matmul,
    relu,
    reshape,
    softmax_rows,
    stack,
    tmean,
    transpose,
)
from .numerics.tensor import DimensionError, parameter

__all__ = [
    "AttnWeights",
    "multi_head_attention",
    "EncoderBlockParams",
    "EncoderParams",
    "EncoderOutput",
    "encode_video",
    "representative_attention",
    "build_grid_position_codes",
]


def _normal(rng: np.random.Generator, shape, fan_in: int,
            gain: float = 1.0) -> np.ndarray:
    """Fan-in-scaled Gaussian init; gain=2 ahead of a ReLU (He scaling)."""
    return rng.standard_normal(shape) * float(np.sqrt(gain / fan_in))


@dataclass
class AttnWeights:
    """Bias-free projection matrices for one multi-head attention layer."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    @classmethod
    def init(cls, rng: np.random.Generator, C: int, heads: int,
             prefix: str) -> "AttnWeights":
        if C % heads:
            raise DimensionError(f"channels {C} not divisible by {heads} heads")
        mk = lambda nm: parameter(_normal(rng, (C, C), C), name=f"{prefix}.{nm}")
        return cls(wq=mk("wq"), wk=mk("wk"), wv=mk("wv"), wo=mk("wo"), heads=heads)

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv, f"{prefix}.wo": self.wo}


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, N, C = x.data.shape
    return transpose(reshape(x, (B, N, heads, C // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, h, N, d = x.data.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, N, h * d))


def multi_head_attention(query: Tensor, key: Tensor, value: Tensor,
                         w: AttnWeights) -> Tuple[Tensor, Tensor]:
    """Batched attention: query (B, Nq, C) against key/value (B, Nk, C).

    Returns (output (B, Nq, C), head-averaged map (B, Nq, Nk)). Scores are
    scaled by sqrt of the per-head width.
    """
    C = query.data.shape[-1]
    h = w.heads
    q = _split_heads(matmul(query, w.wq), h)
    k = _split_heads(matmul(key, w.wk), h)
    v = _split_heads(matmul(value, w.wv), h)
    scale = 1.0 / np.sqrt(C // h)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * scale
    att = softmax_rows(scores)  # (B, h, Nq, Nk)
    out = matmul(_merge_heads(matmul(att, v)), w.wo)
    return out, tmean(att, axis=1)


# Codes are scaled down to roughly match the magnitude of the frame
# features they are added to; at full amplitude they drown the content and
# attention can no longer be steered toward what actually moves.
POSCODE_SCALE = 0.35


def build_grid_position_codes(H: int, W: int, C: int) -> np.ndarray:
    """Fixed 2D sinusoidal codes for a flattened H x W grid, shape (H*W, C).

    Half the channels encode the row coordinate, half the column, each as
    sin/cos pairs over a geometric frequency ladder.
    """
    if C % 4:
        raise DimensionError(f"position codes need channels divisible by 4, got {C}")
    half = C // 2
    n_freq = half // 2
    freqs = 1.0 / (100.0 ** (np.arange(n_freq) / max(n_freq - 1, 1)))
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    out = np.zeros((H * W, C))
    for axis, coord in enumerate((ys.reshape(-1), xs.reshape(-1))):
        base = axis * half
        ang = coord[:, None] * freqs[None, :] * np.pi
        out[:, base:base + n_freq] = np.sin(ang)
        out[:, base + n_freq:base + half] = np.cos(ang)
    return out * POSCODE_SCALE


@dataclass
class EncoderBlockParams:
    mhsa: AttnWeights
    mhca: AttnWeights
    ln1_gain: Tensor
    ln1_bias: Tensor
    ffn_w1: Optional[Tensor] = None
    ffn_b1: Optional[Tensor] = None
    ffn_w2: Optional[Tensor] = None
    ffn_b2: Optional[Tensor] = None
    ln2_gain: Optional[Tensor] = None
    ln2_bias: Optional[Tensor] = None


@dataclass
class EncoderParams:
    z0: Tensor  # (K, C) learnable queries
    blocks: List[EncoderBlockParams]
    heads: int
    use_ffn: bool
    use_pos: bool

    @classmethod
    def init(cls, rng: np.random.Generator, K: int = 8, C: int = 32,
             L: int = 3, heads: int = 4, use_ffn: bool = True,
             use_pos: bool = True) -> "EncoderParams":
        # Unit-scale queries: with a small init all K queries start nearly
        # identical, every token then attends to the same cells, and the
        # between-token symmetry takes many epochs to break. Diverse queries
        # from step 0 give each token its own attention footprint.
        z0 = parameter(rng.standard_normal((K, C)), name="encoder.z0")
        blocks = []
        for l in range(L):
            pre = f"encoder.block{l}"
            blk = EncoderBlockParams(
                mhsa=AttnWeights.init(rng, C, heads, f"{pre}.mhsa"),
                mhca=AttnWeights.init(rng, C, heads, f"{pre}.mhca"),
                ln1_gain=parameter(np.ones(C), name=f"{pre}.ln1.gain"),
                ln1_bias=parameter(np.zeros(C), name=f"{pre}.ln1.bias"),
            )
            if use_ffn:
                blk.ffn_w1 = parameter(_normal(rng, (C, 4 * C), C, gain=2.0),
                                       name=f"{pre}.ffn.w1")
                blk.ffn_b1 = parameter(np.zeros(4 * C), name=f"{pre}.ffn.b1")
                blk.ffn_w2 = parameter(_normal(rng, (4 * C, C), 4 * C),
                                       name=f"{pre}.ffn.w2")
                blk.ffn_b2 = parameter(np.zeros(C), name=f"{pre}.ffn.b2")
                blk.ln2_gain = parameter(np.ones(C), name=f"{pre}.ln2.gain")
                blk.ln2_bias = parameter(np.zeros(C), name=f"{pre}.ln2.bias")
            blocks.append(blk)
        return cls(z0=z0, blocks=blocks, heads=heads, use_ffn=use_ffn,
                   use_pos=use_pos)

    @property
    def K(self) -> int:
        return self.z0.data.shape[0]

    @property
    def C(self) -> int:
        return self.z0.data.shape[1]

    @property
    def L(self) -> int:
        return len(self.blocks)

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {"encoder.z0": self.z0}
        for l, blk in enumerate(self.blocks):
            pre = f"encoder.block{l}"
            out.update(blk.mhsa.named_parameters(f"{pre}.mhsa"))
            out.update(blk.mhca.named_parameters(f"{pre}.mhca"))
            out[f"{pre}.ln1.gain"] = blk.ln1_gain
            out[f"{pre}.ln1.bias"] = blk.ln1_bias
            if blk.ffn_w1 is not None:
                out[f"{pre}.ffn.w1"] = blk.ffn_w1
                out[f"{pre}.ffn.b1"] = blk.ffn_b1
                out[f"{pre}.ffn.w2"] = blk.ffn_w2
                out[f"{pre}.ffn.b2"] = blk.ffn_b2
                out[f"{pre}.ln2.gain"] = blk.ln2_gain
                out[f"{pre}.ln2.bias"] = blk.ln2_bias
        return out


@dataclass
class EncoderOutput:
    """tokens: (T, K, C) final-block queries; att: (L, T, K, HW) head-averaged
    cross-attention, rows nonnegative and summing to 1."""

    tokens: Tensor
    att: Tensor


def encode_video(F, params: EncoderParams) -> EncoderOutput:
    """Decode the learned queries against every frame of a FeatureMap.

    Frames share the queries and all block weights; the block recursion
    restarts from z0 for each frame (frames are independent here — temporal
    reasoning happens later, in the relation paths).
    """
    values = F.values
    B, HW, C = values.data.shape
    if C != params.C:
        raise DimensionError(
            f"feature channels {C} != encoder channels {params.C}")
    z = reshape(params.z0, (1, params.K, C)) + constant(np.zeros((B, 1, 1)))
    if params.use_pos:
        keys_in = values + constant(build_grid_position_codes(F.H, F.W, C))
    else:
        keys_in = values
    att_maps = []
    for blk in params.blocks:
        s, _ = multi_head_attention(z, z, z, blk.mhsa)
        q = z + s
        c, amap = multi_head_attention(q, keys_in, values, blk.mhca)
        att_maps.append(amap)
        z = layer_norm(q + c, blk.ln1_gain, blk.ln1_bias)
        if params.use_ffn:
            hid = relu(linear(z, blk.ffn_w1, blk.ffn_b1))
            z = layer_norm(z + linear(hid, blk.ffn_w2, blk.ffn_b2),
                           blk.ln2_gain, blk.ln2_bias)
    return EncoderOutput(tokens=z, att=stack(att_maps, axis=0))


def representative_attention(att: Tensor, K_flm: int) -> Tensor:
    """Mean of the first K_flm token maps: (L, T, K, HW) -> (L, T, HW)."""
    K = att.data.shape[2]
    if not 1 <= K_flm <= K:
        raise ValueError(f"K_flm must be in [1, {K}], got {K_flm}")
    sliced = att[:, :, 0:K_flm, :]
    return tmean(sliced, axis=2)
