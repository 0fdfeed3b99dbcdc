"""Flow-magnitude preprocessing: quantile suppression, area downsampling,
per-frame normalization, and a frame-difference fallback estimator.

These produce the training-guidance maps that attention is pulled toward.
Everything here is plain numpy — the maps are constant targets, never
differentiated through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FlowMap",
    "quantile_suppress_normalize",
    "downsample_area",
    "frame_difference_flow",
    "flow_pipeline",
]


@dataclass
class FlowMap:
    """Per-frame guidance maps on the attention grid.

    values: (T, H*W) in [0, 1]; per frame either all zero or max exactly 1
    (unless built with clip-level normalization).
    """

    values: np.ndarray
    H: int
    W: int

    def frame(self, t: int) -> np.ndarray:
        return self.values[t].reshape(self.H, self.W)


def _nearest_rank(q: float, P: int) -> int:
    """ceil(q*P) with a guard against float representation pushing an exact
    integer product just above itself (e.g. 0.85*20)."""
    return int(math.ceil(q * P - 1e-9))


def quantile_suppress_normalize(raw: np.ndarray, q: float = 0.85) -> np.ndarray:
    """Subtract the nearest-rank q-quantile, clamp at zero, scale max to 1.

    The quantile is the ceil(q*P)-th smallest of the P pixels, so adding a
    uniform constant to the whole frame leaves the output unchanged — which
    is exactly what makes whole-frame camera motion drop out.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile fraction must be in (0, 1), got {q}")
    raw = np.asarray(raw, dtype=np.float64)
    if (raw < 0).any():
        raise ValueError("flow magnitudes must be nonnegative")
    P = raw.size
    k = _nearest_rank(q, P)
    thresh = np.partition(raw.reshape(-1), k - 1)[k - 1]
    out = np.maximum(raw - thresh, 0.0)
    peak = out.max()
    if peak > 0.0:
        out = out / peak
    return out


def downsample_area(frame: np.ndarray, H: int, W: int) -> np.ndarray:
    """Block-mean resize of an (H0, W0) frame down to (H, W)."""
    frame = np.asarray(frame, dtype=np.float64)
    H0, W0 = frame.shape
    if H0 % H != 0 or W0 % W != 0:
        raise ValueError(f"({H0},{W0}) not divisible by target ({H},{W})")
    bh, bw = H0 // H, W0 // W
    return frame.reshape(H, bh, W, bw).mean(axis=(1, 3))


def frame_difference_flow(frames: np.ndarray) -> np.ndarray:
    """Flow-magnitude proxy from raw frames: L2 norm of the RGB step to the
    next frame; the last frame repeats the previous map."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"expected (T, H, W, 3) frames, got {frames.shape}")
    T = frames.shape[0]
    if T < 2:
        raise ValueError("need at least 2 frames for differences")
    diff = frames[1:] - frames[:-1]
    mag = np.sqrt((diff * diff).sum(axis=-1))
    return np.concatenate([mag, mag[-1:]], axis=0)


def flow_pipeline(raw: np.ndarray, H: int, W: int, q: float = 0.85,
                  per_clip_norm: bool = False) -> FlowMap:
    """Full raw-flow -> guidance-map pipeline.

    Per frame: quantile suppression + normalization at source resolution,
    block-mean downsample to the attention grid, then renormalize so the
    frame max is exactly 1 (or, with per_clip_norm, one shared max over the
    whole clip).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise ValueError(f"expected (T, H0, W0) raw flow, got {raw.shape}")
    T = raw.shape[0]
    maps = np.empty((T, H * W))
    for t in range(T):
        small = downsample_area(quantile_suppress_normalize(raw[t], q), H, W)
        maps[t] = small.reshape(-1)
    if per_clip_norm:
        peak = maps.max()
        if peak > 0.0:
            maps /= peak
    else:
        for t in range(T):
            peak = maps[t].max()
            if peak > 0.0:
                maps[t] /= peak
    return FlowMap(values=maps, H=H, W=W)
