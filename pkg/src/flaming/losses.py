"""Training losses: flow-guided alignment, temporal token consistency, per-frame
group supervision, and the confidence-gated total.

Both contrastive losses use the same per-row machinery: cosine similarities are
scaled by 1/tau, the positive sits on the diagonal, and the denominator runs
over the off-diagonal entries of the row (the positive pair is *excluded* by
default; `include_positive=True` restores the more common inclusive
convention). The temporal loss sums a forward and a backward direction per
token and can legitimately go negative — well-aligned unit tokens drive it
toward -2/tau-ish territory, which is expected rather than a bug.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .numerics import (
    DimensionError,
    Tensor,
    constant,
    cross_entropy_with_logits,
    l2_normalize_rows,
    matmul,
    tabs,
    texp,
    tlog,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "LossConfigError",
    "LossConfig",
    "LossParts",
    "LossBreakdown",
    "contrastive_row_terms",
    "loss_flm_rows",
    "loss_flm",
    "loss_tco",
    "loss_gf",
    "confidence",
    "total_loss",
]


class LossConfigError(Exception):
    """Loss hyperparameters out of their legal range."""


_STYLES = ("contrastive", "l1")
_GATINGS = ("per-sample", "batch-mean")


@dataclass
class LossConfig:
    """Knobs for the auxiliary losses.

    tau: temperature shared by both contrastive losses.
    k_flm: how many leading tokens are averaged into the representative
        attention map (consumed upstream, carried here so one object describes
        the whole loss setup).
    flm_style / tco_style: "contrastive" or "l1" (the ablation variants).
    rho_gating: "per-sample" weights each sample's flow term by (1 - rho_n);
        "batch-mean" applies a single (1 - mean rho) factor.
    include_positive: put the positive pair back into the contrastive
        denominators (off by default).
    """

    tau: float = 0.5
    k_flm: int = 6
    flm_style: str = "contrastive"
    tco_style: str = "contrastive"
    rho_gating: str = "per-sample"
    include_positive: bool = False

    def validate(self) -> None:
        if not self.tau > 0:
            raise LossConfigError(f"temperature must be positive, got {self.tau}")
        if self.k_flm < 1:
            raise LossConfigError(f"k_flm must be >= 1, got {self.k_flm}")
        if self.flm_style not in _STYLES:
            raise LossConfigError(f"flm_style must be one of {_STYLES}")
        if self.tco_style not in _STYLES:
            raise LossConfigError(f"tco_style must be one of {_STYLES}")
        if self.rho_gating not in _GATINGS:
            raise LossConfigError(f"rho_gating must be one of {_GATINGS}")


def contrastive_row_terms(scaled: Tensor, include_positive: bool = False) -> Tensor:
    """-log(exp(s_ii) / sum_{j != i} exp(s_ij)) for each row of a square
    similarity block.

    `scaled` is (..., R, R), already divided by the temperature. Returns
    (..., R). Shift-stabilized per row; the diagonal rejoins the denominator
    when include_positive is set.
    """
    shp = scaled.data.shape
    if len(shp) < 2 or shp[-1] != shp[-2]:
        raise DimensionError(f"expected square similarity block, got {shp}")
    r = shp[-1]
    if r < 2 and not include_positive:
        raise DimensionError("need at least 2 rows for an exclusive denominator")
    eye = np.eye(r)
    shift = constant(np.max(scaled.data, axis=-1, keepdims=True))
    z = scaled - shift
    diag = tsum(z * constant(eye), axis=-1)
    mask = np.ones((r, r)) if include_positive else 1.0 - eye
    denom = tsum(texp(z) * constant(mask), axis=-1)
    return tlog(denom) - diag


def loss_flm_rows(att: Tensor, m: Union[np.ndarray, Tensor], tau: float = 0.5,
                  style: str = "contrastive",
                  include_positive: bool = False) -> Tensor:
    """Per-(sample, frame) flow-alignment terms, averaged over encoder blocks.

    att: (L, B, HW) representative attention, B = N*T rows.
    m:   (B, HW) processed flow maps (treated as constant).
    Returns a (B,) tensor; the scalar loss is its mean. Positives pair row i
    of the attention with row i of the flow; negatives run over the other
    flow rows of the whole batch, crossing sample boundaries. The "l1" style
    replaces each term with the mean absolute map difference.
    """
    if style == "l1":
        return _l1_flm_rows(att, m)
    if style != "contrastive":
        raise LossConfigError(f"flm style must be one of {_STYLES}, got {style!r}")
    if tau <= 0:
        raise LossConfigError(f"temperature must be positive, got {tau}")
    if att.data.ndim != 3:
        raise DimensionError(f"expected (L, B, HW) attention, got {att.data.shape}")
    md = m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64)
    L, B, HW = att.data.shape
    if md.shape != (B, HW):
        raise DimensionError(
            f"flow maps {md.shape} mismatch attention rows ({B}, {HW})")
    an = l2_normalize_rows(att)                       # (L, B, HW)
    mn = md / np.maximum(np.linalg.norm(md, axis=-1, keepdims=True), 1e-300)
    sims = matmul(an, constant(mn.T)) / tau           # (L, B, B)
    terms = contrastive_row_terms(sims, include_positive)
    return tmean(terms, axis=0)                       # (B,)


def _l1_flm_rows(att: Tensor, m) -> Tensor:
    md = m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64)
    if att.data.ndim != 3 or md.shape != att.data.shape[1:]:
        raise DimensionError(
            f"attention {att.data.shape} / flow {md.shape} shapes disagree")
    diffs = tmean(tabs(att - constant(md)), axis=-1)  # (L, B)
    return tmean(diffs, axis=0)


def loss_flm(att: Tensor, m, tau: float = 0.5, style: str = "contrastive",
             include_positive: bool = False) -> Tensor:
    """Scalar flow-alignment loss (mean of the per-row terms)."""
    return tmean(loss_flm_rows(att, m, tau, style, include_positive))


def loss_tco(w: Tensor, tau: float = 0.5, style: str = "contrastive",
             include_positive: bool = False) -> Tensor:
    """Temporal consistency over adjacent frames of the token stack.

    w: (T, NK, C) tokens, frame-major. For each adjacent pair (t, t+1) the
    positives are same-index tokens; each token contributes a forward and a
    backward term whose sum is averaged over the NK tokens, then over the
    T-1 pairs. Negative values are expected once tokens align.
    """
    if w.data.ndim != 3:
        raise DimensionError(f"expected (T, NK, C) tokens, got {w.data.shape}")
    T = w.data.shape[0]
    if T < 2:
        raise DimensionError(f"need at least 2 frames, got T={T}")
    if style == "l1":
        return tmean(tabs(w[1:] - w[:-1]))
    if style != "contrastive":
        raise LossConfigError(f"tco style must be one of {_STYLES}, got {style!r}")
    if tau <= 0:
        raise LossConfigError(f"temperature must be positive, got {tau}")
    wn = l2_normalize_rows(w)
    a, b = wn[:-1], wn[1:]                             # (T-1, NK, C) each
    sims = matmul(a, transpose(b, (0, 2, 1))) / tau    # (T-1, NK, NK)
    fwd = contrastive_row_terms(sims, include_positive)
    bwd = contrastive_row_terms(transpose(sims, (0, 2, 1)), include_positive)
    return tmean(fwd + bwd)


def loss_gf(frame_logits: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy of every frame's logits against the video label."""
    if frame_logits.data.ndim != 3:
        raise DimensionError(
            f"expected (N, T, classes) frame logits, got {frame_logits.data.shape}")
    n, t, ncls = frame_logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} mismatches batch {n}")
    if labels.min() < 0 or labels.max() >= ncls:
        raise DimensionError(f"label out of range for {ncls} classes")
    flat = frame_logits.reshape(n * t, ncls)
    return cross_entropy_with_logits(flat, np.repeat(labels, t))


def confidence(fused_logits: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Per-sample max softmax score of the fused logits, detached."""
    x = fused_logits.data if isinstance(fused_logits, Tensor) else np.asarray(fused_logits)
    if x.ndim != 2:
        raise DimensionError(f"expected (N, classes) logits, got {x.shape}")
    z = x - x.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p.max(axis=1)


@dataclass
class LossParts:
    """The four raw terms, with the flow term kept per (sample, frame) row so
    the gate can weight samples individually."""

    l_ce: Tensor        # scalar
    flm_rows: Tensor    # (N*T,) sample-major rows
    l_tco: Tensor       # scalar
    l_gf: Tensor        # scalar
    n_samples: int


@dataclass
class LossBreakdown:
    """Detached scalar record of one step, written to the step log."""

    l_ce: float
    l_flm: float
    l_flm_gated: float
    l_tco: float
    l_gf: float
    rho: np.ndarray              # (N,)
    flm_per_sample: np.ndarray   # (N,)
    total: float

    def csv_row(self) -> str:
        cols = (self.l_ce, self.l_flm, self.l_tco, self.l_gf,
                float(self.rho.mean()), self.total)
        return ",".join(f"{v:.10g}" for v in cols)


def total_loss(parts: LossParts, rho: np.ndarray,
               cfg: LossConfig) -> Tuple[Tensor, LossBreakdown]:
    """Confidence-gated sum: l_ce + gate(rho) * flow term + l_tco + l_gf.

    rho is a per-sample vector of fused-softmax confidences, treated as a
    constant (no gradient reaches the gate). Per-sample gating multiplies each
    sample's mean flow row by (1 - rho_n); batch-mean gating scales the scalar
    flow loss by (1 - mean rho).
    """
    cfg.validate()
    rho = np.asarray(rho, dtype=np.float64)
    n = parts.n_samples
    if rho.shape != (n,):
        raise DimensionError(f"rho shape {rho.shape} mismatches batch {n}")
    if rho.min() <= 0 or rho.max() > 1:
        raise LossConfigError(f"rho entries must sit in (0, 1], got "
                              f"[{rho.min()}, {rho.max()}]")
    b = parts.flm_rows.data.shape[0]
    if b % n != 0:
        raise DimensionError(f"{b} flow rows do not tile {n} samples")
    per_sample = tmean(parts.flm_rows.reshape(n, b // n), axis=1)  # (N,)
    if cfg.rho_gating == "per-sample":
        gated = tmean(constant(1.0 - rho) * per_sample)
    else:
        gated = constant(1.0 - rho.mean()) * tmean(parts.flm_rows)
    total = parts.l_ce + gated + parts.l_tco + parts.l_gf
    breakdown = LossBreakdown(
        l_ce=float(parts.l_ce.data),
        l_flm=float(parts.flm_rows.data.mean()),
        l_flm_gated=float(gated.data),
        l_tco=float(parts.l_tco.data),
        l_gf=float(parts.l_gf.data),
        rho=rho.copy(),
        flm_per_sample=per_sample.data.copy(),
        total=float(total.data),
    )
    return total, breakdown
