"""The canonical finite-difference suite: every op, both model paths, every
loss, and the full gated objective, each checked on a tiny fixed instance.

Shared by the test suite and the `gradcheck` command so CI and the CLI agree
on what "gradients are right" means. All instances are seeded; the composite
check runs with the gradient stop disabled (a severed graph is *supposed* to
disagree with finite differences — the stop has its own dedicated test) and
with the confidence gate held fixed, matching its treat-as-constant contract.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .backbone import FeatureMap
from .config import RunConfig
from .encoder import EncoderParams, encode_video, representative_attention
from .losses import LossConfig, LossParts, loss_flm, loss_flm_rows, loss_gf, loss_tco, total_loss
from .model import forward, init_model, model_named_parameters
from .numerics import (
    DimensionError,
    FDReport,
    Tensor,
    avg_pool_axis,
    concat,
    conv1d_temporal,
    conv2d,
    cosine_similarity,
    cross_entropy_with_logits,
    finite_difference_check,
    l2_normalize_rows,
    layer_norm,
    linear,
    matmul,
    pairwise_cosine,
    relu,
    reshape,
    softmax_rows,
    stack,
    tabs,
    tmean,
    transpose,
    tsum,
)
from .relation import RelationParams, actor_path, fuse_and_classify, group_path

__all__ = ["run_suite", "suite_names", "format_reports"]


def _p(rng: np.random.Generator, shape, name: str) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def _op_checks(seed: int, max_coords: Optional[int]) -> List[FDReport]:
    rng = np.random.default_rng(seed)
    out: List[FDReport] = []

    def check(name, f, params):
        out.append(finite_difference_check(
            f, params, name=name, max_coords=max_coords,
            rng=np.random.default_rng(seed + 1)))

    a = _p(rng, (3, 4), "a")
    b = _p(rng, (4, 5), "b")
    check("op.matmul_relu", lambda: tsum(relu(matmul(a, b))), [a, b])

    c = _p(rng, (2, 3, 4), "c")
    d = _p(rng, (4, 3), "d")
    check("op.batched_matmul", lambda: tsum(matmul(c, d) * 0.3), [c, d])

    e = _p(rng, (4, 6), "e")
    check("op.softmax", lambda: tsum(softmax_rows(e) * constant_like(e.data.shape, seed)), [e])

    lg = _p(rng, (5, 7), "logits")
    labels = np.array([0, 3, 6, 2, 2])
    check("op.cross_entropy", lambda: cross_entropy_with_logits(lg, labels), [lg])

    x = _p(rng, (3, 5), "x")
    gn = _p(rng, (5,), "gain")
    bs = _p(rng, (5,), "bias")
    check("op.layer_norm", lambda: tsum(layer_norm(x, gn, bs) *
                                        constant_like((3, 5), seed + 2)), [x, gn, bs])

    u = _p(rng, (4, 6), "u")
    v = _p(rng, (3, 6), "v")
    check("op.pairwise_cosine", lambda: tsum(pairwise_cosine(u, v) *
                                             constant_like((4, 3), seed + 3)), [u, v])
    check("op.l2_normalize", lambda: tsum(l2_normalize_rows(u) *
                                          constant_like((4, 6), seed + 4)), [u])
    w1 = _p(rng, (2, 3, 5), "w1")
    w2 = _p(rng, (2, 3, 5), "w2")
    check("op.cosine_similarity", lambda: tsum(cosine_similarity(w1, w2)), [w1, w2])

    xc = _p(rng, (2, 6, 3), "xc")
    kc = _p(rng, (3, 3, 4), "kc")
    bc = _p(rng, (4,), "bc")
    check("op.conv1d_same", lambda: tsum(conv1d_temporal(xc, kc, bc, padding="same")),
          [xc, kc, bc])
    check("op.conv1d_valid_stride",
          lambda: tsum(relu(conv1d_temporal(xc, kc, bc, padding="valid", stride=2))),
          [xc, kc, bc])

    xi = _p(rng, (2, 3, 6, 5), "xi")
    ki = _p(rng, (4, 3, 3, 2), "ki")
    bi = _p(rng, (4,), "bi")
    check("op.conv2d", lambda: tsum(conv2d(xi, ki, bi, stride=(2, 1), padding=1)),
          [xi, ki, bi])
    check("op.avg_pool", lambda: tsum(avg_pool_axis(xi, 2) *
                                      constant_like((2, 3, 5), seed + 5)), [xi])
    check("op.abs", lambda: tsum(tabs(u)), [u])

    s1 = _p(rng, (2, 3), "s1")
    s2 = _p(rng, (2, 3), "s2")
    check("op.shape_mix",
          lambda: (tsum(tabs(concat([stack([s1, s2], axis=0)[0, 1:],
                                     s2[0:1, :]], axis=0)))
                   + tsum(transpose(s1, (1, 0)) * constant_like((3, 2), seed + 6))),
          [s1, s2])
    return out


def constant_like(shape, seed: int) -> Tensor:
    """A fixed random projection so sums don't hide sign errors."""
    return Tensor(np.random.default_rng(seed).normal(size=shape))


def _encoder_check(seed: int, max_coords: Optional[int]) -> List[FDReport]:
    rng = np.random.default_rng(seed)
    params = EncoderParams.init(rng, K=2, C=4, L=1, heads=2, use_ffn=True)
    feat = _p(rng, (2, 6, 4), "features")  # T=2, HW=6, C=4
    proj_t = constant_like((2, 2, 4), seed + 10)
    proj_a = constant_like((1, 2, 2, 6), seed + 11)

    def f():
        enc = encode_video(FeatureMap(values=feat, H=2, W=3), params)
        return tsum(enc.tokens * proj_t) + tsum(enc.att * proj_a)

    leaves = list(params.named_parameters().values()) + [feat]
    return [finite_difference_check(f, leaves, name="encoder.block",
                                    max_coords=max_coords,
                                    rng=np.random.default_rng(seed + 1))]


def _relation_checks(seed: int, max_coords: Optional[int]) -> List[FDReport]:
    rng = np.random.default_rng(seed)
    params = RelationParams.init(rng, C=4, n_classes=3, heads=2,
                                 group_kt=2, group_ks=2, detach_mode="off")
    W = _p(rng, (2, 4, 3, 4), "tokens")  # N=2, T=4, K=3, C=4
    labels = np.array([0, 2])
    leaves = list(params.named_parameters().values()) + [W]

    def f_actor():
        _, logits = actor_path(W, params)
        return cross_entropy_with_logits(logits, labels)

    def f_group():
        _, logits, frame_logits = group_path(W, params)
        return (cross_entropy_with_logits(logits, labels) +
                loss_gf(frame_logits, labels))

    rngs = [np.random.default_rng(seed + i) for i in (1, 2)]
    return [
        finite_difference_check(f_actor, leaves, name="relation.actor_path",
                                max_coords=max_coords, rng=rngs[0]),
        finite_difference_check(f_group, leaves, name="relation.group_path",
                                max_coords=max_coords, rng=rngs[1]),
    ]


def _loss_checks(seed: int, max_coords: Optional[int]) -> List[FDReport]:
    rng = np.random.default_rng(seed)
    att = _p(rng, (2, 4, 5), "att")
    m = np.abs(rng.normal(size=(4, 5)))
    w = _p(rng, (3, 4, 6), "w")
    fl = _p(rng, (2, 2, 4), "fl")
    labels = np.array([1, 3])
    out = []
    cases: List[Tuple[str, Callable[[], Tensor], list]] = [
        ("loss.flm", lambda: loss_flm(att, m, tau=0.6), [att]),
        ("loss.flm_l1", lambda: loss_flm(att, m, style="l1"), [att]),
        ("loss.tco", lambda: loss_tco(w, tau=0.6), [w]),
        ("loss.tco_l1", lambda: loss_tco(w, style="l1"), [w]),
        ("loss.gf", lambda: loss_gf(fl, labels), [fl]),
    ]
    for i, (name, f, leaves) in enumerate(cases):
        out.append(finite_difference_check(
            f, leaves, name=name, max_coords=max_coords,
            rng=np.random.default_rng(seed + i)))
    return out


def _composite_check(seed: int, max_coords: Optional[int]) -> List[FDReport]:
    cfg = RunConfig(channels=4, tokens=3, blocks=1, heads=2, widths=(4,),
                    n_classes=4, group_kt=2, group_ks=2, actor_layers=1,
                    group_layers=1, detach_mode="off", k_flm=2,
                    height=8, width=8, t_frames=3)
    model = init_model(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    # zero-init biases park ReLU pre-activations exactly on the kink, where
    # central differences straddle the corner; nudge every weight off it
    for t in model_named_parameters(model).values():
        t.data = t.data + 0.05 * rng.standard_normal(t.data.shape)
    frames = rng.uniform(0.0, 1.0, size=(2, 3, 8, 8, 3))
    labels = np.array([1, 3])
    flow = np.abs(rng.normal(size=(6, 16)))
    flow /= flow.max(axis=1, keepdims=True)
    lc = LossConfig(tau=0.6, k_flm=2)

    # the gate is a constant in the objective: freeze it at its initial value
    out0 = forward(model, frames)
    from .losses import confidence
    rho = confidence(out0.fused_logits)

    def f():
        out = forward(model, frames)
        n, t = 2, 3
        rep = representative_attention(out.att, lc.k_flm)
        rows = loss_flm_rows(rep, flow, tau=lc.tau)
        tok_tmajor = reshape(transpose(out.tokens, (1, 0, 2, 3)),
                             (t, n * model.encoder.K, model.encoder.C))
        parts = LossParts(
            l_ce=cross_entropy_with_logits(out.fused_logits, labels),
            flm_rows=rows,
            l_tco=loss_tco(tok_tmajor, tau=lc.tau),
            l_gf=loss_gf(out.frame_logits, labels),
            n_samples=n)
        total, _ = total_loss(parts, rho, lc)
        return total

    leaves = list(model_named_parameters(model).values())
    return [finite_difference_check(f, leaves, name="composite.eq_total",
                                    max_coords=max_coords,
                                    rng=np.random.default_rng(seed + 2))]


_SECTIONS = {
    "ops": _op_checks,
    "encoder": _encoder_check,
    "relation": _relation_checks,
    "losses": _loss_checks,
    "composite": _composite_check,
}


def suite_names() -> Tuple[str, ...]:
    return tuple(_SECTIONS)


def run_suite(seed: int = 0, max_coords: Optional[int] = 12,
              sections: Optional[List[str]] = None) -> List[FDReport]:
    """Run the whole suite (or named sections); returns one report per check."""
    if sections is not None:
        unknown = [s for s in sections if s not in _SECTIONS]
        if unknown:
            raise DimensionError(
                f"unknown gradcheck sections {unknown}; "
                f"choose from {list(_SECTIONS)}")
    reports: List[FDReport] = []
    for name, fn in _SECTIONS.items():
        if sections is not None and name not in sections:
            continue
        reports.extend(fn(seed, max_coords))
    return reports


def format_reports(reports: List[FDReport]) -> str:
    lines = [r.summary() for r in reports]
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} checks passed"
                 + (f", {n_fail} FAILED" if n_fail else ""))
    return "\n".join(lines)
