"""Adam, the warmup/decay schedule, and the train/evaluate loops.

Training is deterministic given the config seed: data order, segment draws
and augmentations all derive from per-epoch seeded generators, so two runs
produce bitwise-identical checkpoints. Actor tracks are walled off for the
whole loop (weak supervision: only the video label and the flow maps are
consumed) and the flow maps themselves are used only here — evaluation never
touches them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ConfigError, RunConfig
from .encoder import representative_attention
from .losses import (
    LossBreakdown,
    LossConfig,
    LossParts,
    confidence,
    loss_flm_rows,
    loss_gf,
    loss_tco,
    total_loss,
)
from .metrics import attention_localization, confusion_matrix, mca, mpca
from .model import ModelParams, forward, model_named_parameters, save_checkpoint
from .numerics import (
    NonFiniteError,
    Tape,
    Tensor,
    backward,
    constant,
    cross_entropy_with_logits,
    reshape,
    set_finite_checks,
    transpose,
)
from .flowproc import flow_pipeline
from .relation import predict
from .synthdata import (
    TracksUnavailableError,
    VideoSample,
    horizontal_flip,
    key_attention_masks,
    segment_indices,
    tracks_disabled,
)

__all__ = [
    "TrainingError",
    "AdamState",
    "adam_step",
    "lr_at",
    "loss_config_from",
    "TrainLog",
    "train",
    "EvalReport",
    "evaluate",
]

STEP_CSV_HEADER = "step,l_ce,l_flm,l_tco,l_gf,mean_rho,total"
EPOCH_CSV_HEADER = "epoch,lr,mean_total,mean_ce,mean_flm,mean_tco,mean_gf,val_mca"


class TrainingError(Exception):
    """Aborted run: non-finite loss or inconsistent inputs."""


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment buffers per parameter name plus the step count."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, named: Dict[str, Tensor]) -> "AdamState":
        return cls(m={k: np.zeros_like(t.data) for k, t in named.items()},
                   v={k: np.zeros_like(t.data) for k, t in named.items()})


def adam_step(named: Dict[str, Tensor], state: AdamState, lr: float,
              cfg: RunConfig) -> None:
    """One in-place update. Missing gradients count as zero.

    Weight decay folds into the gradient before the moment update (classic
    coupled L2); `decoupled_decay` subtracts lr*wd*param separately instead.
    """
    if lr <= 0:
        raise TrainingError(f"learning rate must be positive, got {lr}")
    if set(named) != set(state.m):
        raise TrainingError("optimizer state does not match parameter set")
    b1, b2, eps, wd = cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in named.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise TrainingError(f"{name}: grad shape {g.shape} != param "
                                f"{p.data.shape}")
        if wd and not cfg.decoupled_decay:
            g = g + wd * p.data
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = (state.m[name] / bc1) / (np.sqrt(state.v[name] / bc2) + eps)
        new = p.data - lr * update
        if wd and cfg.decoupled_decay:
            new = new - lr * wd * p.data
        p.data = new


def lr_at(epoch: int, cfg: RunConfig) -> float:
    """Warmup lr_min -> lr_peak over `warmup_epochs`, hold one epoch, then
    linear decay to 0 at `epochs`. Queryable on [0, epochs]."""
    E, w = cfg.epochs, cfg.warmup_epochs
    if not 0 <= epoch <= E:
        raise TrainingError(f"epoch {epoch} outside [0, {E}]")
    if epoch <= w:
        if w == 0:
            return cfg.lr_peak
        return cfg.lr_min + (cfg.lr_peak - cfg.lr_min) * (epoch / w)
    if epoch <= w + 1:
        return cfg.lr_peak
    return cfg.lr_peak * (E - epoch) / (E - w - 1)


def loss_config_from(cfg: RunConfig) -> LossConfig:
    return LossConfig(tau=cfg.tau, k_flm=min(cfg.k_flm, cfg.tokens),
                      flm_style=cfg.flm_style, tco_style=cfg.tco_style,
                      rho_gating=cfg.rho_gating,
                      include_positive=cfg.include_positive)


# ---------------------------------------------------------------------------
# batch assembly


def _feature_grid(cfg: RunConfig) -> Tuple[int, int]:
    s = len(cfg.widths)
    if cfg.height % (1 << s) or cfg.width % (1 << s):
        raise ConfigError(f"frame extents ({cfg.height},{cfg.width}) not "
                          f"divisible by 2^{s}")
    return cfg.height >> s, cfg.width >> s


def _prepare_batch(samples: Sequence[VideoSample], cfg: RunConfig,
                   rng: np.random.Generator, with_flow: bool
                   ) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Segment-sample, augment, and collect one batch.

    Returns frames (N, T, H0, W0, 3), labels (N,) and, when requested,
    flow guidance rows (N*T, grid_h*grid_w)."""
    gh, gw = _feature_grid(cfg)
    t = cfg.t_frames
    frames, labels, flows = [], [], []
    for s in samples:
        if cfg.flip_augment and rng.random() < 0.5:
            s = horizontal_flip(s)
        t_raw = s.frames.shape[0]
        if cfg.sampling == "segment":
            idx = segment_indices(t_raw, t, "train", seed=rng)
        else:
            idx = np.sort(rng.choice(t_raw, size=t, replace=False))
        clip = s.frames[idx]
        if cfg.brightness_augment:
            clip = np.clip(clip * rng.uniform(0.8, 1.2), 0.0, 1.0)
        frames.append(clip)
        labels.append(s.label)
        if with_flow:
            if s.gt_flow is None:
                raise TrainingError(
                    "flow-guided loss enabled but the sample carries no flow")
            fm = flow_pipeline(s.gt_flow[idx], gh, gw, q=cfg.flow_q,
                               per_clip_norm=cfg.per_clip_norm)
            flows.append(fm.values)
    flow_rows = np.concatenate(flows, axis=0) if with_flow else None
    return np.stack(frames), np.asarray(labels, dtype=np.int64), flow_rows


def _batch_objective(params: ModelParams, frames: np.ndarray,
                     labels: np.ndarray, flow_rows: Optional[np.ndarray],
                     cfg: RunConfig, lc: LossConfig
                     ) -> Tuple[Tensor, LossBreakdown]:
    """Forward plus the gated objective for one batch (tape-recorded)."""
    n, t = frames.shape[0], frames.shape[1]
    out = forward(params, frames)
    l_ce = cross_entropy_with_logits(out.fused_logits, labels)
    if cfg.use_flm and flow_rows is not None:
        rep = representative_attention(out.att, lc.k_flm)
        rows = loss_flm_rows(rep, flow_rows, tau=lc.tau, style=lc.flm_style,
                             include_positive=lc.include_positive)
    else:
        rows = constant(np.zeros(n * t))
    if cfg.use_tco:
        k, c = params.encoder.K, params.encoder.C
        tok = reshape(transpose(out.tokens, (1, 0, 2, 3)), (t, n * k, c))
        l_tco = loss_tco(tok, tau=lc.tau, style=lc.tco_style,
                         include_positive=lc.include_positive)
    else:
        l_tco = constant(0.0)
    if cfg.use_gf and out.frame_logits is not None:
        l_gf = loss_gf(out.frame_logits, labels)
    else:
        l_gf = constant(0.0)
    parts = LossParts(l_ce=l_ce, flm_rows=rows, l_tco=l_tco, l_gf=l_gf,
                      n_samples=n)
    rho = confidence(out.fused_logits)
    return total_loss(parts, rho, lc)


# ---------------------------------------------------------------------------
# the loops


@dataclass
class TrainLog:
    steps: List[LossBreakdown] = field(default_factory=list)
    epochs: List[dict] = field(default_factory=list)

    def step_csv(self) -> str:
        lines = [STEP_CSV_HEADER]
        lines += [f"{i},{bd.csv_row()}" for i, bd in enumerate(self.steps)]
        return "\n".join(lines) + "\n"

    def epoch_csv(self) -> str:
        lines = [EPOCH_CSV_HEADER]
        for row in self.epochs:
            val = "" if row["val_mca"] is None else f"{row['val_mca']:.6f}"
            lines.append(f"{row['epoch']},{row['lr']:.10g},"
                         f"{row['mean_total']:.10g},{row['mean_ce']:.10g},"
                         f"{row['mean_flm']:.10g},{row['mean_tco']:.10g},"
                         f"{row['mean_gf']:.10g},{val}")
        return "\n".join(lines) + "\n"


def _diagnose_nonfinite(params, frames, labels, flow_rows, cfg, lc) -> str:
    """Re-run the failing step with per-op finite checks to name the culprit."""
    set_finite_checks(True)
    try:
        with Tape():
            _batch_objective(params, frames, labels, flow_rows, cfg, lc)
    except NonFiniteError as e:
        return str(e)
    finally:
        set_finite_checks(False)
    return "loss is non-finite but every op output was finite on re-run"


def train(train_samples: Sequence[VideoSample], params: ModelParams,
          cfg: RunConfig, out_dir: Optional[str] = None,
          val_samples: Optional[Sequence[VideoSample]] = None) -> TrainLog:
    """Optimize `params` in place; returns the per-step/per-epoch log.

    Writes steps.csv, epochs.csv and a final checkpoint under `out_dir`
    when given. Validation MCA is appended per epoch when `val_samples`
    is supplied.
    """
    if not train_samples:
        raise TrainingError("empty training set")
    cfg.validate()
    lc = loss_config_from(cfg)
    lc.validate()
    named = model_named_parameters(params)
    state = AdamState.init(named)
    log = TrainLog()
    n_train = len(train_samples)
    with tracks_disabled():
        for epoch in range(cfg.epochs):
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.train_seed, 0x7EA1, epoch]))
            order = rng.permutation(n_train)
            lr = lr_at(epoch, cfg)
            totals = []
            for lo in range(0, n_train, cfg.batch):
                batch = [train_samples[i] for i in order[lo:lo + cfg.batch]]
                frames, labels, flow_rows = _prepare_batch(
                    batch, cfg, rng, with_flow=cfg.use_flm)
                with Tape():
                    total, bd = _batch_objective(params, frames, labels,
                                                 flow_rows, cfg, lc)
                    if not np.isfinite(total.data):
                        msg = _diagnose_nonfinite(params, frames, labels,
                                                  flow_rows, cfg, lc)
                        raise TrainingError(
                            f"non-finite loss at epoch {epoch}, step "
                            f"{len(log.steps)}: {msg}")
                    backward(total)
                adam_step(named, state, lr, cfg)
                for p in named.values():
                    p.zero_grad()
                log.steps.append(bd)
                totals.append(bd.total)
            val = None
            if val_samples:
                val = evaluate(val_samples, params, cfg).mca
            ep_steps = log.steps[-len(totals):]
            log.epochs.append({
                "epoch": epoch, "lr": lr,
                "mean_total": float(np.mean(totals)),
                "mean_ce": float(np.mean([b.l_ce for b in ep_steps])),
                "mean_flm": float(np.mean([b.l_flm for b in ep_steps])),
                "mean_tco": float(np.mean([b.l_tco for b in ep_steps])),
                "mean_gf": float(np.mean([b.l_gf for b in ep_steps])),
                "val_mca": val})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "steps.csv"), "w") as fh:
            fh.write(log.step_csv())
        with open(os.path.join(out_dir, "epochs.csv"), "w") as fh:
            fh.write(log.epoch_csv())
        save_checkpoint(params, os.path.join(out_dir, "checkpoint"))
    return log


@dataclass
class EvalReport:
    confusion: np.ndarray
    mca: float
    mpca: float
    predictions: np.ndarray
    labels: np.ndarray
    localization: Optional[float]  # None when actor tracks are unavailable

    def localization_line(self) -> str:
        if self.localization is None:
            return "attention localization: n/a (no actor tracks)"
        return f"attention localization: {self.localization:.4f}"


def evaluate(samples: Sequence[VideoSample], params: ModelParams,
             cfg: RunConfig) -> EvalReport:
    """Deterministic center-frame evaluation; never reads the flow modality.

    Localization (mean representative-attention mass on key-actor cells)
    is reported when tracks are available and quietly skipped otherwise.
    """
    if not samples:
        raise TrainingError("empty evaluation set")
    if params.relation.n_classes != cfg.n_classes:
        raise ConfigError(f"model has {params.relation.n_classes} classes, "
                          f"config says {cfg.n_classes}")
    gh, gw = _feature_grid(cfg)
    t = cfg.t_frames
    k_flm = min(cfg.k_flm, params.encoder.K)
    preds, labels, locs = [], [], []
    for lo in range(0, len(samples), max(cfg.batch, 1)):
        chunk = samples[lo:lo + max(cfg.batch, 1)]
        idx_list = [segment_indices(s.frames.shape[0], t, "eval") for s in chunk]
        frames = np.stack([s.frames[idx] for s, idx in zip(chunk, idx_list)])
        out = forward(params, frames)  # no tape: inference only
        preds.extend(predict(out.fused_logits.data))
        labels.extend(s.label for s in chunk)
        rep = representative_attention(out.att, k_flm).data.mean(axis=0)
        rep = rep.reshape(len(chunk), t, gh * gw)
        for s, idx, att_rows in zip(chunk, idx_list, rep):
            try:
                masks = key_attention_masks(s, idx, gh, gw)
            except TracksUnavailableError:
                continue
            locs.append(attention_localization(att_rows, masks))
    cm = confusion_matrix(labels, preds, cfg.n_classes)
    return EvalReport(confusion=cm, mca=mca(cm), mpca=mpca(cm),
                      predictions=np.asarray(preds),
                      labels=np.asarray(labels),
                      localization=float(np.mean(locs)) if locs else None)
