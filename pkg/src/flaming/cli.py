"""Operator surface: generate / train / eval / gradcheck / export-attention
/ flowprep as one entry point with subcommands.

Exit codes are uniform across subcommands: 0 success, 1 check or training
failure, 2 configuration problem, 3 I/O problem.  Every config key can be
overridden by a flag of the same name, and each run writes a resolved-config
snapshot next to its outputs so it can be reproduced from that file alone.
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from .config import (ConfigError, RunConfig, config_keys, format_value,
                     load_config, resolved_text)
from .flowproc import flow_pipeline
from .gradsuite import format_reports, run_suite, suite_names
from .losses import LossConfigError
from .metrics import mca, merged_mca, mpca, render_confusion
from .model import init_model, forward, load_checkpoint
from .numerics import DimensionError, NonFiniteError, TensorIOError
from .numerics.tensor_io import read_tensor, write_tensor
from .encoder import representative_attention
from .synthdata import (CLASS_NAMES, DatasetError, GenConfig, GenerationError,
                        flip_class, generate_dataset, read_dataset,
                        segment_indices, write_dataset)
from .training import TrainingError, evaluate, train

__all__ = ["main"]

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_IO = 3

_SPLIT_NAMES = ("train", "val", "test")
_SPLIT_FRACTIONS = (0.70, 0.15)  # remainder is the test split


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    group = sub.add_argument_group(
        "config overrides", "any config key, highest precedence")
    for key in config_keys():
        default = getattr(RunConfig, key)
        group.add_argument(f"--{key}", metavar=type(default).__name__.upper(),
                           help=f"default {format_value(default)}")


def _collect_overrides(args: argparse.Namespace) -> Dict[str, str]:
    out = {}
    for key in config_keys():
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    return load_config(getattr(args, "config", None), _collect_overrides(args))


def _snapshot(cfg: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w",
              encoding="utf-8") as fh:
        fh.write(resolved_text(cfg))


def _gen_config(cfg: RunConfig) -> GenConfig:
    return GenConfig(H0=cfg.height, W0=cfg.width, T_raw=cfg.t_raw,
                     actor_min=cfg.actor_min, actor_max=cfg.actor_max,
                     speed_min=cfg.speed_min, speed_max=cfg.speed_max,
                     jitter_amplitude=cfg.jitter, seed=cfg.data_seed)


def _write_pgm(path: str, grid: np.ndarray) -> None:
    """8-bit binary PGM, values scaled so the map's peak is white."""
    a = np.asarray(grid, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"PGM wants a 2-d map, got {a.shape}")
    peak = a.max()
    img = (np.zeros(a.shape, dtype=np.uint8) if peak <= 0
           else np.round(a * (255.0 / peak)).astype(np.uint8))
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if args.seed is not None:
        cfg.data_seed = args.seed
    if args.count <= 0:
        raise ConfigError(f"--count must be positive, got {args.count}")
    cfg.validate()
    samples = generate_dataset(_gen_config(cfg), args.count)
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.data_seed, 0x5417]))
    order = rng.permutation(args.count)
    n_train = int(args.count * _SPLIT_FRACTIONS[0])
    n_val = int(args.count * _SPLIT_FRACTIONS[1])
    bounds = (0, n_train, n_train + n_val, args.count)
    _snapshot(cfg, args.out)
    for name, lo, hi in zip(_SPLIT_NAMES, bounds, bounds[1:]):
        part = [samples[i] for i in order[lo:hi]]
        write_dataset(part, os.path.join(args.out, name))
        print(f"{name}: {len(part)} samples")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg.validate()
    train_s = read_dataset(os.path.join(args.data, "train"))
    val_dir = os.path.join(args.data, "val")
    val_s = (read_dataset(val_dir, load_flow=False)
             if os.path.isdir(val_dir) else None)
    _snapshot(cfg, args.out)
    params = init_model(cfg, seed=cfg.train_seed)
    log = train(train_s, params, cfg, out_dir=args.out, val_samples=val_s)
    last = log.epochs[-1]
    val = "n/a" if last["val_mca"] is None else f"{last['val_mca']:.4f}"
    print(f"trained {cfg.epochs} epochs; final mean loss "
          f"{last['mean_total']:.4f}, val accuracy {val}")
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint')}")
    return EXIT_OK


def _mirror_merge() -> Dict[int, int]:
    """Fold each class onto its horizontal-mirror partner (direction-blind)."""
    return {c: min(c, flip_class(c)) for c in range(len(CLASS_NAMES))}


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    params = load_checkpoint(args.checkpoint, cfg)
    cfg = params.cfg
    samples = read_dataset(args.data, load_flow=False)
    rep = evaluate(samples, params, cfg)
    print(f"samples:    {len(samples)}")
    print(f"MCA:        {rep.mca:.4f}")
    print(f"MPCA:       {rep.mpca:.4f}")
    print(f"merged-MCA: {merged_mca(rep.confusion, _mirror_merge()):.4f} "
          "(mirror-direction pairs folded)")
    if rep.localization is not None:
        print(f"key-actor attention mass: {rep.localization:.4f}")
    table = render_confusion(rep.confusion, list(CLASS_NAMES))
    print(table)
    out_path = os.path.join(args.checkpoint, "eval_confusion.txt")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(f"confusion table written to {out_path}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.config is not None:
        load_config(args.config, _collect_overrides(args)).validate()
    sections = args.sections.split(",") if args.sections else None
    reports = run_suite(seed=args.seed, max_coords=args.max_coords,
                        sections=sections)
    print(format_reports(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def cmd_export_attention(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    params = load_checkpoint(args.checkpoint, cfg)
    cfg = params.cfg
    samples = read_dataset(args.data, load_flow=False)
    if not 0 <= args.sample < len(samples):
        raise ConfigError(
            f"--sample {args.sample} out of range (dataset has {len(samples)})")
    s = samples[args.sample]
    idx = segment_indices(s.frames.shape[0], cfg.t_frames, "eval")
    out = forward(params, s.frames[np.newaxis, idx])
    k_flm = min(cfg.k_flm, params.encoder.K)
    att = out.att.data  # (L, T, K, HW)
    gh, gw = out.feat_h, out.feat_w
    rep = representative_attention(out.att, k_flm).data  # (L, T, HW)
    os.makedirs(args.out, exist_ok=True)
    _snapshot(cfg, args.out)
    n_files = 0
    for l in range(att.shape[0]):
        for t in range(att.shape[1]):
            _write_pgm(os.path.join(args.out, f"block{l}_frame{t}.pgm"),
                       rep[l, t].reshape(gh, gw))
            n_files += 1
    for k in range(min(3, att.shape[2])):
        for t in range(att.shape[1]):
            _write_pgm(os.path.join(args.out, f"token{k}_frame{t}.pgm"),
                       att[-1, t, k].reshape(gh, gw))
            n_files += 1
    print(f"wrote {n_files} PGM maps ({gh}x{gw}) to {args.out}")
    return EXIT_OK


def cmd_flowprep(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if args.q is not None:
        cfg.flow_q = float(args.q)
    cfg.validate()
    raw = read_tensor(args.in_path)
    if raw.ndim != 3:
        raise ConfigError(
            f"expected a (T, H0, W0) flow-magnitude tensor, got {raw.shape}")
    s = len(cfg.widths)
    gh, gw = cfg.height >> s, cfg.width >> s
    fm = flow_pipeline(raw, gh, gw, q=cfg.flow_q,
                       per_clip_norm=cfg.per_clip_norm)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_tensor(args.out, fm.values.reshape(-1, gh, gw))
    _snapshot(cfg, out_dir)
    print(f"flow guidance {raw.shape} -> ({raw.shape[0]}, {gh}, {gw}) "
          f"written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flaming",
        description="Motion-guided group-activity recognition workbench.")
    subs = parser.add_subparsers(dest="command", required=True)

    def sub(name, fn, help_):
        p = subs.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value config file")
        p.set_defaults(func=fn)
        return p

    p = sub("generate", cmd_generate,
            "synthesize a dataset, split train/val/test 70/15/15")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--count", type=int, required=True,
                   help="total number of clips")
    p.add_argument("--seed", type=int, help="shorthand for --data_seed")
    _add_config_flags(p)

    p = sub("train", cmd_train, "train on a generated dataset")
    p.add_argument("--data", required=True,
                   help="dataset root holding train/ (and optionally val/)")
    p.add_argument("--out", required=True,
                   help="run directory for logs and the checkpoint")
    _add_config_flags(p)

    p = sub("eval", cmd_eval, "score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True,
                   help="split directory (holds manifest.tsv); flow files "
                        "are never read")
    _add_config_flags(p)

    p = sub("gradcheck", cmd_gradcheck,
            "run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0, help="probe-instance seed")
    p.add_argument("--max-coords", type=int, default=12,
                   help="coordinates probed per tensor")
    p.add_argument("--sections",
                   help=f"comma list from: {','.join(suite_names())}")
    _add_config_flags(p)

    p = sub("export-attention", cmd_export_attention,
            "write attention maps of one clip as PGM images")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="split directory")
    p.add_argument("--sample", type=int, required=True,
                   help="clip index within the split")
    p.add_argument("--out", required=True, help="image output directory")
    _add_config_flags(p)

    p = sub("flowprep", cmd_flowprep,
            "quantile-suppress + downsample a raw flow tensor")
    p.add_argument("--in", dest="in_path", required=True,
                   help="input (T, H0, W0) tensor file")
    p.add_argument("--out", required=True, help="output tensor file")
    p.add_argument("--q", type=float,
                   help="suppression quantile (shorthand for --flow_q)")
    _add_config_flags(p)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LossConfigError, GenerationError,
            DimensionError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TensorIOError, DatasetError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, NonFiniteError) as e:
        print(f"run failed: {e}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
