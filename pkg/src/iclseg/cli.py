"""Command line: data generation, training, evaluation, verification."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .attention import ConfigError
from .config import parse_config, write_resolved
from .metrics import dsc, evaluate_volume, hd95
from .phantoms import make_split, read_sample, write_sample
from .trainer import ICLModel, load_checkpoint, restore_model, run_training
from .backbone import ModelConfig


def _out_dir(value: str | None) -> Path:
    root = value if value is not None else os.environ.get("ICL_OUT_DIR", ".")
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    out = _out_dir(args.out)
    overrides = list(args.set or []) + [
        f"train.master_seed={args.seed}",
        f"data.labeled={args.n_labeled}",
        f"data.unlabeled={args.n_unlabeled}",
        f"data.val={args.n_val}",
    ]
    cfg = parse_config(args.config, overrides)
    split = make_split(cfg.split_config())
    z = cfg["model"]["classes"]
    for pool, samples in (("labeled", split.labeled),
                          ("unlabeled", split.unlabeled),
                          ("val", split.val)):
        for i, sample in enumerate(samples):
            write_sample(sample, out / f"{pool}_{i:03d}.icls", z)
    print(f"labeled={len(split.labeled)} unlabeled={len(split.unlabeled)} "
          f"val={len(split.val)} -> {out}")
    return 0


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.supervised_only:
        overrides += ["train.mode=supervised", "train.alpha=0", "train.beta=0"]
    if args.sspa_only:
        overrides += ["train.mode=sspa", "train.alpha=0", "train.beta=0"]
    cfg = parse_config(args.config, overrides)
    out = _out_dir(args.out)
    write_resolved(cfg, out)
    split = make_split(cfg.split_config())
    result = run_training(split, cfg.model_config(), cfg.train_config(), out)
    print(f"best mean foreground DSC {result.best_dsc:.4f}; artifacts in {out}")
    return 0


def _load_data_dir(data_dir: Path):
    paths = sorted(Path(data_dir).glob("*.icls"))
    if not paths:
        raise ConfigError(f"no .icls samples under {data_dir}")
    samples = []
    z = None
    for p in paths:
        sample, z_file = read_sample(p)
        if z is None:
            z = z_file
        elif z != z_file:
            raise ConfigError(f"{p}: class count {z_file} differs from {z}")
        samples.append(sample)
    return samples, z


def _model_from_checkpoint(state, height, width, n_classes) -> ICLModel:
    key = "param/backbone/head/w"
    if key not in state:
        raise ConfigError(f"checkpoint lacks {key}; cannot infer model size")
    head_w = state[key]
    if head_w.shape[0] != n_classes:
        raise ConfigError(
            f"checkpoint has {head_w.shape[0]} classes, data has {n_classes}")
    config = ModelConfig(height=height, width=width, n_classes=n_classes,
                         base_width=head_w.shape[1], n_heads=1)
    model = ICLModel(config, seed=0, dtype=head_w.dtype.type)
    restore_model(model, state, backbone_only=True)
    return model


def cmd_eval(args) -> int:
    out = _out_dir(args.out)
    samples, z = _load_data_dir(args.data)
    gts = [s.mask for s in samples]
    if args.oracle:
        preds = [g.copy() for g in gts]
    else:
        state = load_checkpoint(args.checkpoint)
        h, w = samples[0].image.shape[-2:]
        model = _model_from_checkpoint(state, h, w, z)
        preds = list(model.predict(np.stack([s.image for s in samples])))
    rows = evaluate_volume(preds, gts, z)

    lines = ["class,dsc,hd95"]
    for row in rows:
        lines.append(f"{row.label},{row.dsc:.6f},{row.hd95:.6f}")
    (out / "eval_metrics.csv").write_text("\n".join(lines) + "\n")

    plot = ["sample,class,metric,value"]
    for i, (p, g) in enumerate(zip(preds, gts)):
        for c in range(1, z):
            plot.append(f"{i},{c},dsc,{dsc(p == c, g == c):.6f}")
            plot.append(f"{i},{c},hd95,{hd95(p == c, g == c):.6f}")
    (out / "plot_data.csv").write_text("\n".join(plot) + "\n")

    print("\n".join(lines))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(fast=args.fast)
    failed = False
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{mark} {r.name} ({r.seconds:.1f}s): {r.detail}")
        failed |= not r.passed
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iclseg",
        description="Semi-supervised phantom segmentation with proxy attention")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="materialize a dataset split to .icls files")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-labeled", type=int, default=4)
    g.add_argument("--n-unlabeled", type=int, default=60)
    g.add_argument("--n-val", type=int, default=20)
    g.add_argument("--out", default=None)
    g.add_argument("--config", default=None, help="key=value sectioned config file")
    g.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write metrics/checkpoints")
    t.add_argument("--config", default=None, help="key=value sectioned config file")
    t.add_argument("--out", default=None)
    t.add_argument("--supervised-only", action="store_true",
                   help="labeled data and final prediction loss only")
    t.add_argument("--sspa-only", action="store_true",
                   help="labeled data with multi-scale proxy supervision")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on exported samples")
    e.add_argument("--checkpoint", required=False, default=None)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself (sanity mode)")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the oracle/gradient/invariant suite")
    v.add_argument("--fast", action="store_true", help="reduced seed counts")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "eval" and not args.oracle and args.checkpoint is None:
        print("eval: --checkpoint is required unless --oracle is given", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
