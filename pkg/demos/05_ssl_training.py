"""Miniature semi-supervised experiment: train the same backbone with and
without the proxy heads and unlabeled data, then compare validation Dice.

This is a scaled-down preview of the full comparison (the acceptance
suite runs 2000 iterations over three seeds); expect a few minutes.

Run:  python3 demos/05_ssl_training.py [iters]
"""

import sys
import time

import numpy as np

from iclseg.backbone import ModelConfig
from iclseg.phantoms import SplitConfig, compose_batch, make_split
from iclseg.trainer import ICLModel, SGD, TrainConfig, train_step, validate

ITERS = int(sys.argv[1]) if len(sys.argv) > 1 else 800
SEED = 0

split = make_split(SplitConfig(master_seed=SEED))
print(f"data: {len(split.labeled)} labeled / {len(split.unlabeled)} unlabeled "
      f"/ {len(split.val)} validation phantoms")

results = {}
for mode in ("supervised", "icl"):
    cfg = TrainConfig(mode=mode, dtype="float32", master_seed=SEED,
                      max_iters=ITERS, val_every=max(50, ITERS // 10))
    model = ICLModel(ModelConfig(), SEED, cfg.np_dtype)
    opt = SGD(model.named_parameters(), cfg.momentum, cfg.weight_decay)
    best = -1.0
    t0 = time.time()
    for it in range(cfg.max_iters):
        report = train_step(model, opt, compose_batch(split, it), cfg, it)
        if (it + 1) % cfg.val_every == 0:
            rows = validate(model, split.val, 4)
            best = max(best, rows[-1].dsc)
            print(f"  {mode:10s} it {it + 1:4d}  total {report.total_value:6.3f}"
                  f"  val mean DSC {rows[-1].dsc:.4f}")
    results[mode] = best
    print(f"{mode}: best mean foreground DSC {best:.4f} "
          f"({time.time() - t0:.0f}s)\n")

gap = 100 * (results["icl"] - results["supervised"])
print(f"unlabeled data bought {gap:+.2f} DSC points at this scale")
