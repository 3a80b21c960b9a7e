"""Render a gallery of synthetic phantoms: a bright inner ellipse, its
ring, and an adjacent crescent over an ambiguous noisy background.

Writes phantom_gallery.png next to this script (needs matplotlib) and
always prints dataset statistics.

Run:  python3 demos/03_phantom_gallery.py
"""

from pathlib import Path

import numpy as np

from iclseg.phantoms import (SplitConfig, compose_batch, foreground_fraction,
                             generate_sample, make_split)

samples = [generate_sample(seed) for seed in range(8)]
fracs = [foreground_fraction(s) for s in samples]
print("foreground fraction over 8 seeds:",
      " ".join(f"{f:.3f}" for f in fracs))

split = make_split(SplitConfig())
print(f"split pools: labeled={len(split.labeled)} "
      f"unlabeled={len(split.unlabeled)} val={len(split.val)}")
labeled, unlabeled = compose_batch(split, step=0)
print(f"one batch: {len(labeled)} labeled pairs + {len(unlabeled)} unlabeled images")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; skipping the png")
else:
    fig, axes = plt.subplots(2, 8, figsize=(16, 4.2))
    for col, sample in enumerate(samples):
        axes[0, col].imshow(sample.image[0], cmap="gray", vmin=0, vmax=1)
        axes[1, col].imshow(sample.mask, cmap="viridis", vmin=0, vmax=3)
        axes[0, col].set_title(f"seed {sample.seed}", fontsize=8)
        for row in (0, 1):
            axes[row, col].axis("off")
    axes[0, 0].set_ylabel("image")
    axes[1, 0].set_ylabel("mask")
    out = Path(__file__).with_name("phantom_gallery.png")
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    print("wrote", out)
