"""Evaluation metrics and training losses on small worked examples,
each cross-checked against a brute-force oracle.

Run:  python3 demos/04_metrics_and_losses.py
"""

import numpy as np

import iclseg.autodiff as ad
import iclseg.losses as L
from iclseg import metrics, oracles
from iclseg.autodiff import tensor

# --- Dice and HD95 on two offset squares ---------------------------------
a = np.zeros((12, 12), bool)
b = np.zeros((12, 12), bool)
a[2:6, 2:6] = True
b[4:8, 5:9] = True
print(f"dsc  = {metrics.dsc(a, b):.4f}   (oracle {oracles.dsc_counts(a, b):.4f})")
print(f"hd95 = {metrics.hd95(a, b):.4f}   (oracle {oracles.hd95_exhaustive(a, b):.4f})")

# empty-mask policies: both empty scores perfectly, one empty is penalized
empty = np.zeros((12, 12), bool)
print("both empty  -> dsc", metrics.dsc(empty, empty), " hd95", metrics.hd95(empty, empty))
print("one empty   -> dsc", metrics.dsc(empty, a), f" hd95 {metrics.hd95(empty, a):.3f}"
      " (image diagonal)")

# --- soft dice + cross-entropy on a miniature prediction ------------------
rng = np.random.default_rng(3)
logits = tensor(rng.standard_normal((3, 4, 4)) * 2)
target = rng.integers(0, 3, (4, 4))
probs = ad.softmax(logits, axis=0)
onehot = L.one_hot(target, 3)
print(f"soft dice    = {L.soft_dice(probs, onehot).item():.6f}"
      f"   (oracle {oracles.soft_dice_direct(probs.data, onehot.data):.6f})")
print(f"cross entropy= {L.cross_entropy(logits, target).item():.6f}"
      f"   (oracle {oracles.cross_entropy_direct(logits.data, target):.6f})")

# --- the four-term objective ----------------------------------------------
maps = [tensor(rng.standard_normal((3, s, s))) for s in (1, 2, 4)]
guided = [tensor(rng.standard_normal((3, s, s))) for s in (1, 2, 4)]
p_l = tensor(rng.standard_normal((3, 16, 16)))
p_u = tensor(rng.standard_normal((3, 16, 16)))
y = rng.integers(0, 3, (16, 16))
report = L.loss_total(L.loss_seg(p_l, y), L.loss_spa(maps, y),
                      L.loss_usc(guided, p_u), L.loss_con(guided, maps),
                      L.LossWeights(alpha=1.0, beta=50.0))
for name, value in report.terms().items():
    print(f"  L_{name:5s} = {value:.4f}")
recomposed = report.seg + report.spa + 1.0 * report.usc + 50.0 * report.con
print(f"  recomposition gap = {abs(recomposed - report.total_value):.2e}")
