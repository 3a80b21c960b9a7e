"""Loss terms and their composition into the four-part training objective.

The detach map is the central contract here: the consistency term treats
the proxy-stream maps as constants, the guidance term treats the network
prediction as a constant, and both detaches happen inside the loss
functions so callers cannot get the wiring wrong.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import ConfigError
from .autodiff import NumericError, ShapeError, Tensor, record_op

DICE_EPS = 1e-5


class DataError(ValueError):
    """Target labels outside the configured class range."""


def one_hot(target: np.ndarray, n_classes: int, dtype=np.float64) -> Tensor:
    """(h, w) integer labels to a constant (Z, h, w) indicator tensor."""
    target = np.asarray(target)
    if target.min() < 0 or target.max() >= n_classes:
        raise DataError(
            f"labels span [{target.min()}, {target.max()}], allowed [0, {n_classes})")
    oh = np.zeros((n_classes,) + target.shape, dtype=dtype)
    np.put_along_axis(oh, target[None].astype(np.intp), 1.0, axis=0)
    return Tensor(oh)


def soft_dice(probs: Tensor, target: Tensor, eps: float = DICE_EPS) -> Tensor:
    """Mean over classes of 1 - (2 sum(p t) + eps) / (sum p + sum t + eps).

    ``target`` may be one-hot or a probability map; background is included.
    """
    if probs.shape != target.shape:
        raise ShapeError(f"soft_dice: {probs.shape} vs {target.shape}")
    spatial = tuple(range(1, probs.ndim))
    inter = ad.tsum(ad.mul(probs, target), axis=spatial)
    sums = ad.add(ad.tsum(probs, axis=spatial), ad.tsum(target, axis=spatial))
    ratio = ad.div(inter * 2.0 + eps, sums + eps)
    return 1.0 - ad.tmean(ratio)


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean pixel cross-entropy from raw logits, stable via log-sum-exp."""
    tgt = np.asarray(target)
    if tgt.shape != logits.shape[1:]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs target {tgt.shape}")
    z = logits.shape[0]
    if tgt.min() < 0 or tgt.max() >= z:
        raise DataError(f"labels span [{tgt.min()}, {tgt.max()}], allowed [0, {z})")
    x = logits.data
    idx = tgt[None].astype(np.intp)
    m = x.max(axis=0, keepdims=True)
    lse = m[0] + np.log(np.exp(x - m).sum(axis=0))
    picked = np.take_along_axis(x, idx, axis=0)[0]
    npix = tgt.size
    out = Tensor(np.asarray((lse - picked).sum() / npix, dtype=x.dtype))

    def bwd(g):
        if not logits.requires_grad:
            return (None,)
        sm = np.exp(x - m)
        sm /= sm.sum(axis=0, keepdims=True)
        onehot = np.zeros_like(x)
        np.put_along_axis(onehot, idx, 1.0, axis=0)
        return (g * (sm - onehot) / npix,)

    return record_op(out, (logits,), bwd)


def _scale_mean(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc * (1.0 / len(terms))


def loss_spa(m_scales: list[Tensor], target: np.ndarray) -> Tensor:
    """Deep supervision of the per-scale proxy maps against the labels.

    Each map is bilinearly upsampled to label resolution, then scored by
    soft dice on its class softmax plus cross-entropy on the raw logits;
    scales are averaged uniformly.
    """
    target = np.asarray(target)
    h, w = target.shape
    oh = one_hot(target, m_scales[0].shape[0], dtype=m_scales[0].dtype)
    terms = []
    for m in m_scales:
        up = ad.bilinear_upsample(m, h, w)
        terms.append(ad.add(soft_dice(ad.softmax(up, axis=0), oh),
                            cross_entropy(up, target)))
    return _scale_mean(terms)


def loss_usc(g_scales: list[Tensor], p_unlabeled: Tensor) -> Tensor:
    """Guided maps chase the network's unlabeled prediction (held constant).

    Soft dice between the upsampled guided-map softmax and the softmax of
    the detached prediction; gradient flows only into the guided path.
    """
    h, w = p_unlabeled.shape[-2:]
    soft_ref = ad.softmax(ad.detach(p_unlabeled), axis=0)
    terms = []
    for g in g_scales:
        up = ad.bilinear_upsample(g, h, w)
        terms.append(soft_dice(ad.softmax(up, axis=0), soft_ref))
    return _scale_mean(terms)


def loss_con(g_scales: list[Tensor], m_scales: list[Tensor]) -> Tensor:
    """MSE consistency at native scale; the proxy-stream maps are detached."""
    terms = []
    for g, m in zip(g_scales, m_scales):
        if g.shape != m.shape:
            raise ShapeError(f"loss_con: {g.shape} vs {m.shape}")
        diff = ad.sub(ad.softmax(g, axis=0), ad.softmax(ad.detach(m), axis=0))
        terms.append(ad.tmean(ad.square(diff)))
    return _scale_mean(terms)


def loss_seg(p_labeled: Tensor, target: np.ndarray) -> Tensor:
    """Primary supervision on the full-resolution prediction."""
    oh = one_hot(np.asarray(target), p_labeled.shape[0], dtype=p_labeled.dtype)
    return ad.add(soft_dice(ad.softmax(p_labeled, axis=0), oh),
                  cross_entropy(p_labeled, target))


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 50.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"loss weights must be nonnegative, got {self}")


@dataclass
class LossReport:
    """Scalar view of one step's terms; ``total`` stays differentiable."""

    seg: float
    spa: float
    usc: float
    con: float
    total_value: float
    total: Tensor

    def terms(self) -> dict[str, float]:
        return {"seg": self.seg, "spa": self.spa, "usc": self.usc,
                "con": self.con, "total": self.total_value}

    def first_nonfinite(self) -> str | None:
        for name, value in self.terms().items():
            if not np.isfinite(value):
                return name
        return None


def loss_total(seg: Tensor, spa: Tensor | None, usc: Tensor | None,
               con: Tensor | None, weights: LossWeights) -> LossReport:
    """Combine supervised and unsupervised parts; missing terms count as 0."""
    total = seg
    if spa is not None:
        total = ad.add(total, spa)
    if usc is not None and weights.alpha != 0.0:
        total = ad.add(total, usc * weights.alpha)
    if con is not None and weights.beta != 0.0:
        total = ad.add(total, con * weights.beta)

    def val(t):
        return float(t.data) if t is not None else 0.0

    return LossReport(seg=val(seg), spa=val(spa), usc=val(usc), con=val(con),
                      total_value=float(total.data), total=total)
