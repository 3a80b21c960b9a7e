"""SSPA and USCL: the two training-only heads over backbone features.

SSPA chains the learnable class proxies through the three decoder scales
(labeled stream feeds the proxies, unlabeled stream runs detached) and
maps each scale's attention map to segmentation logits. USCL re-applies
the labeled-stream proxies to unlabeled tokens with its own attention
blocks, one per scale without chaining, to produce the guided maps.
Neither head exists on the inference path.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .attention import (ConfigError, MultiHeadCrossAttention, ProxyChain,
                        extract_attention_map)
from .autodiff import Tensor, tensor
from .backbone import ModelConfig, MultiScaleFeatures, tokenize


class SegHead:
    """3x3 conv over the Z map channels, one per scale per module.

    Initialized small so the early maps stay near-uniform: the heavily
    weighted consistency term otherwise floods the backbone with
    noise-agreement gradients before the proxies mean anything.
    """

    INIT_BOUND = 0.05

    def __init__(self, n_classes: int, rng, dtype):
        self.w = tensor(rng.uniform(-self.INIT_BOUND, self.INIT_BOUND,
                                    (n_classes, n_classes, 3, 3)),
                        requires_grad=True, dtype=dtype)
        self.b = tensor(np.zeros(n_classes), requires_grad=True, dtype=dtype)

    def forward(self, amap: Tensor) -> Tensor:
        return ad.conv2d(amap, self.w, self.b)

    def named_parameters(self, prefix: str):
        yield f"{prefix}/w", self.w
        yield f"{prefix}/b", self.b


class SSPA:
    """Supervised proxy adaptor: proxy chain plus per-scale seg heads."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float64):
        self.config = config
        self.chain = ProxyChain(config.n_classes, config.base_width, config.n_heads,
                                config.scale_grids, rng, dtype)
        self.seg_heads = [SegHead(config.n_classes, rng, dtype) for _ in range(3)]

    def forward(self, feats_labeled: MultiScaleFeatures,
                feats_unlabeled: MultiScaleFeatures | None):
        """Returns (m_labeled, m_unlabeled, proxies).

        ``m_unlabeled`` is None when no unlabeled features are given
        (labeled-only training). ``proxies`` are the labeled-stream
        refined proxies handed on to USCL, deliberately not detached.
        """
        toks_l = [tokenize(f) for f in feats_labeled.scales()]
        proxies, maps_l = self.chain.run(toks_l, "labeled")
        m_l = [head.forward(a) for head, a in zip(self.seg_heads, maps_l)]
        if feats_unlabeled is None:
            return m_l, None, proxies
        toks_u = [tokenize(f) for f in feats_unlabeled.scales()]
        _, maps_u = self.chain.run(toks_u, "unlabeled")
        m_u = [head.forward(a) for head, a in zip(self.seg_heads, maps_u)]
        return m_l, m_u, proxies

    @property
    def q0(self) -> Tensor:
        return self.chain.q0

    def named_parameters(self, prefix: str = "sspa"):
        yield from self.chain.named_parameters(f"{prefix}/chain")
        for i, head in enumerate(self.seg_heads):
            yield from head.named_parameters(f"{prefix}/seghead{i + 1}")


class USCL:
    """Unsupervised consistent learner: per-scale attention, no chaining."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float64):
        self.config = config
        self.grids = config.scale_grids
        self.mcas = [MultiHeadCrossAttention(d, config.n_heads, rng, dtype)
                     for d in config.scale_widths]
        self.seg_heads = [SegHead(config.n_classes, rng, dtype) for _ in range(3)]

    def forward(self, feats_unlabeled: MultiScaleFeatures, proxies) -> list[Tensor]:
        """Guided maps G per scale from the SSPA proxies (used as queries)."""
        if len(proxies) != 3:
            raise ConfigError(f"expected 3 proxies, got {len(proxies)}")
        guided = []
        for mca, head, feat, proxy, grid in zip(self.mcas, self.seg_heads,
                                                feats_unlabeled.scales(), proxies,
                                                self.grids):
            if proxy.shape[1] != mca.d_model:
                raise ConfigError(
                    f"proxy width {proxy.shape[1]} does not match scale width {mca.d_model}")
            toks = tokenize(feat)
            _, logits = mca.forward(proxy, toks)
            amap = extract_attention_map(logits, *grid)
            guided.append(head.forward(amap))
        return guided

    def named_parameters(self, prefix: str = "uscl"):
        for i, mca in enumerate(self.mcas):
            yield from mca.named_parameters(f"{prefix}/scale{i + 1}")
        for i, head in enumerate(self.seg_heads):
            yield from head.named_parameters(f"{prefix}/seghead{i + 1}")
