"""Toy UNet-style encoder-decoder.

Four stride-2 encoder stages (widths C, 2C, 4C, 4C, capped so the deepest
decoder features match the proxy width 4C), a mirrored decoder with
additive skip connections, and taps after the decoder stages at 1/16,
1/8 and 1/4 resolution. Normalization is single-group (layer-norm-like)
so statistics never couple batch entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import ConfigError
from .autodiff import Tensor, tensor


@dataclass
class ModelConfig:
    height: int = 64
    width: int = 64
    n_classes: int = 4
    base_width: int = 8
    n_heads: int = 4

    def __post_init__(self):
        if self.height % 16 or self.width % 16:
            raise ConfigError(f"input size {self.height}x{self.width} must be divisible by 16")
        if self.base_width % self.n_heads:
            raise ConfigError(
                f"base width {self.base_width} must be divisible by {self.n_heads} heads")
        if self.n_classes < 2:
            raise ConfigError("need at least one foreground class")

    @property
    def scale_grids(self) -> list[tuple[int, int]]:
        h, w = self.height, self.width
        return [(h // 16, w // 16), (h // 8, w // 8), (h // 4, w // 4)]

    @property
    def scale_widths(self) -> tuple[int, int, int]:
        c = self.base_width
        return (4 * c, 2 * c, c)


@dataclass
class MultiScaleFeatures:
    """Decoder taps f1..f3 (coarse to fine) plus the full-resolution feature."""

    f1: Tensor
    f2: Tensor
    f3: Tensor
    final: Tensor

    def scales(self) -> list[Tensor]:
        return [self.f1, self.f2, self.f3]

    def at(self, i: int) -> "MultiScaleFeatures":
        """Per-image view of batched features."""
        return MultiScaleFeatures(*(ad.batch_select(f, i) for f in
                                    (self.f1, self.f2, self.f3, self.final)))


def _he_conv(rng, cout, cin, k, dtype):
    bound = math.sqrt(6.0 / (cin * k * k))
    return tensor(rng.uniform(-bound, bound, (cout, cin, k, k)),
                  requires_grad=True, dtype=dtype)


class ConvBlock:
    """3x3 conv (no bias) + single-group norm + ReLU."""

    def __init__(self, cin: int, cout: int, rng, dtype):
        self.w = _he_conv(rng, cout, cin, 3, dtype)
        self.gamma = tensor(np.ones(cout), requires_grad=True, dtype=dtype)
        self.beta = tensor(np.zeros(cout), requires_grad=True, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.relu(ad.group_norm(ad.conv2d(x, self.w), self.gamma, self.beta))

    def named_parameters(self, prefix: str):
        yield f"{prefix}/w", self.w
        yield f"{prefix}/gamma", self.gamma
        yield f"{prefix}/beta", self.beta


class Backbone:
    """Encoder-decoder producing class logits and the three decoder taps."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        c = config.base_width
        enc_widths = [c, 2 * c, 4 * c, 4 * c]
        ins = [1] + enc_widths[:-1]
        self.enc = [ConvBlock(i, o, rng, dtype) for i, o in zip(ins, enc_widths)]
        self.dec1 = ConvBlock(4 * c, 4 * c, rng, dtype)
        self.dec2 = ConvBlock(4 * c, 2 * c, rng, dtype)
        self.dec3 = ConvBlock(2 * c, c, rng, dtype)
        self.dec4 = ConvBlock(c, c, rng, dtype)
        self.dec5 = ConvBlock(c, c, rng, dtype)
        self.head_w = _he_conv(rng, config.n_classes, c, 1, dtype)
        self.head_b = tensor(np.zeros(config.n_classes), requires_grad=True, dtype=dtype)
        # additive skips require matching widths: enc3<->dec1 out, enc2<->dec2 out, enc1<->dec3 out
        assert enc_widths[2] == 4 * c and enc_widths[1] == 2 * c and enc_widths[0] == c

    def forward(self, image: Tensor) -> tuple[Tensor, MultiScaleFeatures]:
        cfg = self.config
        expect = (1, cfg.height, cfg.width)
        if image.shape[-3:] != expect:
            raise ad.ShapeError(f"backbone input {image.shape}, expected (...,) + {expect}")
        e1 = self.enc[0].forward(ad.avg_pool2(image))      # C   @ H/2
        e2 = self.enc[1].forward(ad.avg_pool2(e1))         # 2C  @ H/4
        e3 = self.enc[2].forward(ad.avg_pool2(e2))         # 4C  @ H/8
        e4 = self.enc[3].forward(ad.avg_pool2(e3))         # 4C  @ H/16

        f1 = self.dec1.forward(e4)                                         # 4C @ H/16
        g1, g2, g3 = cfg.scale_grids
        up1 = ad.bilinear_upsample(f1, *g2)
        f2 = self.dec2.forward(ad.add(up1, e3))                            # 2C @ H/8
        up2 = ad.bilinear_upsample(f2, *g3)
        f3 = self.dec3.forward(ad.add(up2, e2))                            # C  @ H/4
        up3 = ad.bilinear_upsample(f3, cfg.height // 2, cfg.width // 2)
        d4 = self.dec4.forward(ad.add(up3, e1))                            # C  @ H/2
        up4 = ad.bilinear_upsample(d4, cfg.height, cfg.width)
        final = self.dec5.forward(up4)                                     # C  @ H
        p = ad.conv2d(final, self.head_w, self.head_b)                     # Z  @ H
        return p, MultiScaleFeatures(f1, f2, f3, final)

    def named_parameters(self, prefix: str = "backbone"):
        for i, block in enumerate(self.enc):
            yield from block.named_parameters(f"{prefix}/enc{i + 1}")
        for name, block in (("dec1", self.dec1), ("dec2", self.dec2),
                            ("dec3", self.dec3), ("dec4", self.dec4),
                            ("dec5", self.dec5)):
            yield from block.named_parameters(f"{prefix}/{name}")
        yield f"{prefix}/head/w", self.head_w
        yield f"{prefix}/head/b", self.head_b


def tokenize(feature: Tensor) -> Tensor:
    """Row-major spatial flatten of a (c, h, w) map into (h*w, c) tokens."""
    c, h, w = feature.shape
    return ad.transpose(ad.reshape(feature, (c, h * w)))


def untokenize(tokens: Tensor, h: int, w: int) -> Tensor:
    """Exact inverse of ``tokenize``."""
    s, c = tokens.shape
    if s != h * w:
        raise ad.ShapeError(f"{s} tokens do not tile a {h}x{w} grid")
    return ad.reshape(ad.transpose(tokens), (c, h, w))
