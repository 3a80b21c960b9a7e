"""Class-proxy cross-attention: single-head CA, multi-head aggregation,
attention-map extraction, and the residual per-scale proxy update chain.

Queries are the learnable per-class proxies; keys and values come from
tokenized feature maps. The softmax temperature divides by sqrt of the
full pre-projection channel width, not the per-head width.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, tensor


class ConfigError(ValueError):
    """Invalid structural configuration (head counts, scale dims, ...)."""


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return tensor(rng.uniform(-bound, bound, shape), requires_grad=True, dtype=dtype)


def _zeros(shape, dtype):
    return tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def _ones(shape, dtype):
    return tensor(np.ones(shape), requires_grad=True, dtype=dtype)


class HeadParams:
    """Projection triple of one attention head: d_model -> d_head each."""

    def __init__(self, d_model: int, d_head: int, rng, dtype):
        self.w_q = _uniform(rng, (d_model, d_head), d_model, dtype)
        self.w_k = _uniform(rng, (d_model, d_head), d_model, dtype)
        self.w_v = _uniform(rng, (d_model, d_head), d_model, dtype)

    def named_parameters(self, prefix: str):
        yield f"{prefix}/wq", self.w_q
        yield f"{prefix}/wk", self.w_k
        yield f"{prefix}/wv", self.w_v


def cross_attention(q_in: Tensor, t_in: Tensor, head: HeadParams,
                    d_scale: int) -> tuple[Tensor, Tensor]:
    """Single-head cross-attention.

    Returns (out, logits) with out = softmax(q k^T / sqrt(d_scale)) v,
    logits the pre-softmax scores of shape (Z, S). ``d_scale`` is the
    channel width of the current scale.
    """
    if q_in.shape[-1] != t_in.shape[-1]:
        raise ConfigError(
            f"cross_attention: query dim {q_in.shape} vs token dim {t_in.shape}")
    q = ad.matmul(q_in, head.w_q)
    k = ad.matmul(t_in, head.w_k)
    v = ad.matmul(t_in, head.w_v)
    logits = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(d_scale))
    out = ad.matmul(ad.softmax(logits, axis=1), v)
    return out, logits


class MultiHeadCrossAttention:
    """N independent heads, concatenated and projected by an output matrix."""

    def __init__(self, d_model: int, n_heads: int, rng, dtype=np.float64):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.heads = [HeadParams(d_model, self.d_head, rng, dtype) for _ in range(n_heads)]
        # zero output projection: residual branches start at identity, which
        # keeps the chain stable while the heavily weighted consistency term
        # is already active from the first step
        self.w_out = _zeros((d_model, d_model), dtype)

    def forward(self, q_in: Tensor, t_in: Tensor) -> tuple[Tensor, list[Tensor]]:
        outs = []
        logits = []
        for head in self.heads:
            o, l = cross_attention(q_in, t_in, head, self.d_model)
            outs.append(o)
            logits.append(l)
        merged = outs[0] if self.n_heads == 1 else ad.concat(outs, axis=1)
        return ad.matmul(merged, self.w_out), logits

    def named_parameters(self, prefix: str):
        for i, head in enumerate(self.heads):
            yield from head.named_parameters(f"{prefix}/head{i}")
        yield f"{prefix}/wo", self.w_out


def multi_head_cross_attention(q_in: Tensor, t_in: Tensor,
                               mca: MultiHeadCrossAttention) -> tuple[Tensor, list[Tensor]]:
    return mca.forward(q_in, t_in)


def extract_attention_map(per_head_logits: list[Tensor], h: int, w: int) -> Tensor:
    """Per-class spatial logit map: mean over heads, reshaped to (Z, h, w)."""
    shapes = {l.shape for l in per_head_logits}
    if len(shapes) != 1:
        raise ConfigError(f"attention heads disagree on logit shape: {shapes}")
    z, s = per_head_logits[0].shape
    if s != h * w:
        raise ConfigError(f"token count {s} does not tile a {h}x{w} grid")
    acc = per_head_logits[0]
    for l in per_head_logits[1:]:
        acc = ad.add(acc, l)
    return ad.reshape(acc * (1.0 / len(per_head_logits)), (z, h, w))


class CrossAttentionBlock:
    """One proxy-update stage: pre-norm MCA and MLP residuals, then an
    optional 1x1 channel-halving projection feeding the next scale."""

    def __init__(self, d_model: int, n_heads: int, rng, reduce: bool = True,
                 dtype=np.float64):
        self.d_model = d_model
        self.mca = MultiHeadCrossAttention(d_model, n_heads, rng, dtype)
        self.norm_q = (_ones(d_model, dtype), _zeros(d_model, dtype))
        self.norm_t = (_ones(d_model, dtype), _zeros(d_model, dtype))
        self.norm_mlp = (_ones(d_model, dtype), _zeros(d_model, dtype))
        hidden = 2 * d_model
        self.mlp_w1 = _uniform(rng, (d_model, hidden), d_model, dtype)
        self.mlp_b1 = _zeros(hidden, dtype)
        self.mlp_w2 = _zeros((hidden, d_model), dtype)  # second residual branch too
        self.mlp_b2 = _zeros(d_model, dtype)
        if reduce:
            self.reduce_w = _uniform(rng, (d_model, d_model // 2), d_model, dtype)
            self.reduce_b = _zeros(d_model // 2, dtype)
        else:
            self.reduce_w = None
            self.reduce_b = None

    @property
    def d_out(self) -> int:
        return self.d_model if self.reduce_w is None else self.d_model // 2

    def update(self, q: Tensor, t: Tensor) -> tuple[Tensor, Tensor, list[Tensor]]:
        """Returns (q_next, updated, per_head_logits).

        ``updated`` is the residual-refined proxy at this scale's width;
        ``q_next`` is the same after channel reduction (identity at the
        last scale) and is what the following scale consumes.
        """
        if q.shape[1] != self.d_model or t.shape[1] != self.d_model:
            raise ConfigError(
                f"block width {self.d_model}: got proxy {q.shape}, tokens {t.shape}")
        qn = ad.layer_norm(q, *self.norm_q)
        tn = ad.layer_norm(t, *self.norm_t)
        mca_out, head_logits = self.mca.forward(qn, tn)
        q_hat = ad.add(mca_out, q)
        hid = ad.layer_norm(q_hat, *self.norm_mlp)
        hid = ad.gelu(ad.add_row_bias(ad.matmul(hid, self.mlp_w1), self.mlp_b1))
        mlp_out = ad.add_row_bias(ad.matmul(hid, self.mlp_w2), self.mlp_b2)
        updated = ad.add(mlp_out, q_hat)
        if self.reduce_w is None:
            q_next = updated
        else:
            q_next = ad.add_row_bias(ad.matmul(updated, self.reduce_w), self.reduce_b)
        return q_next, updated, head_logits

    def named_parameters(self, prefix: str):
        yield from self.mca.named_parameters(f"{prefix}/mca")
        for name, pair in (("normq", self.norm_q), ("normt", self.norm_t),
                           ("normmlp", self.norm_mlp)):
            yield f"{prefix}/{name}/gamma", pair[0]
            yield f"{prefix}/{name}/beta", pair[1]
        yield f"{prefix}/mlp/w1", self.mlp_w1
        yield f"{prefix}/mlp/b1", self.mlp_b1
        yield f"{prefix}/mlp/w2", self.mlp_w2
        yield f"{prefix}/mlp/b2", self.mlp_b2
        if self.reduce_w is not None:
            yield f"{prefix}/reduce/w", self.reduce_w
            yield f"{prefix}/reduce/b", self.reduce_b


def proxy_update(q: Tensor, t: Tensor, block: CrossAttentionBlock,
                 grid: tuple[int, int]) -> tuple[Tensor, Tensor]:
    """Spec surface of one update stage: (reduced proxy, attention map)."""
    q_next, _, head_logits = block.update(q, t)
    return q_next, extract_attention_map(head_logits, *grid)


class ProxyChain:
    """Learnable class proxies plus the three chained per-scale blocks.

    Widths follow the feature pyramid 4C -> 2C -> C; the final stage keeps
    its width. The unlabeled stream enters through a detached copy of the
    proxies, so no unlabeled-stream output can ever route gradient into
    them; the block weights themselves stay shared between streams.
    """

    STREAMS = ("labeled", "unlabeled")

    def __init__(self, n_classes: int, base_width: int, n_heads: int,
                 grids, rng, dtype=np.float64):
        dims = (4 * base_width, 2 * base_width, base_width)
        for d in dims:
            if d % n_heads != 0:
                raise ConfigError(f"scale width {d} not divisible by {n_heads} heads")
        if len(grids) != 3:
            raise ConfigError(f"expected 3 scale grids, got {len(grids)}")
        self.dims = dims
        self.grids = [tuple(g) for g in grids]
        self.q0 = tensor(rng.normal(0.0, 0.02, (n_classes, dims[0])),
                         requires_grad=True, dtype=dtype)
        self.blocks = [
            CrossAttentionBlock(dims[0], n_heads, rng, reduce=True, dtype=dtype),
            CrossAttentionBlock(dims[1], n_heads, rng, reduce=True, dtype=dtype),
            CrossAttentionBlock(dims[2], n_heads, rng, reduce=False, dtype=dtype),
        ]

    def run(self, tokens_per_scale, stream: str) -> tuple[list[Tensor], list[Tensor]]:
        """Chain the proxy through all scales against the given tokens.

        Returns (proxies, maps): the per-scale refined proxies at widths
        (4C, 2C, C) and the per-scale attention maps (Z, h, w).
        """
        if stream not in self.STREAMS:
            raise ConfigError(f"unknown stream {stream!r}")
        if len(tokens_per_scale) != 3:
            raise ConfigError(f"expected tokens for 3 scales, got {len(tokens_per_scale)}")
        for t, d, (h, w) in zip(tokens_per_scale, self.dims, self.grids):
            if t.shape != (h * w, d):
                raise ConfigError(
                    f"scale tokens {t.shape} do not match ({h * w}, {d})")
        q = ad.detach(self.q0) if stream == "unlabeled" else self.q0
        proxies = []
        maps = []
        for block, toks, grid in zip(self.blocks, tokens_per_scale, self.grids):
            q_next, updated, head_logits = block.update(q, toks)
            proxies.append(updated)
            maps.append(extract_attention_map(head_logits, *grid))
            q = q_next
        return proxies, maps

    def named_parameters(self, prefix: str = "proxy"):
        yield f"{prefix}/q0", self.q0
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}/scale{i + 1}")
