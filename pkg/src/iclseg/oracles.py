"""Brute-force reference implementations used to cross-check the fast paths.

Everything here is deliberately written as plain loops or direct formula
evaluation over numpy float64 scalars, independent of the autodiff ops it
is used to verify. Slow and obvious on purpose.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def softmax_direct(v):
    """Unshifted exp-normalize along the last axis of a vector."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v)
    return e / e.sum()


def conv2d_loops(x, w):
    """Nested-loop stride-1 cross-correlation, zero padding (k-1)/2."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    cin, h, wd = x.shape
    cout, cin2, k, k2 = w.shape
    assert cin == cin2 and k == k2
    pad = (k - 1) // 2
    out = np.zeros((cout, h, wd))
    for co in range(cout):
        for i in range(h):
            for j in range(wd):
                acc = 0.0
                for ci in range(cin):
                    for ki in range(k):
                        for kj in range(k):
                            ii = i + ki - pad
                            jj = j + kj - pad
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += x[ci, ii, jj] * w[co, ci, ki, kj]
                out[co, i, j] = acc
    return out


def bilinear_point(x, out_h, out_w):
    """Per-pixel evaluation of the align-corners-false source formula."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (out_h, out_w))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        wy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            wx = sx - x0
            out[..., i, j] = ((1 - wy) * (1 - wx) * x[..., y0, x0]
                              + (1 - wy) * wx * x[..., y0, x1]
                              + wy * (1 - wx) * x[..., y1, x0]
                              + wy * wx * x[..., y1, x1])
    return out


def layer_norm_two_pass(row, gamma, beta, eps=1e-5):
    row = np.asarray(row, dtype=np.float64)
    mu = sum(row) / len(row)
    var = sum((v - mu) ** 2 for v in row) / len(row)
    return np.array([(v - mu) / math.sqrt(var + eps) * g + b
                     for v, g, b in zip(row, gamma, beta)])


def cross_attention_loops(q_in, t_in, wq, wk, wv, d_scale):
    """Explicit q/k/v projection, per-row softmax, weighted sum."""
    q = matmul_loops(q_in, wq)
    k = matmul_loops(t_in, wk)
    v = matmul_loops(t_in, wv)
    logits = matmul_loops(q, k.T) / math.sqrt(d_scale)
    z, s = logits.shape
    out = np.zeros((z, v.shape[1]))
    for i in range(z):
        attn = softmax_direct(logits[i] - logits[i].max())
        for j in range(s):
            out[i] += attn[j] * v[j]
    return out, logits


def multi_head_cross_attention_loops(q_in, t_in, head_weights, w_o, d_scale):
    """Per-head loop, concatenation, output projection."""
    outs = []
    logits = []
    for (wq, wk, wv) in head_weights:
        o, l = cross_attention_loops(q_in, t_in, wq, wk, wv, d_scale)
        outs.append(o)
        logits.append(l)
    return matmul_loops(np.concatenate(outs, axis=1), w_o), logits


def gelu_direct(x):
    x = np.asarray(x, dtype=np.float64)
    return np.array([0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in x.reshape(-1)]).reshape(x.shape)


def layer_norm_rows(x, gamma, beta, eps=1e-5):
    return np.stack([layer_norm_two_pass(row, gamma, beta, eps) for row in np.asarray(x)])


def proxy_update_straightline(q, t, block):
    """Step-by-step composition of the update stage from the loop oracles.

    Reads the numpy parameter arrays off ``block`` but performs every
    computation with the reference implementations above.
    """
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    qn = layer_norm_rows(q, block.norm_q[0].data, block.norm_q[1].data)
    tn = layer_norm_rows(t, block.norm_t[0].data, block.norm_t[1].data)
    head_weights = [(h.w_q.data, h.w_k.data, h.w_v.data) for h in block.mca.heads]
    mca_out, logits = multi_head_cross_attention_loops(
        qn, tn, head_weights, block.mca.w_out.data, block.d_model)
    q_hat = mca_out + q
    hid = layer_norm_rows(q_hat, block.norm_mlp[0].data, block.norm_mlp[1].data)
    hid = gelu_direct(matmul_loops(hid, block.mlp_w1.data) + block.mlp_b1.data)
    updated = matmul_loops(hid, block.mlp_w2.data) + block.mlp_b2.data + q_hat
    if block.reduce_w is None:
        q_next = updated
    else:
        q_next = matmul_loops(updated, block.reduce_w.data) + block.reduce_b.data
    return q_next, updated, logits


def soft_dice_direct(probs, target, eps=1e-5):
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = probs.shape[0]
    losses = []
    for c in range(z):
        inter = float((probs[c] * target[c]).sum())
        denom = float(probs[c].sum() + target[c].sum())
        losses.append(1.0 - (2.0 * inter + eps) / (denom + eps))
    return sum(losses) / z


def cross_entropy_direct(logits, target):
    """Mean over pixels of logsumexp(logits) - logit[target]."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    z = logits.shape[0]
    total = 0.0
    npix = 0
    for i in range(logits.shape[1]):
        for j in range(logits.shape[2]):
            col = logits[:, i, j]
            m = col.max()
            lse = m + math.log(sum(math.exp(v - m) for v in col))
            total += lse - col[int(target[i, j])]
            npix += 1
    return total / npix


def dsc_counts(pred, gt):
    """Dice from explicit pixel counting; empty-mask policy built in."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    p = int(pred.sum())
    g = int(gt.sum())
    if p == 0 and g == 0:
        return 1.0
    if p == 0 or g == 0:
        return 0.0
    inter = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if pred[i, j] and gt[i, j]:
                inter += 1
    return 2.0 * inter / (p + g)


def boundary_pixels_loops(mask):
    """Mask pixels with at least one 4-neighbour outside (border is outside)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            on_edge = False
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if not (0 <= ii < h and 0 <= jj < w) or not mask[ii, jj]:
                    on_edge = True
                    break
            if on_edge:
                pts.append((i, j))
    return pts


def hd95_exhaustive(pred, gt):
    """All-pairs directed distances, union multiset, nearest-rank percentile."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    h, w = pred.shape
    bp = boundary_pixels_loops(pred)
    bg = boundary_pixels_loops(gt)
    if not bp and not bg:
        return 0.0
    if not bp or not bg:
        return math.sqrt((h - 1) ** 2 + (w - 1) ** 2)
    dists = []
    for (i, j) in bp:
        best = min((i - a) * (i - a) + (j - b) * (j - b) for (a, b) in bg)
        dists.append(math.sqrt(best))
    for (a, b) in bg:
        best = min((i - a) * (i - a) + (j - b) * (j - b) for (i, j) in bp)
        dists.append(math.sqrt(best))
    dists.sort()
    k = math.ceil(0.95 * len(dists))
    return dists[k - 1]
