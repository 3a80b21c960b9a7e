"""Self-contained verification suite: gradients, oracles, invariants.

Each group returns a GroupResult; the CLI prints one pass/fail line per
group and exits nonzero if anything failed. The acceptance tests call
these same functions at spec strength, so the command and the test suite
cannot drift apart.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import metrics, oracles
from .attention import CrossAttentionBlock, MultiHeadCrossAttention, cross_attention
from .autodiff import GradTape, grad_check, tensor
from .backbone import ModelConfig
from .phantoms import SplitConfig, compose_batch, generate_sample, make_split
from .trainer import ICLModel, SGD, TrainConfig, load_checkpoint, model_state, save_checkpoint, train_step


@dataclass
class GroupResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _group(name):
    def wrap(fn):
        def runner(*args, **kwargs) -> GroupResult:
            start = time.time()
            try:
                detail = fn(*args, **kwargs)
                return GroupResult(name, True, detail, time.time() - start)
            except Exception as exc:  # noqa: BLE001 - report, do not crash the suite
                return GroupResult(name, False, f"{type(exc).__name__}: {exc}",
                                   time.time() - start)
        runner.__name__ = fn.__name__
        return runner
    return wrap


MINI = ModelConfig(height=16, width=16, n_classes=3, base_width=4, n_heads=2)
GRAD_TOL = 1e-4
ORACLE_TOL = 1e-10


# ---------------------------------------------------------------------------
# group: elementary op gradients

def _op_cases(rng):
    def t(*shape, grad=True):
        return tensor(rng.standard_normal(shape), requires_grad=grad)

    w_a = tensor(rng.standard_normal((3, 4)))
    w_m = tensor(rng.standard_normal((3, 2)))
    w_t = tensor(rng.standard_normal((4, 3)))
    w_c = tensor(rng.standard_normal((3, 5, 5)))
    w_u = tensor(rng.standard_normal((2, 6, 9)))
    w_sel = tensor(rng.standard_normal((3, 2)))
    gamma = tensor(rng.standard_normal(4), requires_grad=True)
    beta = tensor(rng.standard_normal(4), requires_grad=True)
    cg = tensor(rng.standard_normal(2), requires_grad=True)
    cb = tensor(rng.standard_normal(2), requires_grad=True)
    cw = tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    cbias = tensor(rng.standard_normal(3), requires_grad=True)
    mm = tensor(rng.standard_normal((4, 2)))

    def ws(x, w):
        return ad.tsum(ad.mul(x, w))

    relu_in = t(3, 4)
    relu_in.data += np.sign(relu_in.data) * 0.05  # keep away from the kink
    return [
        ("add", t(3, 4), lambda x, o=t(3, 4): ws(ad.add(x, o), w_a)),
        ("sub", t(3, 4), lambda x, o=t(3, 4): ws(ad.sub(x, o), w_a)),
        ("mul", t(3, 4), lambda x, o=t(3, 4): ws(ad.mul(x, o), w_a)),
        ("div", t(3, 4), lambda x, o=tensor(rng.uniform(0.5, 2, (3, 4)), requires_grad=True):
            ws(ad.div(x, o), w_a)),
        ("matmul", t(3, 4), lambda x: ws(ad.matmul(x, mm), w_m)),
        ("square", t(3, 4), lambda x: ws(ad.square(x), w_a)),
        ("relu", relu_in, lambda x: ws(ad.relu(x), w_a)),
        ("gelu", t(3, 4), lambda x: ws(ad.gelu(x), w_a)),
        ("log", tensor(rng.uniform(0.5, 3.0, (3, 4)), requires_grad=True),
            lambda x: ws(ad.tlog(x), w_a)),
        ("softmax", t(3, 4), lambda x: ws(ad.softmax(x, axis=1), w_a)),
        ("layer_norm", t(3, 4), lambda x: ws(ad.layer_norm(x, gamma, beta), w_a)),
        ("group_norm", t(1, 2, 4, 4), lambda x: ad.tsum(ad.square(
            ad.group_norm(x, cg, cb)))),
        ("conv1x1", t(2, 5, 5), lambda x, w=tensor(rng.standard_normal((3, 2, 1, 1)),
                                                   requires_grad=True):
            ws(ad.conv2d(x, w), w_c)),
        ("conv3x3", t(2, 5, 5), lambda x: ws(ad.conv2d(x, cw, cbias), w_c)),
        ("avg_pool2", t(2, 4, 6), lambda x: ad.tsum(ad.square(ad.avg_pool2(x)))),
        ("bilinear", t(2, 3, 4), lambda x: ws(ad.bilinear_upsample(x, 6, 9), w_u)),
        ("concat", t(3, 2), lambda x, o=t(3, 3): ad.tsum(ad.square(
            ad.concat([x, o], axis=1)))),
        ("batch_select", t(4, 3, 2), lambda x: ws(ad.batch_select(x, 1), w_sel)),
        ("add_row_bias", t(5, 4), lambda x, b=tensor(rng.standard_normal(4),
                                                     requires_grad=True):
            ad.tsum(ad.square(ad.add_row_bias(x, b)))),
        ("reductions", t(3, 4, 2), lambda x: ad.tsum(ad.square(ad.tmean(x, axis=(0, 2))))),
        ("transpose", t(3, 4), lambda x: ws(ad.transpose(x), w_t)),
    ]


@_group("op-gradients")
def check_op_gradients(seeds: int = 20) -> str:
    worst = 0.0
    worst_name = ""
    for seed in range(seeds):
        rng = np.random.default_rng(10_000 + seed)
        for name, x, f in _op_cases(rng):
            err = grad_check(f, x)
            if err > worst:
                worst, worst_name = err, name
            if err >= GRAD_TOL:
                raise AssertionError(f"{name} seed {seed}: rel err {err:.3e}")
    return f"{seeds} seeds x {len(_op_cases(np.random.default_rng(0)))} ops, worst {worst:.2e} ({worst_name})"


# ---------------------------------------------------------------------------
# group: composed loss gradients (includes full objective on a mini batch)

def _mini_batch(rng, cfg=MINI):
    lab = rng.uniform(0, 1, (2, 1, cfg.height, cfg.width))
    unl = rng.uniform(0, 1, (2, 1, cfg.height, cfg.width))
    masks = [rng.integers(0, cfg.n_classes, (cfg.height, cfg.width)) for _ in range(2)]
    return lab, masks, unl


def _total_loss(model: ICLModel, lab, masks, unl, weights,
                frozen=None) -> ad.Tensor:
    p_l, feats_l = model.backbone.forward(ad.Tensor(lab))
    p_u, feats_u = model.backbone.forward(ad.Tensor(unl))
    seg, spa, usc, con = [], [], [], []
    for i, mask in enumerate(masks):
        seg.append(L.loss_seg(ad.batch_select(p_l, i), mask))
        m_l, m_u, proxies = model.sspa.forward(feats_l.at(i), feats_u.at(i))
        guided = model.uscl.forward(feats_u.at(i), proxies)
        spa.append(L.loss_spa(m_l, mask))
        if frozen is None:
            p_ref, m_ref = ad.batch_select(p_u, i), m_u
        else:
            p_ref = ad.Tensor(frozen["p_u"][i])
            m_ref = [ad.Tensor(a) for a in frozen["m_u"][i]]
        usc.append(L.loss_usc(guided, p_ref))
        con.append(L.loss_con(guided, m_ref))

    def mean2(ts):
        return ad.add(ts[0], ts[1]) * 0.5

    return L.loss_total(mean2(seg), mean2(spa), mean2(usc), mean2(con), weights).total


def _freeze_detached_refs(model: ICLModel, lab, masks, unl):
    """Snapshot the stop-gradient branch values at the current parameters.

    Central differences of a function containing detaches only measure the
    partial derivative the tape computes if the detached branches are held
    constant during perturbation; this captures those constants.
    """
    p_u, feats_u = model.backbone.forward(ad.Tensor(unl))
    _, feats_l = model.backbone.forward(ad.Tensor(lab))
    p_refs, m_refs = [], []
    for i in range(len(masks)):
        _, m_u, _ = model.sspa.forward(feats_l.at(i), feats_u.at(i))
        p_refs.append(ad.batch_select(p_u, i).data.copy())
        m_refs.append([m.data.copy() for m in m_u])
    return {"p_u": p_refs, "m_u": m_refs}


@_group("loss-gradients")
def check_loss_gradients(seeds: int = 20, sample: int = 3) -> str:
    weights = L.LossWeights(alpha=1.0, beta=50.0)
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(20_000 + seed)
        z, h = 3, 8
        y = rng.integers(0, z, (h, h))
        p = tensor(rng.standard_normal((z, h, h)), requires_grad=True)
        maps = [tensor(rng.standard_normal((z, s, s)), requires_grad=True)
                for s in (1, 2, 4)]
        other = [tensor(rng.standard_normal((z, s, s))) for s in (1, 2, 4)]
        cases = [
            ("seg", p, lambda x: L.loss_seg(x, y)),
            ("spa", maps[1], lambda x: L.loss_spa([maps[0], x, maps[2]], y)),
            ("usc", maps[1], lambda x: L.loss_usc([maps[0], x, maps[2]], p)),
            ("con", maps[1], lambda x: L.loss_con([maps[0], x, maps[2]], other)),
        ]
        for name, x, f in cases:
            err = grad_check(f, x)
            worst = max(worst, err)
            if err >= GRAD_TOL:
                raise AssertionError(f"loss_{name} seed {seed}: rel err {err:.3e}")

        if seed < max(1, seeds // 4):  # full objective probes are pricey
            model = ICLModel(MINI, seed, np.float64)
            lab, masks, unl = _mini_batch(rng)
            frozen = _freeze_detached_refs(model, lab, masks, unl)
            params = dict(model.named_parameters())
            probes = [params["sspa/chain/q0"], params["backbone/dec3/w"],
                      params["uscl/scale2/head0/wk"], params["sspa/seghead2/w"],
                      params["backbone/head/b"]]
            fd_rng = np.random.default_rng(seed)
            for param in probes:
                err = grad_check(
                    lambda _x: _total_loss(model, lab, masks, unl, weights, frozen),
                    param, sample=sample, rng=fd_rng)
                worst = max(worst, err)
                if err >= GRAD_TOL:
                    raise AssertionError(f"L_total seed {seed}: rel err {err:.3e}")
    return f"{seeds} seeds, worst rel err {worst:.2e}"


# ---------------------------------------------------------------------------
# group: attention oracles (miniature instances)

@_group("attention-oracles")
def check_attention_oracles(trials: int = 20) -> str:
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(30_000 + trial)
        z = int(rng.integers(1, 4))
        s = int(rng.integers(1, 7))
        n_heads = int(rng.choice([1, 2]))
        d = int(n_heads * rng.integers(1, 5))

        q = tensor(rng.standard_normal((z, d)))
        t = tensor(rng.standard_normal((s, d)))

        mca = MultiHeadCrossAttention(d, n_heads, rng)
        mca.w_out.data[:] = rng.standard_normal((d, d))  # zero-initialized otherwise
        out, logits = mca.forward(q, t)
        ref_out, ref_logits = oracles.multi_head_cross_attention_loops(
            q.data, t.data, [(h.w_q.data, h.w_k.data, h.w_v.data) for h in mca.heads],
            mca.w_out.data, d)
        worst = max(worst, float(np.abs(out.data - ref_out).max()))
        for got, ref in zip(logits, ref_logits):
            worst = max(worst, float(np.abs(got.data - ref).max()))

        ca_out, ca_logits = cross_attention(q, t, mca.heads[0], d)
        ref_ca, ref_cl = oracles.cross_attention_loops(
            q.data, t.data, mca.heads[0].w_q.data, mca.heads[0].w_k.data,
            mca.heads[0].w_v.data, d)
        worst = max(worst, float(np.abs(ca_out.data - ref_ca).max()))
        worst = max(worst, float(np.abs(ca_logits.data - ref_cl).max()))

        block = CrossAttentionBlock(d, n_heads, rng, reduce=(d % 2 == 0))
        block.mca.w_out.data[:] = rng.standard_normal((d, d))
        block.mlp_w2.data[:] = rng.standard_normal((2 * d, d)) / math.sqrt(2 * d)
        q_next, updated, _ = block.update(q, t)
        ref_next, ref_updated, _ = oracles.proxy_update_straightline(q.data, t.data, block)
        worst = max(worst, float(np.abs(q_next.data - ref_next).max()))
        worst = max(worst, float(np.abs(updated.data - ref_updated).max()))

        if worst >= ORACLE_TOL:
            raise AssertionError(f"trial {trial}: attention oracle gap {worst:.3e}")
    return f"{trials} miniature instances, worst gap {worst:.2e}"


# ---------------------------------------------------------------------------
# group: loss-value oracles

@_group("loss-oracles")
def check_loss_oracles(trials: int = 20) -> str:
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(40_000 + trial)
        z = int(rng.integers(2, 5))
        probs = ad.softmax(tensor(rng.standard_normal((z, 4, 4))), axis=0)
        target = L.one_hot(rng.integers(0, z, (4, 4)), z)
        worst = max(worst, abs(L.soft_dice(probs, target).item()
                               - oracles.soft_dice_direct(probs.data, target.data)))

        logits = rng.standard_normal((z, 3, 3)) * 3
        y = rng.integers(0, z, (3, 3))
        worst = max(worst, abs(L.cross_entropy(tensor(logits), y).item()
                               - oracles.cross_entropy_direct(logits, y)))

        a = tensor(rng.standard_normal((z, 2, 2)))
        b = tensor(rng.standard_normal((z, 2, 2)))

        def sm(arr):
            return np.apply_along_axis(
                lambda c: oracles.softmax_direct(c - c.max()), 0,
                arr.reshape(z, -1)).reshape(arr.shape)

        got = L.loss_con([a], [b]).item()
        ref = float(np.mean((sm(a.data) - sm(b.data)) ** 2))
        worst = max(worst, abs(got - ref))
        if worst >= ORACLE_TOL:
            raise AssertionError(f"trial {trial}: loss oracle gap {worst:.3e}")
    return f"{trials} trials, worst gap {worst:.2e}"


# ---------------------------------------------------------------------------
# group: detach contracts

@_group("detach-contracts")
def check_detach_contracts() -> str:
    rng = np.random.default_rng(50_000)
    model = ICLModel(MINI, 0, np.float64)
    lab, masks, unl = _mini_batch(rng)

    # (a) q0 under any unlabeled-stream output
    with GradTape() as tape:
        _, feats_u = model.backbone.forward(ad.Tensor(unl))
        _, feats_l = model.backbone.forward(ad.Tensor(lab))
        _, m_u, _ = model.sspa.forward(feats_l.at(0), feats_u.at(0))
        loss = ad.tsum(m_u[0])
        for m in m_u[1:]:
            loss = ad.add(loss, ad.tsum(m))
        tape.backward(loss)
    if model.sspa.q0.grad is not None:
        raise AssertionError("q0 received gradient from the unlabeled stream")

    # (b) prediction path under the guidance loss
    p_u = tensor(rng.standard_normal((3, 16, 16)), requires_grad=True)
    g = [tensor(rng.standard_normal((3, s, s)), requires_grad=True) for s in (1, 2, 4)]
    with GradTape() as tape:
        tape.backward(L.loss_usc(g, p_u))
    if p_u.grad is not None:
        raise AssertionError("prediction path received gradient from guidance loss")
    if any(t.grad is None for t in g):
        raise AssertionError("guided path unexpectedly cut")

    # (c) proxy-stream maps under the consistency loss
    m_u = [tensor(rng.standard_normal((3, s, s)), requires_grad=True) for s in (1, 2, 4)]
    g2 = [tensor(rng.standard_normal((3, s, s)), requires_grad=True) for s in (1, 2, 4)]
    with GradTape() as tape:
        tape.backward(L.loss_con(g2, m_u))
    if any(t.grad is not None for t in m_u):
        raise AssertionError("detached maps received gradient from consistency loss")

    # labeled stream must reach q0 (sanity counterpart)
    model.sspa.q0.grad = None
    with GradTape() as tape:
        _, feats_l = model.backbone.forward(ad.Tensor(lab))
        m_l, _, _ = model.sspa.forward(feats_l.at(0), None)
        loss = ad.tsum(m_l[0])
        for m in m_l[1:]:
            loss = ad.add(loss, ad.tsum(m))
        tape.backward(loss)
    if model.sspa.q0.grad is None or not np.abs(model.sspa.q0.grad).max() > 0:
        raise AssertionError("labeled stream failed to reach q0")
    return "q0 / prediction / consistency detaches all exact"


# ---------------------------------------------------------------------------
# group: metric oracles

def _fuzz_mask(rng, h=9, w=9):
    while True:
        kind = rng.integers(0, 4)
        m = np.zeros((h, w), dtype=bool)
        if kind == 1:
            for _ in range(rng.integers(1, 4)):
                m[rng.integers(0, h), rng.integers(0, w)] = True
        elif kind == 2:
            i, j = rng.integers(0, h - 3), rng.integers(0, w - 3)
            m[i:i + rng.integers(1, 4), j:j + rng.integers(1, 5)] = True
        elif kind == 3:
            ci, cj = rng.integers(1, h - 1), rng.integers(1, w - 1)
            r = rng.uniform(1.0, 2.2)
            ii, jj = np.mgrid[0:h, 0:w]
            m = (ii - ci) ** 2 + (jj - cj) ** 2 <= r * r
        if len(oracles.boundary_pixels_loops(m)) <= 12:
            return m


@_group("metric-oracles")
def check_metric_oracles(pairs: int = 500) -> str:
    rng = np.random.default_rng(60_000)
    for _ in range(pairs):
        a = _fuzz_mask(rng)
        b = _fuzz_mask(rng)
        if metrics.hd95(a, b) != oracles.hd95_exhaustive(a, b):
            raise AssertionError("hd95 deviates from the exhaustive oracle")
        if metrics.dsc(a, b) != oracles.dsc_counts(a, b):
            raise AssertionError("dsc deviates from the counting oracle")
    return f"{pairs} fuzz pairs, exact agreement"


# ---------------------------------------------------------------------------
# group: data determinism

@_group("data-determinism")
def check_data_determinism() -> str:
    cfg = SplitConfig(n_labeled=3, n_unlabeled=8, n_val=2, master_seed=5)
    a = make_split(cfg)
    b = make_split(cfg)
    for x, y in zip(a.labeled + a.val, b.labeled + b.val):
        if not (np.array_equal(x.image, y.image) and np.array_equal(x.mask, y.mask)):
            raise AssertionError("split generation is not deterministic")
    lab, unl, val = a.seed_sets()
    if (lab & unl) or (lab & val) or (unl & val):
        raise AssertionError("seed pools overlap")
    for step in (0, 1, 7):
        (l1, u1), (l2, u2) = compose_batch(a, step), compose_batch(b, step)
        for (i1, m1), (i2, m2) in zip(l1, l2):
            if not (np.array_equal(i1, i2) and np.array_equal(m1, m2)):
                raise AssertionError("batch composition is not deterministic")
        for img, mask in l1:
            counts = np.bincount(mask.ravel(), minlength=4)
            if not (counts[1:] > 0).all():
                raise AssertionError("augmentation destroyed a class")
    s1, s2 = generate_sample(99), generate_sample(99)
    if not np.array_equal(s1.image, s2.image):
        raise AssertionError("sample generation is not deterministic")
    return "splits, batches and samples reproduce bitwise"


# ---------------------------------------------------------------------------
# group: checkpoint round trip

@_group("checkpoint-roundtrip")
def check_checkpoint_roundtrip(tmp_dir=None) -> str:
    import tempfile
    from pathlib import Path

    model = ICLModel(MINI, 3, np.float64)
    opt = SGD(model.named_parameters(), 0.9, 1e-4)
    with tempfile.TemporaryDirectory(dir=tmp_dir) as td:
        p1 = Path(td) / "a.ckpt"
        p2 = Path(td) / "b.ckpt"
        save_checkpoint(model_state(model, opt, 17, 0.5), p1)
        state = load_checkpoint(p1)
        save_checkpoint(state, p2)
        if p1.read_bytes() != p2.read_bytes():
            raise AssertionError("save -> load -> save is not byte-identical")
        raw = bytearray(p1.read_bytes())
        raw[:4] = b"XXXX"
        p_bad = Path(td) / "bad.ckpt"
        p_bad.write_bytes(bytes(raw))
        try:
            load_checkpoint(p_bad)
        except Exception:
            pass
        else:
            raise AssertionError("corrupted magic was accepted")
    return "byte-identical round trip; corrupted header rejected"


# ---------------------------------------------------------------------------

def run_all(fast: bool = False) -> list[GroupResult]:
    """Run every group; ``fast`` trims seed counts for interactive use."""
    seeds = 5 if fast else 20
    pairs = 120 if fast else 500
    return [
        check_op_gradients(seeds=seeds),
        check_loss_gradients(seeds=seeds),
        check_attention_oracles(trials=seeds),
        check_loss_oracles(trials=seeds),
        check_detach_contracts(),
        check_metric_oracles(pairs=pairs),
        check_data_determinism(),
        check_checkpoint_roundtrip(),
    ]
