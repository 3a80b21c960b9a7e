"""SSPA/USCL heads: shapes, gradient isolation, oracle composition."""

import numpy as np
import pytest

import iclseg.autodiff as ad
from iclseg import oracles
from iclseg.attention import ConfigError
from iclseg.autodiff import GradTape, tensor
from iclseg.backbone import ModelConfig, MultiScaleFeatures, tokenize
from iclseg.heads import SSPA, USCL


MINI = ModelConfig(height=32, width=32, base_width=4, n_heads=2, n_classes=3)


def random_feats(rng, cfg=MINI, scale=1.0):
    widths = cfg.scale_widths
    grids = cfg.scale_grids
    maps = [tensor(rng.standard_normal((c,) + g) * scale)
            for c, g in zip(widths, grids)]
    final = tensor(rng.standard_normal((cfg.base_width, cfg.height, cfg.width)) * scale)
    return MultiScaleFeatures(*maps, final)


class TestSSPA:
    def test_output_shapes_default_config(self):
        cfg = ModelConfig()
        rng = np.random.default_rng(0)
        sspa = SSPA(cfg, rng)
        fl = random_feats(rng, cfg)
        fu = random_feats(rng, cfg)
        m_l, m_u, proxies = sspa.forward(fl, fu)
        assert [m.shape for m in m_l] == [(4, 4, 4), (4, 8, 8), (4, 16, 16)]
        assert [m.shape for m in m_u] == [(4, 4, 4), (4, 8, 8), (4, 16, 16)]
        assert [p.shape for p in proxies] == [(4, 32), (4, 16), (4, 8)]

    def test_unlabeled_stream_leaves_q0_untouched(self):
        rng = np.random.default_rng(1)
        sspa = SSPA(MINI, rng)
        fl = random_feats(rng)
        fu = random_feats(rng)
        with GradTape() as tape:
            _, m_u, _ = sspa.forward(fl, fu)
            loss = ad.tsum(m_u[0])
            for m in m_u[1:]:
                loss = ad.add(loss, ad.tsum(m))
            tape.backward(loss)
        assert sspa.q0.grad is None

    def test_labeled_stream_reaches_q0(self):
        rng = np.random.default_rng(2)
        sspa = SSPA(MINI, rng)
        fl = random_feats(rng)
        with GradTape() as tape:
            m_l, _, _ = sspa.forward(fl, None)
            loss = ad.tsum(m_l[0])
            for m in m_l[1:]:
                loss = ad.add(loss, ad.tsum(m))
            tape.backward(loss)
        assert sspa.q0.grad is not None
        assert np.abs(sspa.q0.grad).max() > 0

    def test_q0_gradient_probe_labeled_vs_unlabeled(self):
        # labeled sum moves under an FD nudge of q0 AND has nonzero grad;
        # the unlabeled stream shares q0's value but its backward is cut
        rng = np.random.default_rng(3)
        sspa = SSPA(MINI, rng)
        fl = random_feats(rng)
        fu = random_feats(rng)

        def labeled_sum():
            m_l, _, _ = sspa.forward(fl, fu)
            return sum(float(m.data.sum()) for m in m_l)

        base = labeled_sum()
        sspa.q0.data[0, 0] += 1e-3
        moved = labeled_sum()
        sspa.q0.data[0, 0] -= 1e-3
        assert abs(moved - base) > 1e-12

        with GradTape() as tape:
            _, m_u, _ = sspa.forward(fl, fu)
            loss = ad.tsum(m_u[0])
            for m in m_u[1:]:
                loss = ad.add(loss, ad.tsum(m))
            tape.backward(loss)
        assert sspa.q0.grad is None

    def test_identity_like_seg_head_passes_map_through(self):
        rng = np.random.default_rng(4)
        sspa = SSPA(MINI, rng)
        for head in sspa.seg_heads:
            head.w.data[:] = 0.0
            for c in range(MINI.n_classes):
                head.w.data[c, c, 1, 1] = 1.0
            head.b.data[:] = 0.0
        fl = random_feats(rng)
        m_l, _, _ = sspa.forward(fl, None)
        toks = [tokenize(f) for f in fl.scales()]
        _, maps = sspa.chain.run(toks, "labeled")
        for m, a in zip(m_l, maps):
            np.testing.assert_allclose(m.data, a.data, atol=1e-12)

    def test_labeled_only_mode_returns_none(self):
        rng = np.random.default_rng(5)
        sspa = SSPA(MINI, rng)
        _, m_u, _ = sspa.forward(random_feats(rng), None)
        assert m_u is None


class TestUSCL:
    def _proxies(self, sspa, rng):
        fl = random_feats(rng)
        _, _, proxies = sspa.forward(fl, None)
        return proxies

    def test_guided_shapes_mirror_m_u(self):
        rng = np.random.default_rng(6)
        sspa = SSPA(MINI, rng)
        uscl = USCL(MINI, rng)
        fu = random_feats(rng)
        g = uscl.forward(fu, self._proxies(sspa, rng))
        assert [t.shape for t in g] == [(3, 2, 2), (3, 4, 4), (3, 8, 8)]

    def test_zero_features_zero_biases_give_zero_logits(self):
        rng = np.random.default_rng(7)
        sspa = SSPA(MINI, rng)
        uscl = USCL(MINI, rng)
        zero = MultiScaleFeatures(
            *[tensor(np.zeros((c,) + g)) for c, g in
              zip(MINI.scale_widths, MINI.scale_grids)],
            tensor(np.zeros((MINI.base_width, 32, 32))))
        g = uscl.forward(zero, self._proxies(sspa, rng))
        for t in g:
            np.testing.assert_allclose(t.data, 0.0, atol=1e-12)

    def test_matches_composition_oracle(self):
        rng = np.random.default_rng(8)
        sspa = SSPA(MINI, rng)
        uscl = USCL(MINI, rng)
        fu = random_feats(rng)
        proxies = self._proxies(sspa, rng)
        guided = uscl.forward(fu, proxies)
        for scale in range(3):
            mca = uscl.mcas[scale]
            toks = tokenize(fu.scales()[scale]).data
            head_weights = [(h.w_q.data, h.w_k.data, h.w_v.data) for h in mca.heads]
            _, ref_logits = oracles.multi_head_cross_attention_loops(
                proxies[scale].data, toks, head_weights, mca.w_out.data, mca.d_model)
            h, w = MINI.scale_grids[scale]
            amap = np.mean(ref_logits, axis=0).reshape(MINI.n_classes, h, w)
            ref = oracles.conv2d_loops(amap, uscl.seg_heads[scale].w.data)
            np.testing.assert_allclose(guided[scale].data, ref, atol=1e-10)

    def test_gradient_flows_into_proxies_and_uscl(self):
        rng = np.random.default_rng(9)
        sspa = SSPA(MINI, rng)
        uscl = USCL(MINI, rng)
        fu = random_feats(rng)
        with GradTape() as tape:
            _, _, proxies = sspa.forward(random_feats(rng), None)
            g = uscl.forward(fu, proxies)
            loss = ad.tsum(g[0])
            for t in g[1:]:
                loss = ad.add(loss, ad.tsum(t))
            tape.backward(loss)
        # the guided maps shape SSPA through the proxies and USCL's own weights
        assert sspa.q0.grad is not None
        assert uscl.mcas[0].heads[0].w_k.grad is not None
        assert uscl.seg_heads[0].w.grad is not None

    def test_wrong_proxy_width_rejected(self):
        rng = np.random.default_rng(10)
        uscl = USCL(MINI, rng)
        bad = [tensor(np.zeros((3, 7))) for _ in range(3)]
        with pytest.raises(ConfigError):
            uscl.forward(random_feats(rng), bad)


class TestParameterDisjointness:
    def test_no_shared_tensors(self):
        rng = np.random.default_rng(11)
        sspa = SSPA(MINI, rng)
        uscl = USCL(MINI, rng)
        sspa_ids = {id(t) for _, t in sspa.named_parameters()}
        uscl_ids = {id(t) for _, t in uscl.named_parameters()}
        assert not (sspa_ids & uscl_ids)

    def test_outputs_finite_fuzz(self):
        rng = np.random.default_rng(12)
        sspa = SSPA(MINI, rng)
        uscl = USCL(MINI, rng)
        for trial in range(1000):
            scale = 10.0 ** rng.uniform(-2, 2)
            fl = random_feats(rng, scale=scale)
            fu = random_feats(rng, scale=scale)
            m_l, m_u, proxies = sspa.forward(fl, fu)
            g = uscl.forward(fu, proxies)
            for t in m_l + m_u + g:
                assert np.isfinite(t.data).all(), f"trial {trial}"
