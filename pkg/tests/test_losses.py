"""Loss formulas against hand evaluation and oracles; detach contracts."""

import math

import numpy as np
import pytest

import iclseg.autodiff as ad
import iclseg.losses as L
from iclseg import oracles
from iclseg.autodiff import GradTape, grad_check, tensor


def softmaxed(rng, shape):
    return ad.softmax(tensor(rng.standard_normal(shape)), axis=0)


class TestSoftDice:
    def test_perfect_prediction_near_zero(self):
        oh = L.one_hot(np.array([[0, 1], [2, 1]]), 3)
        assert L.soft_dice(oh, oh).item() < 1e-5

    def test_disjoint_one_hot_near_one(self):
        pred = L.one_hot(np.zeros((2, 2), dtype=int), 2)
        target = L.one_hot(np.ones((2, 2), dtype=int), 2)
        assert L.soft_dice(pred, target).item() > 1 - 1e-4

    def test_hand_evaluated_single_class(self):
        p = tensor(np.array([[1.0, 1.0], [0.0, 0.0]])[None])
        t = tensor(np.array([[1.0, 0.0], [0.0, 0.0]])[None])
        expected = 1.0 - (2.0 + L.DICE_EPS) / (3.0 + L.DICE_EPS)
        assert abs(L.soft_dice(p, t).item() - expected) < 1e-12

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_direct_oracle_and_bounds(self, seed):
        rng = np.random.default_rng(seed)
        p = softmaxed(rng, (3, 4, 4))
        t = L.one_hot(rng.integers(0, 3, (4, 4)), 3)
        got = L.soft_dice(p, t).item()
        assert abs(got - oracles.soft_dice_direct(p.data, t.data)) < 1e-12
        assert 0.0 <= got <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            L.soft_dice(tensor(np.zeros((2, 2, 2))), tensor(np.zeros((3, 2, 2))))

    def test_gradient(self):
        rng = np.random.default_rng(40)
        t = L.one_hot(rng.integers(0, 3, (3, 3)), 3)
        x = tensor(rng.standard_normal((3, 3, 3)), requires_grad=True)
        err = grad_check(lambda v: L.soft_dice(ad.softmax(v, axis=0), t), x)
        assert err < 1e-4


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = tensor(np.zeros((4, 3, 3)))
        got = L.cross_entropy(logits, np.zeros((3, 3), dtype=int)).item()
        assert abs(got - math.log(4)) < 1e-12

    def test_large_margin_goes_to_zero(self):
        logits = np.zeros((3, 2, 2))
        logits[1] = 60.0
        got = L.cross_entropy(tensor(logits), np.ones((2, 2), dtype=int)).item()
        assert got < 1e-12

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(41)
        logits = rng.standard_normal((4, 3, 3)) * 3
        target = rng.integers(0, 4, (3, 3))
        got = L.cross_entropy(tensor(logits), target).item()
        assert abs(got - oracles.cross_entropy_direct(logits, target)) < 1e-10

    def test_out_of_range_target(self):
        with pytest.raises(L.DataError):
            L.cross_entropy(tensor(np.zeros((2, 2, 2))), np.full((2, 2), 5))

    def test_gradient(self):
        rng = np.random.default_rng(42)
        target = rng.integers(0, 4, (3, 3))
        x = tensor(rng.standard_normal((4, 3, 3)), requires_grad=True)
        err = grad_check(lambda v: L.cross_entropy(v, target), x)
        assert err < 1e-6


class TestLossSpa:
    def test_equal_scale_values_average_to_same(self):
        # constant zero maps give the same term at every scale
        y = np.random.default_rng(43).integers(0, 3, (16, 16))
        scales = [tensor(np.zeros((3, s, s))) for s in (1, 2, 4)]
        total = L.loss_spa(scales, y).item()
        single = L.loss_spa([scales[0]] * 3, y).item()
        assert abs(total - single) < 1e-12

    def test_near_zero_for_confident_correct_maps(self):
        y = np.ones((16, 16), dtype=int)
        scales = []
        for s in (1, 2, 4):
            m = np.zeros((3, s, s))
            m[1] = 60.0
            scales.append(tensor(m))
        assert L.loss_spa(scales, y).item() < 1e-5

    def test_single_scale_matches_composition_oracle(self):
        rng = np.random.default_rng(44)
        m = rng.standard_normal((3, 2, 2))
        y = rng.integers(0, 3, (8, 8))
        got = L.loss_spa([tensor(m)] * 3, y).item()
        up = oracles.bilinear_point(m, 8, 8)
        probs = np.apply_along_axis(lambda col: oracles.softmax_direct(col - col.max()), 0,
                                    up.reshape(3, -1)).reshape(3, 8, 8)
        oh = np.zeros((3, 8, 8))
        np.put_along_axis(oh, y[None], 1.0, axis=0)
        ref = oracles.soft_dice_direct(probs, oh) + oracles.cross_entropy_direct(up, y)
        assert abs(got - ref) < 1e-10

    def test_gradient(self):
        rng = np.random.default_rng(45)
        y = rng.integers(0, 3, (8, 8))
        m = tensor(rng.standard_normal((3, 2, 2)), requires_grad=True)
        err = grad_check(lambda v: L.loss_spa([v, v, v], y), m)
        assert err < 1e-4


class TestLossUsc:
    def test_equal_inputs_give_oracle_self_value(self):
        rng = np.random.default_rng(46)
        p = rng.standard_normal((3, 8, 8))
        # guided maps that upsample exactly to p: use p itself at full scale
        got = L.loss_usc([tensor(p)] * 3, tensor(p)).item()
        sp = np.apply_along_axis(
            lambda col: oracles.softmax_direct(col - col.max()), 0, p.reshape(3, -1)
        ).reshape(p.shape)
        ref = oracles.soft_dice_direct(sp, sp)
        assert abs(got - ref) < 1e-10

    def test_no_gradient_into_prediction_path(self):
        rng = np.random.default_rng(47)
        g = [tensor(rng.standard_normal((3, s, s)), requires_grad=True) for s in (2, 4, 8)]
        p = tensor(rng.standard_normal((3, 8, 8)), requires_grad=True)
        with GradTape() as tape:
            tape.backward(L.loss_usc(g, p))
        assert p.grad is None
        assert all(t.grad is not None for t in g)

    def test_matches_composition_oracle(self):
        rng = np.random.default_rng(48)
        g = rng.standard_normal((3, 2, 2))
        p = rng.standard_normal((3, 4, 4))
        got = L.loss_usc([tensor(g)] * 3, tensor(p)).item()
        up = oracles.bilinear_point(g, 4, 4)
        sg = np.apply_along_axis(lambda c: oracles.softmax_direct(c - c.max()), 0,
                                 up.reshape(3, -1)).reshape(3, 4, 4)
        sp = np.apply_along_axis(lambda c: oracles.softmax_direct(c - c.max()), 0,
                                 p.reshape(3, -1)).reshape(3, 4, 4)
        ref = oracles.soft_dice_direct(sg, sp)
        assert abs(got - ref) < 1e-10

    def test_gradient(self):
        rng = np.random.default_rng(49)
        p = tensor(rng.standard_normal((3, 4, 4)))
        g = tensor(rng.standard_normal((3, 2, 2)), requires_grad=True)
        err = grad_check(lambda v: L.loss_usc([v, v, v], p), g)
        assert err < 1e-4


class TestLossCon:
    def test_identical_inputs_zero(self):
        rng = np.random.default_rng(50)
        maps = [tensor(rng.standard_normal((3, s, s))) for s in (2, 4, 8)]
        assert L.loss_con(maps, maps).item() == 0.0

    def test_no_gradient_into_detached_side(self):
        rng = np.random.default_rng(51)
        g = [tensor(rng.standard_normal((3, s, s)), requires_grad=True) for s in (2, 4)]
        m = [tensor(rng.standard_normal((3, s, s)), requires_grad=True) for s in (2, 4)]
        with GradTape() as tape:
            tape.backward(L.loss_con(g, m))
        assert all(t.grad is None for t in m)
        assert all(t.grad is not None for t in g)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(52)
        gs = [rng.standard_normal((2, 3, 3)) for _ in range(3)]
        ms = [rng.standard_normal((2, 3, 3)) for _ in range(3)]
        got = L.loss_con([tensor(g) for g in gs], [tensor(m) for m in ms]).item()

        def sm(a):
            return np.apply_along_axis(lambda c: oracles.softmax_direct(c - c.max()), 0,
                                       a.reshape(2, -1)).reshape(a.shape)

        ref = np.mean([np.mean((sm(g) - sm(m)) ** 2) for g, m in zip(gs, ms)])
        assert abs(got - ref) < 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(53)
        m = [tensor(rng.standard_normal((2, 2, 2))) for _ in range(3)]
        g = tensor(rng.standard_normal((2, 2, 2)), requires_grad=True)
        err = grad_check(lambda v: L.loss_con([v, v, v], m), g)
        assert err < 1e-4


class TestLossTotal:
    def _components(self, rng):
        y = rng.integers(0, 3, (16, 16))
        p_l = tensor(rng.standard_normal((3, 16, 16)))
        m_l = [tensor(rng.standard_normal((3, s, s))) for s in (1, 2, 4)]
        g = [tensor(rng.standard_normal((3, s, s))) for s in (1, 2, 4)]
        m_u = [tensor(rng.standard_normal((3, s, s))) for s in (1, 2, 4)]
        p_u = tensor(rng.standard_normal((3, 16, 16)))
        return (L.loss_seg(p_l, y), L.loss_spa(m_l, y),
                L.loss_usc(g, p_u), L.loss_con(g, m_u))

    def test_zero_weights_reduce_to_supervised(self):
        rng = np.random.default_rng(54)
        seg, spa, usc, con = self._components(rng)
        report = L.loss_total(seg, spa, usc, con, L.LossWeights(alpha=0.0, beta=0.0))
        assert report.total_value == seg.item() + spa.item()

    def test_default_weights_are_acdc_style(self):
        w = L.LossWeights()
        assert (w.alpha, w.beta) == (1.0, 50.0)

    def test_recomposition_linearity(self):
        rng = np.random.default_rng(55)
        seg, spa, usc, con = self._components(rng)
        report = L.loss_total(seg, spa, usc, con, L.LossWeights(alpha=1.0, beta=50.0))
        manual = seg.item() + spa.item() + 1.0 * usc.item() + 50.0 * con.item()
        assert abs(report.total_value - manual) < 1e-9
        assert report.first_nonfinite() is None

    def test_negative_weights_rejected(self):
        from iclseg.attention import ConfigError
        with pytest.raises(ConfigError):
            L.LossWeights(alpha=-1.0)

    def test_first_nonfinite_names_term(self):
        report = L.LossReport(seg=1.0, spa=float("nan"), usc=0.0, con=0.0,
                              total_value=float("nan"), total=tensor(np.zeros(())))
        assert report.first_nonfinite() == "spa"
