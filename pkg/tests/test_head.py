import math

import numpy as np
import pytest

from psdet.boxes import RoI
from psdet.head import (BoxDelta, LossConfig, decode_box, decode_boxes, encode_box,
                        encode_boxes, joint_loss, smooth_l1, smooth_l1_batch, softmax,
                        softmax_ce, vote, vote_backward, vote_box)

from reference import numerical_gradient, relative_error


class TestVote:
    def test_k1_passthrough(self):
        bins = np.arange(8.0).reshape(2, 4, 1, 1)
        assert np.array_equal(vote(bins), np.arange(8.0).reshape(2, 4))

    def test_constant_bins(self):
        bins = np.full((3, 2, 3, 3), 7.5)
        assert np.allclose(vote(bins), 7.5)

    def test_mean_of_one_through_nine(self):
        bins = np.zeros((1, 2, 3, 3))
        bins[0, 1] = np.arange(1.0, 10.0).reshape(3, 3)
        logits = vote(bins)
        assert logits[0, 1] == pytest.approx(5.0)
        assert logits[0, 0] == 0.0

    def test_vote_box_mirrors_vote(self, rng):
        bins = rng.standard_normal((5, 4, 3, 3))
        assert np.array_equal(vote_box(bins), vote(bins))
        with pytest.raises(ValueError):
            vote_box(rng.standard_normal((5, 3, 3, 3)))

    def test_linearity(self, rng):
        x = rng.standard_normal((4, 3, 2, 2))
        y = rng.standard_normal((4, 3, 2, 2))
        assert np.abs(vote(2.0 * x - 0.5 * y) - (2.0 * vote(x) - 0.5 * vote(y))).max() < 1e-10

    def test_backward_is_exact_mean_gradient(self, rng):
        grad_logits = rng.standard_normal((2, 3))
        g = vote_backward(grad_logits, k=3)
        assert g.shape == (2, 3, 3, 3)
        assert np.allclose(g, grad_logits[:, :, None, None] / 9.0)


class TestSoftmaxCE:
    def test_uniform_logits_21_classes(self):
        probs, loss, grad = softmax_ce(np.zeros(21), label=4)
        assert np.allclose(probs, 1 / 21)
        assert loss == pytest.approx(math.log(21), abs=1e-12)
        assert grad[4] == pytest.approx(1 / 21 - 1)

    def test_shift_stability(self):
        probs, loss, _ = softmax_ce(np.array([1000.0, 0.0]), label=0)
        assert np.isfinite(probs).all() and np.isfinite(loss)
        assert probs[0] == pytest.approx(1.0)
        assert probs[1] == pytest.approx(0.0, abs=1e-300)

    def test_closed_form_value(self):
        _, loss, _ = softmax_ce(np.array([1.0, 2.0, 3.0]), label=2)
        assert loss == pytest.approx(math.log(1 + math.exp(-1) + math.exp(-2)), abs=1e-12)
        assert loss == pytest.approx(0.40760596444438079, abs=1e-12)

    def test_probs_sum_to_one_and_in_range(self, rng):
        for _ in range(50):
            logits = rng.standard_normal(6) * 10
            probs, _, _ = softmax_ce(logits, label=0)
            assert probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert ((probs > 0) & (probs < 1)).all()

    def test_translation_invariance(self, rng):
        logits = rng.standard_normal((8, 5))
        shifted = softmax(logits + 123.456)
        assert np.abs(shifted - softmax(logits)).max() < 1e-10

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.standard_normal(5)
        _, _, grad = softmax_ce(logits, label=3)

        def loss_fn(lg):
            return softmax_ce(lg, label=3)[1]

        assert relative_error(grad, numerical_gradient(loss_fn, logits.copy())) < 1e-6

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            softmax_ce(np.array([1.0, np.nan]), label=0)
        with pytest.raises(ValueError):
            softmax(np.array([[np.inf, 0.0]]))

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_ce(np.zeros(3), label=3)


class TestSmoothL1:
    def test_zero_residual(self):
        loss, grad = smooth_l1(BoxDelta(1, 2, 3, 4), BoxDelta(1, 2, 3, 4))
        assert loss == 0.0
        assert tuple(grad) == (0, 0, 0, 0)

    def test_quadratic_branch(self):
        loss, grad = smooth_l1(BoxDelta(0.5, 0, 0, 0), BoxDelta(0, 0, 0, 0), beta=1.0)
        assert loss == pytest.approx(0.125)
        assert grad.tx == pytest.approx(0.5)

    def test_linear_branch(self):
        loss, grad = smooth_l1(BoxDelta(2, 0, 0, 0), BoxDelta(0, 0, 0, 0), beta=1.0)
        assert loss == pytest.approx(1.5)
        assert grad.tx == pytest.approx(1.0)

    def test_batch_matches_scalar(self, rng):
        pred = rng.standard_normal((10, 4)) * 2
        target = rng.standard_normal((10, 4))
        losses, grads = smooth_l1_batch(pred, target, beta=0.7)
        for r in range(10):
            loss, grad = smooth_l1(BoxDelta(*pred[r]), BoxDelta(*target[r]), beta=0.7)
            assert losses[r] == pytest.approx(loss, abs=1e-12)
            assert np.allclose(grads[r], grad)

    def test_gradient_matches_finite_differences(self, rng):
        # keep residuals away from the |d| == beta kink
        pred = np.array([0.4, -0.2, 1.8, -2.5])
        target = np.zeros(4)
        _, grad = smooth_l1_batch(pred, target, beta=1.0)

        def loss_fn(p):
            return float(smooth_l1_batch(p, target, beta=1.0)[0].sum())

        assert relative_error(grad, numerical_gradient(loss_fn, pred.copy())) < 1e-6

    def test_bad_beta(self):
        with pytest.raises(ValueError):
            smooth_l1(BoxDelta(0, 0, 0, 0), BoxDelta(0, 0, 0, 0), beta=0.0)


class TestJointLoss:
    def test_background_is_ce_only(self):
        logits = np.array([1.0, 2.0, 3.0])
        loss, grad_logits, grad_delta = joint_loss(logits, np.zeros(4), 0, None)
        _, ce, ce_grad = softmax_ce(logits, 0)
        assert loss == ce
        assert np.array_equal(grad_logits, ce_grad)
        assert not grad_delta.any()

    def test_positive_with_exact_deltas(self):
        logits = np.array([0.0, 1.0])
        delta = np.array([0.1, 0.2, 0.3, 0.4])
        loss, _, grad_delta = joint_loss(logits, delta, 1, BoxDelta(*delta))
        assert loss == softmax_ce(logits, 1)[1]
        assert not grad_delta.any()

    def test_sum_of_parts(self):
        logits = np.array([1.0, 2.0, 3.0])
        pred = np.array([2.0, 0.0, 0.0, 0.0])
        target = BoxDelta(0, 0, 0, 0)
        loss, _, _ = joint_loss(logits, pred, 2, target, LossConfig(lam=1.0))
        assert loss == pytest.approx(0.40760596444438079 + 1.5, abs=1e-9)

    def test_lambda_scales_regression(self):
        logits = np.zeros(2)
        pred = np.array([2.0, 0.0, 0.0, 0.0])
        l1, _, g1 = joint_loss(logits, pred, 1, BoxDelta(0, 0, 0, 0), LossConfig(lam=2.0))
        l0, _, _ = joint_loss(logits, pred, 1, BoxDelta(0, 0, 0, 0), LossConfig(lam=0.0))
        assert l1 - l0 == pytest.approx(2.0 * 1.5)
        assert g1[0] == pytest.approx(2.0)

    def test_positive_without_target_rejected(self):
        with pytest.raises(ValueError):
            joint_loss(np.zeros(3), np.zeros(4), 1, None)


class TestBoxCoding:
    def test_identity(self):
        p = RoI(0, 4, 6, 10, 8)
        assert tuple(encode_box(p, p)) == (0.0, 0.0, 0.0, 0.0)

    def test_closed_form(self):
        # proposal center (10,10) size (4,4); gt center (12,10) size (8,4)
        p = RoI(0, 8, 8, 4, 4)
        g = RoI(0, 8, 8, 8, 4)
        d = encode_box(p, g)
        assert d.tx == pytest.approx(0.5)
        assert d.ty == pytest.approx(0.0)
        assert d.tw == pytest.approx(math.log(2))
        assert d.th == pytest.approx(0.0)

    def test_decode_inverts_encode(self, rng):
        for _ in range(100):
            vals = rng.uniform(1, 30, size=8)
            p = RoI(0, vals[0], vals[1], vals[2], vals[3])
            g = RoI(0, vals[4], vals[5], vals[6], vals[7])
            back = decode_box(p, encode_box(p, g))
            assert back.x0 == pytest.approx(g.x0, abs=1e-9)
            assert back.y0 == pytest.approx(g.y0, abs=1e-9)
            assert back.w == pytest.approx(g.w, abs=1e-9)
            assert back.h == pytest.approx(g.h, abs=1e-9)

    def test_batch_matches_scalar(self, rng):
        props = rng.uniform(1, 20, size=(6, 4))
        gts = rng.uniform(1, 20, size=(6, 4))
        deltas = encode_boxes(props, gts)
        boxes = decode_boxes(props, deltas)
        for r in range(6):
            d = encode_box(RoI(0, *props[r]), RoI(0, *gts[r]))
            assert np.allclose(deltas[r], tuple(d))
            assert np.allclose(boxes[r], gts[r], atol=1e-9)


class TestVoteThroughLossGradients:
    """Joint gradient through vote -> softmax_ce and vote_box -> smooth_l1."""

    def test_classification_path(self, rng):
        k = 3
        bins = rng.standard_normal((1, 4, k, k))
        label = 2

        def loss_fn(b):
            return softmax_ce(vote(b)[0], label)[1]

        _, _, grad_logits = softmax_ce(vote(bins)[0], label)
        analytic = vote_backward(grad_logits[None, :], k)
        assert relative_error(analytic, numerical_gradient(loss_fn, bins.copy())) < 1e-6

    def test_regression_path(self, rng):
        k = 2
        bins = rng.standard_normal((1, 4, k, k))
        target = np.array([0.3, -0.2, 0.4, 0.1])

        def loss_fn(b):
            return float(smooth_l1_batch(vote_box(b), target[None, :])[0][0])

        _, grad = smooth_l1_batch(vote_box(bins), target[None, :])
        analytic = vote_backward(grad, k)
        assert relative_error(analytic, numerical_gradient(loss_fn, bins.copy())) < 1e-6
