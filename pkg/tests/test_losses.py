import math

import numpy as np
import pytest

from lanemap.errors import ValidationError
from lanemap.losses import (
    CLAMP_EPS,
    cross_entropy_from_logits,
    cross_entropy_loss,
    focal_loss,
    focal_loss_grad,
    grad_check,
    seg_loss,
    seg_loss_grad,
    smooth_l1_grad,
    smooth_l1_loss,
    softmax,
    total_loss,
)


class TestFocal:
    def test_perfect_prediction_near_zero(self):
        t = np.zeros((4, 4))
        t[1, 2] = 1.0
        assert focal_loss(t, t) == pytest.approx(0.0, abs=1e-5)

    def test_single_positive_half_confidence(self):
        # (1-0.5)^2 * ln 2 by hand.
        assert focal_loss(np.array([0.5]), np.array([1.0])) == pytest.approx(0.25 * math.log(2), rel=1e-9)

    def test_single_negative_half_confidence(self):
        # y=0: (1-0)^4 * 0.5^2 * ln 2, N floored at 1.
        assert focal_loss(np.array([0.5]), np.array([0.0])) == pytest.approx(0.25 * math.log(2), rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            focal_loss(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_nonnegative_random(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            pred = rng.uniform(0.01, 0.99, size=(6, 6))
            target = np.exp(-rng.uniform(0, 8, size=(6, 6)))
            target[rng.integers(0, 6), rng.integers(0, 6)] = 1.0
            assert focal_loss(pred, target) >= 0.0


class TestCrossEntropy:
    def test_one_hot_correct(self):
        assert cross_entropy_loss(np.array([0.0, 1.0, 0.0]), 1) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_four_classes(self):
        assert cross_entropy_loss(np.full(4, 0.25), 2) == pytest.approx(math.log(4), rel=1e-12)

    def test_low_confidence(self):
        probs = np.array([0.1, 0.9])
        assert cross_entropy_loss(probs, 0) == pytest.approx(2.30259, abs=1e-5)

    def test_index_out_of_range(self):
        with pytest.raises(ValidationError):
            cross_entropy_loss(np.array([0.5, 0.5]), 2)


class TestSmoothL1:
    def test_zero_at_equality(self):
        assert smooth_l1_loss((1.0, 2.0), (1.0, 2.0)) == 0.0

    def test_quadratic_region(self):
        assert smooth_l1_loss((0.5, 0.0), (0.0, 0.0)) == pytest.approx(0.125, rel=1e-12)

    def test_linear_region(self):
        assert smooth_l1_loss((2.0, 0.0), (0.0, 0.0)) == pytest.approx(1.5, rel=1e-12)


class TestSegLoss:
    def test_perfect_binary(self):
        t = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert seg_loss(t, t) == pytest.approx(0.0, abs=1e-5)

    def test_uniform_half(self):
        t = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert seg_loss(np.full((2, 2), 0.5), t) == pytest.approx(math.log(2), rel=1e-9)

    def test_confident_and_wrong_hits_clamp(self):
        pred = np.ones((3, 3))
        target = np.zeros((3, 3))
        assert seg_loss(pred, target) == pytest.approx(-math.log(CLAMP_EPS), rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            seg_loss(np.zeros((2, 2)), np.zeros((4,)))


class TestTotal:
    def test_paper_weights_arithmetic(self):
        report = total_loss(1.0, 1.0, 1.0, 1.0)
        assert report.total == 2.11

    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, 0.0).total == 0.0

    def test_single_term_scaling(self):
        assert total_loss(0.0, 0.0, 1.0, 0.0).total == pytest.approx(0.1, rel=1e-12)

    def test_optional_offset_term(self):
        report = total_loss(1.0, 1.0, 1.0, 1.0, l_offset=0.5)
        assert report.total == pytest.approx(2.61, rel=1e-12)
        assert report.l_offset == 0.5

    def test_linear_in_each_component(self):
        base = total_loss(0.3, 0.4, 0.5, 0.6).total
        assert total_loss(1.3, 0.4, 0.5, 0.6).total == pytest.approx(base + 1.0, rel=1e-12)
        assert total_loss(0.3, 1.4, 0.5, 0.6).total == pytest.approx(base + 1.0, rel=1e-12)
        assert total_loss(0.3, 0.4, 1.5, 0.6).total == pytest.approx(base + 0.1, rel=1e-12)
        assert total_loss(0.3, 0.4, 0.5, 1.6).total == pytest.approx(base + 0.01, rel=1e-12)

    def test_negative_part_rejected(self):
        with pytest.raises(ValidationError):
            total_loss(-0.1, 0.0, 0.0, 0.0)


class TestGradCheck:
    def test_smooth_l1_gradient(self):
        target = np.array([0.0, 0.0])

        def fn(x):
            return smooth_l1_loss(x, target), smooth_l1_grad(x, target)

        assert grad_check(fn, np.array([0.3, 0.7])) < 1e-6

    def test_focal_gradient_random_interior(self):
        rng = np.random.default_rng(17)
        target = np.exp(-rng.uniform(0, 6, size=12))
        target[3] = 1.0

        def fn(x):
            return focal_loss(x, target), focal_loss_grad(x, target)

        worst = max(grad_check(fn, rng.uniform(0.05, 0.95, size=12)) for _ in range(5))
        assert worst < 1e-4

    def test_cross_entropy_via_logits_at_uniform(self):
        def fn(z):
            return cross_entropy_from_logits(z, 1)

        assert grad_check(fn, np.zeros(4)) < 1e-6

    def test_seg_gradient(self):
        rng = np.random.default_rng(23)
        target = (rng.uniform(size=9) > 0.5).astype(float)

        def fn(x):
            return seg_loss(x.reshape(3, 3), target.reshape(3, 3)), seg_loss_grad(
                x.reshape(3, 3), target.reshape(3, 3)
            ).ravel()

        assert grad_check(fn, rng.uniform(0.1, 0.9, size=9)) < 1e-6

    def test_softmax_is_simplex(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = softmax(rng.normal(size=7))
            assert p.min() >= 0
            assert p.sum() == pytest.approx(1.0, abs=1e-12)
