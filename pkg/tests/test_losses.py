"""Tests for pose losses and keypoint alignment."""

import math

import numpy as np
import pytest

from src.softpose.losses import (ALPHA_CLAMP, LossWeights, PoseSample, align_keypoints, default_keypoints,
                                 entropy, keypoints_in_camera, loss_alpha, loss_cos_alpha, loss_keypoints,
                                 loss_total, loss_translation_rel, mean_alpha, mean_translation_rel,
                                 soft_cross_entropy, soft_cross_entropy_batch)
from src.softpose.rotcore import IDENTITY, axis_angle, geodesic_angle, quat_to_matrix, sample_uniform


class TestTranslationLoss:
    """Test the relative translation loss."""

    def test_relative_error(self):
        assert loss_translation_rel([([0.0, 0.0, 10.5], [0.0, 0.0, 10.0])]) == pytest.approx(0.05)

    def test_sums_over_batch(self):
        batch = [([0.0, 0.0, 11.0], [0.0, 0.0, 10.0]), ([0.0, 1.0, 20.0], [0.0, 0.0, 20.0])]
        assert loss_translation_rel(batch) == pytest.approx(0.1 + 0.05)
        assert mean_translation_rel(batch) == pytest.approx(0.075)

    def test_zero_range(self):
        with pytest.raises(ValueError, match="undefined relative error"):
            loss_translation_rel([([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])])

    def test_perfect_prediction(self):
        assert loss_translation_rel([([1.0, 2.0, 30.0], [1.0, 2.0, 30.0])]) == 0.0


class TestOrientationLoss:
    """Test the orientation regression losses."""

    def test_alpha_is_half_angle(self):
        q = axis_angle([0.0, 1.0, 0.0], math.radians(40.0))
        assert loss_alpha(q, IDENTITY) == pytest.approx(math.radians(20.0))

    def test_alpha_clamped_at_identity(self):
        assert loss_alpha(IDENTITY, IDENTITY) == pytest.approx(math.acos(ALPHA_CLAMP))

    def test_sign_invariant(self):
        q = sample_uniform(np.random.default_rng(4))
        assert loss_alpha(-q, IDENTITY) == pytest.approx(loss_alpha(q, IDENTITY))
        assert loss_cos_alpha(-q, IDENTITY) == pytest.approx(loss_cos_alpha(q, IDENTITY))

    def test_cos_alpha(self):
        q = axis_angle([1.0, 0.0, 0.0], math.pi / 2)
        assert loss_cos_alpha(q, IDENTITY) == pytest.approx(1.0 - math.cos(math.pi / 4))
        assert loss_cos_alpha(IDENTITY, IDENTITY) == pytest.approx(0.0)

    def test_alpha_and_cosine_rank_alike(self):
        rng = np.random.default_rng(12)
        q_gt = sample_uniform(rng)
        qs = sample_uniform(rng, 500)
        alpha = loss_alpha(qs, q_gt)
        cosine = loss_cos_alpha(qs, q_gt)
        assert np.array_equal(np.argsort(alpha), np.argsort(cosine))

    def test_mean_alpha(self):
        qs = np.array([IDENTITY, axis_angle([0.0, 0.0, 1.0], math.radians(60.0))])
        expected = (math.acos(ALPHA_CLAMP) + math.radians(30.0)) / 2
        assert mean_alpha(qs, np.array([IDENTITY, IDENTITY])) == pytest.approx(expected)

    def test_total_loss(self):
        batch = [([0.0, 0.0, 10.5], [0.0, 0.0, 10.0])]
        assert loss_total(batch, 0.2, LossWeights(2.0, 3.0)) == pytest.approx(2.0 * 0.05 + 3.0 * 0.2)

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0)
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0)


class TestSoftCrossEntropy:
    """Test the soft cross-entropy and its gradient."""

    def setup_method(self):
        self.rng = np.random.default_rng(10)

    def test_minimized_at_target(self):
        target = self.rng.dirichlet(np.ones(6))
        loss, grad = soft_cross_entropy(target, np.log(target))
        assert loss == pytest.approx(entropy(target), abs=1e-9)
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        h = 1e-5
        for _ in range(100):
            n = int(self.rng.integers(2, 12))
            target = self.rng.dirichlet(np.ones(n))
            logits = self.rng.normal(0.0, 2.0, n)
            _, grad = soft_cross_entropy(target, logits)
            numeric = np.empty(n)
            for i in range(n):
                step = np.zeros(n)
                step[i] = h
                numeric[i] = (soft_cross_entropy(target, logits + step)[0]
                              - soft_cross_entropy(target, logits - step)[0]) / (2 * h)
            assert np.max(np.abs(numeric - grad)) < 1e-6

    def test_bounded_below_by_target_entropy(self):
        for _ in range(200):
            n = int(self.rng.integers(2, 50))
            target = self.rng.dirichlet(np.ones(n))
            loss, _ = soft_cross_entropy(target, self.rng.normal(0.0, 3.0, n))
            assert loss >= entropy(target) - 1e-9

    def test_batch_sums(self):
        targets = self.rng.dirichlet(np.ones(5), size=3)
        logits = self.rng.normal(size=(3, 5))
        total, grad = soft_cross_entropy_batch(targets, logits)
        assert total == pytest.approx(sum(soft_cross_entropy(t, l)[0] for t, l in zip(targets, logits)))
        assert grad.shape == (3, 5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            soft_cross_entropy(np.array([0.5, 0.5]), np.zeros(3))


class TestPoseSample:
    """Test the pose container."""

    def test_canonicalizes(self):
        pose = PoseSample(np.array([-1.0, 0.0, 0.0, 0.0]), [0.0, 0.0, 5.0])
        assert np.allclose(pose.q, IDENTITY)
        assert pose.range_m == pytest.approx(5.0)

    def test_bad_translation(self):
        with pytest.raises(ValueError):
            PoseSample(IDENTITY, [0.0, 1.0])


class TestAlignKeypoints:
    """Test closed-form pose recovery from keypoints."""

    def setup_method(self):
        self.rng = np.random.default_rng(6)

    def test_exact_recovery(self):
        for _ in range(1000):
            body = self.rng.normal(size=(3, 3))
            q = sample_uniform(self.rng)
            t = self.rng.uniform(-5.0, 5.0, 3) + [0.0, 0.0, 20.0]
            cam = body @ quat_to_matrix(q).T + t
            fit = align_keypoints(body, cam)
            assert geodesic_angle(fit.pose.q, q) < 1e-6
            assert np.allclose(fit.rotation, quat_to_matrix(q), atol=1e-9)
            assert np.linalg.norm(fit.pose.t - t) < 1e-9
            assert fit.residual < 1e-9

    def test_reflection_trap(self):
        # coplanar points whose unconstrained solution is a reflection
        body = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])
        q = axis_angle([1.0, 2.0, 3.0], 2.0)
        cam = body @ quat_to_matrix(q).T + [0.5, -0.5, 15.0]
        fit = align_keypoints(body, cam)
        assert np.linalg.det(fit.rotation) == pytest.approx(1.0)
        assert np.allclose(fit.rotation, quat_to_matrix(q), atol=1e-9)

    def test_default_keypoints_roundtrip(self):
        pose = PoseSample(sample_uniform(self.rng), [1.0, -2.0, 25.0])
        body = default_keypoints(2.0)
        fit = align_keypoints(body, keypoints_in_camera(pose, body))
        assert np.allclose(fit.pose.q, pose.q, atol=1e-9)
        assert np.allclose(fit.pose.t, pose.t, atol=1e-9)

    def test_residual_invariant_under_common_rotation(self):
        for _ in range(100):
            body = self.rng.normal(size=(5, 3))
            pose = PoseSample(sample_uniform(self.rng), [0.5, 1.0, 20.0])
            cam = keypoints_in_camera(pose, body) + self.rng.normal(0.0, 0.05, size=(5, 3))
            turn = quat_to_matrix(sample_uniform(self.rng))
            fit = align_keypoints(body, cam)
            turned = align_keypoints(body @ turn.T, cam @ turn.T)
            assert fit.residual > 0.0
            assert turned.residual == pytest.approx(fit.residual, rel=1e-6)

    def test_collinear_points(self):
        body = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        with pytest.raises(ValueError, match="degenerate keypoint set"):
            align_keypoints(body, body)

    def test_mismatched_shapes(self):
        with pytest.raises(ValueError):
            align_keypoints(np.zeros((3, 3)), np.zeros((4, 3)))

    def test_keypoint_loss(self):
        true = default_keypoints(1.0) + [0.0, 0.0, 10.0]
        pred = true + [0.0, 0.5, 0.0]
        assert loss_keypoints([(pred, true, [0.0, 0.0, 10.0])]) == pytest.approx(0.05)
