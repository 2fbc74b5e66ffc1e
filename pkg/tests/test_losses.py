import numpy as np
import pytest

from hazefield.gradcheck import numeric_grad, rel_err
from hazefield.losses import (LossWeights, cd_loss, cons_loss, local_contrast,
                              mse_loss, rec_loss, smrc_penalty, total_loss,
                              tv_loss)


class TestSmrc:
    def test_exact_match_zero(self):
        v, d = smrc_penalty(0.5, 0.5, 0.49, 0.51, 0.1)
        assert v == 0.0 and d == 0.0

    def test_below_branch_hand_value(self):
        lo, hi, q = 0.4, 0.42, 0.41
        v, d = smrc_penalty(lo - 0.1, q, lo, hi, 0.1)
        assert v == pytest.approx(0.01)
        assert d == pytest.approx(-0.2)

    def test_inside_branch_hand_value(self):
        q = 0.5
        v, _ = smrc_penalty(q + 0.001, q, q - 0.002, q + 0.002, 0.1)
        assert v == pytest.approx(1e-7)

    def test_dominated_by_squared_error(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            q = rng.random()
            half = 1 / 510
            u = q + rng.normal(0, 0.1)
            lam = rng.uniform(0.01, 1.0)
            v, _ = smrc_penalty(u, q, max(q - half, 0), min(q + half, 1), lam)
            assert v <= (u - q) ** 2 + 1e-15

    def test_zero_set(self):
        q, lo, hi = 0.5, 0.498, 0.502
        for u in (lo, hi):
            v, _ = smrc_penalty(u + (1e-12 if u == lo else -1e-12), q, lo, hi, 0.5)
            assert v > 0  # inside branch at q != u is nonzero
        v_lo, _ = smrc_penalty(lo - 1e-9, q, lo, hi, 0.5)
        assert v_lo == pytest.approx(0.0, abs=1e-17)

    def test_rec_loss_reduction(self):
        rng = np.random.default_rng(1)
        u = rng.random((4, 4, 3))
        q = rng.random((4, 4, 3))
        half = 1 / 510
        v, d = rec_loss(u, q, np.clip(q - half, 0, 1), np.clip(q + half, 0, 1), 0.1)
        vals, _ = smrc_penalty(u, q, np.clip(q - half, 0, 1),
                               np.clip(q + half, 0, 1), 0.1)
        assert v == pytest.approx(float(vals.mean()))
        assert d.shape == u.shape


class TestConsLoss:
    def test_all_equal_zero(self):
        v, db, da = cons_loss(np.full(5, 0.3), np.full(5, 0.9))
        assert v == 0.0
        assert np.all(db == 0) and np.all(da == 0)

    def test_hand_value(self):
        v, _, _ = cons_loss(np.array([0.0, 2.0]), np.array([0.8, 0.8]))
        assert v == pytest.approx(1.0)

    def test_single_image(self):
        v, _, _ = cons_loss(np.array([0.4]), np.array([0.7]))
        assert v == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cons_loss(np.array([]), np.array([]))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        beta = rng.random(7)
        a = rng.random(7)
        v1, _, _ = cons_loss(beta, a)
        perm = rng.permutation(7)
        v2, _, _ = cons_loss(beta[perm], a[perm])
        assert v1 == pytest.approx(v2, rel=1e-14)


class TestLocalContrast:
    def test_constant_zero(self):
        v, d = local_contrast(np.full((8, 8, 3), 0.7), 4)
        assert v == 0.0
        assert np.all(d == 0.0)

    def test_two_by_two_hand_value(self):
        img = np.array([[0.0, 1.0], [1.0, 0.0]])
        v, _ = local_contrast(img, 2)
        assert v == pytest.approx(0.5)

    def test_checkerboard_beats_blur(self):
        board = np.indices((8, 8)).sum(axis=0) % 2
        board = board.astype(np.float64)
        # 3x3 box-blur oracle (edge-replicated)
        padded = np.pad(board, 1, mode="edge")
        blurred = sum(padded[i:i + 8, j:j + 8] for i in range(3)
                      for j in range(3)) / 9.0
        v_sharp, _ = local_contrast(board, 2)
        v_blur, _ = local_contrast(blurred, 2)
        assert v_sharp > v_blur

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            local_contrast(np.zeros((3, 8)), 4)

    def test_constant_shift_invariant(self):
        rng = np.random.default_rng(3)
        img = rng.random((8, 8, 3))
        v1, _ = local_contrast(img, 4)
        v2, _ = local_contrast(img + 0.17, 4)
        assert v1 == pytest.approx(v2, rel=1e-12)

    def test_gradient_divisible(self):
        rng = np.random.default_rng(4)
        img = rng.random((8, 8, 3))
        _, d = local_contrast(img, 4)
        f = lambda v: local_contrast(v, 4)[0]
        assert rel_err(d, numeric_grad(f, img)) <= 1e-4

    def test_gradient_padded(self):
        rng = np.random.default_rng(5)
        img = rng.random((7, 10, 3))
        _, d = local_contrast(img, 4)
        f = lambda v: local_contrast(v, 4)[0]
        assert rel_err(d, numeric_grad(f, img)) <= 1e-4


class TestCdLoss:
    def test_identical_inputs_zero(self):
        rng = np.random.default_rng(6)
        img = rng.random((8, 8, 3))
        v, _ = cd_loss(img, img, 4)
        assert v == pytest.approx(0.0, abs=1e-15)

    def test_sign_convention(self):
        rng = np.random.default_rng(7)
        smooth = np.full((8, 8, 3), 0.5) + 0.01 * rng.random((8, 8, 3))
        sharp = rng.random((8, 8, 3))
        v, _ = cd_loss(smooth, sharp, 4)
        assert v < 0

    def test_gradient(self):
        rng = np.random.default_rng(8)
        hazy = rng.random((8, 8, 3))
        est = rng.random((8, 8, 3))
        _, d = cd_loss(hazy, est, 4)
        f = lambda e: cd_loss(hazy, e, 4)[0]
        assert rel_err(d, numeric_grad(f, est)) <= 1e-4

    def test_hinge(self):
        rng = np.random.default_rng(9)
        smooth = np.full((8, 8, 3), 0.5)
        sharp = rng.random((8, 8, 3))
        v, d = cd_loss(smooth, sharp, 4, hinge=True)
        assert v == 0.0 and np.all(d == 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cd_loss(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)), 4)


class TestTvLoss:
    def test_constant_is_eps(self):
        v, d = tv_loss(np.full((6, 6, 3), 0.3), 1e-4)
        assert v == pytest.approx(1e-4)
        assert np.allclose(d, 0.0)

    def test_ramp_hand_value(self):
        c = 0.05
        img = np.tile(np.arange(8) * c, (8, 1))[..., None]
        v, _ = tv_loss(img, 1e-6)
        assert v == pytest.approx(c, rel=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(10)
        img = rng.random((8, 8, 3))
        _, d = tv_loss(img, 1e-4)
        f = lambda v: tv_loss(v, 1e-4)[0]
        assert rel_err(d, numeric_grad(f, img)) <= 1e-4

    def test_constant_shift_invariant(self):
        rng = np.random.default_rng(11)
        img = rng.random((8, 8, 3))
        assert tv_loss(img, 1e-4)[0] == pytest.approx(
            tv_loss(img + 0.3, 1e-4)[0], rel=1e-12)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            tv_loss(np.zeros((1, 8, 3)), 1e-4)


class TestTotalAndMse:
    def test_all_zero(self):
        assert total_loss(0, 0, 0, 0, LossWeights()) == 0.0

    def test_weight_degeneracy(self):
        w = LossWeights(lambda1=0, lambda2=0, lambda3=0)
        assert total_loss(0.37, 5, -2, 9, w) == pytest.approx(0.37)

    def test_hand_value(self):
        w = LossWeights(lambda1=0.1, lambda2=0.01, lambda3=0.003)
        assert total_loss(1.0, 2.0, -1.0, 4.0, w) == pytest.approx(1.202)

    def test_nonfinite_diverges(self):
        with pytest.raises(RuntimeError, match="diverged"):
            total_loss(np.nan, 0, 0, 0, LossWeights())

    def test_mse_identical(self):
        rng = np.random.default_rng(12)
        x = rng.random((4, 4, 3))
        v, _ = mse_loss(x, x)
        assert v == 0.0

    def test_mse_offset(self):
        x = np.zeros((5, 5, 3))
        v, d = mse_loss(x, x + 0.1)
        assert v == pytest.approx(0.01)
        assert np.allclose(d, 2 * 0.1 / x.size)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((2, 2)), np.zeros((3, 2)))
