import math

import numpy as np
import pytest

from hazefield.gradcheck import numeric_grad, rel_err
from hazefield.haze import (AtmosphereParams, apply_asm, asm_backward,
                            invert_asm, quantize, quantized_from_png,
                            transmission)


class TestTransmission:
    def test_zero_depth(self):
        assert transmission(0.0, 0.5) == 1.0

    def test_table_value(self):
        # beta from the ground-truth fixture setting, depth 5
        t = transmission(5.0, 0.162)
        assert t == pytest.approx(math.exp(-0.81), rel=1e-12)
        assert t == pytest.approx(0.4449, abs=5e-5)

    def test_monotone_in_beta(self):
        betas = np.linspace(0.01, 10.0, 50)
        ts = [transmission(2.0, b) for b in betas]
        assert all(b > a for a, b in zip(ts[1:], ts[:-1]))
        assert ts[-1] < 1e-8

    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError):
            transmission(-0.1, 0.5)


class TestApplyAsm:
    def test_beta_zero_identity(self):
        rng = np.random.default_rng(0)
        j = rng.random((5, 5, 3))
        d = rng.random((5, 5)) * 4
        assert np.array_equal(apply_asm(j, d, 0.0, 0.8), j)

    def test_black_object_hand_value(self):
        # J = 0, A = 0.8, t = exp(-0.81): I = 0.8 * (1 - t)
        j = np.zeros((1, 1, 3))
        d = np.full((1, 1), 5.0)
        i = apply_asm(j, d, 0.162, 0.8)
        assert np.allclose(i, 0.8 * (1.0 - math.exp(-0.81)))
        assert np.allclose(i, 0.4441, atol=5e-4)

    def test_airlight_limit(self):
        j = np.full((2, 2, 3), 0.3)
        d = np.full((2, 2), 1e6)
        assert np.allclose(apply_asm(j, d, 0.5, 0.9), 0.9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_asm(np.zeros((3, 3, 3)), np.zeros((4, 4)), 0.1, 0.8)

    def test_convexity_between_j_and_a(self):
        rng = np.random.default_rng(1)
        j = rng.random((8, 8, 3))
        d = rng.random((8, 8)) * 6
        a = 0.8
        i = apply_asm(j, d, 0.3, a)
        assert np.all(i >= np.minimum(j, a) - 1e-12)
        assert np.all(i <= np.maximum(j, a) + 1e-12)

    def test_airlight_squeeze_in_beta(self):
        rng = np.random.default_rng(2)
        j = rng.random((6, 6, 3))
        d = rng.random((6, 6)) * 5
        a = 0.7
        prev = None
        for beta in np.linspace(0.01, 2.0, 25):
            gap = np.abs(apply_asm(j, d, beta, a) - a)
            if prev is not None:
                assert np.all(gap <= prev + 1e-12)
            prev = gap


class TestInvertAsm:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        j = rng.random((8, 8, 3))
        d = rng.random((8, 8)) * 5
        i = apply_asm(j, d, 0.162, 0.8)
        back = invert_asm(i, d, 0.162, 0.8)
        assert np.max(np.abs(back - j)) < 1e-6

    def test_round_trip_with_quantization(self):
        rng = np.random.default_rng(4)
        j = rng.random((8, 8, 3))
        d = rng.random((8, 8)) * 5
        t = transmission(d, 0.162)
        q = quantize(apply_asm(j, d, 0.162, 0.8))
        back = invert_asm(q.values, d, 0.162, 0.8)
        bound = (0.5 / 255.0) / t[..., None] + 1e-12
        assert np.all(np.abs(back - j) <= bound)

    def test_saturated_returns_airlight(self):
        a = 0.8
        i = np.full((4, 4, 3), a)
        d = np.random.default_rng(5).random((4, 4)) * 5
        back = invert_asm(i, d, 0.3, a)
        assert np.allclose(back, a, atol=1e-12)

    def test_beta_zero_identity(self):
        i = np.random.default_rng(6).random((4, 4, 3))
        assert np.allclose(invert_asm(i, np.ones((4, 4)), 0.0, 0.8), i)

    def test_invalid_t_min(self):
        with pytest.raises(ValueError):
            invert_asm(np.zeros((2, 2, 3)), np.zeros((2, 2)), 0.1, 0.8, t_min=0.0)


class TestAsmBackward:
    def test_finite_difference_match(self):
        rng = np.random.default_rng(7)
        j = rng.random((4, 4, 3))
        d = 0.5 + rng.random((4, 4)) * 4
        beta, a = 0.2, 0.9
        d_i = rng.normal(size=(4, 4, 3))
        dj, dd, db, da = asm_backward(j, d, beta, a, d_i)

        f_j = lambda v: float(np.sum(apply_asm(v, d, beta, a) * d_i))
        f_d = lambda v: float(np.sum(apply_asm(j, v, beta, a) * d_i))
        f_b = lambda v: float(np.sum(apply_asm(j, d, float(v), a) * d_i))
        f_a = lambda v: float(np.sum(apply_asm(j, d, beta, float(v)) * d_i))
        assert rel_err(dj, numeric_grad(f_j, j)) <= 1e-5
        assert rel_err(dd, numeric_grad(f_d, d)) <= 1e-5
        assert rel_err(db, numeric_grad(f_b, np.array(beta))) <= 1e-5
        assert rel_err(da, numeric_grad(f_a, np.array(a))) <= 1e-5

    def test_beta_zero(self):
        rng = np.random.default_rng(8)
        j = rng.random((3, 3, 3))
        d = rng.random((3, 3))
        d_i = rng.normal(size=(3, 3, 3))
        dj, dd, db, da = asm_backward(j, d, 0.0, 0.8, d_i)
        assert np.array_equal(dj, d_i)
        assert da == 0.0

    def test_object_equals_airlight(self):
        a = 0.6
        j = np.full((3, 3, 3), a)
        d = np.random.default_rng(9).random((3, 3))
        d_i = np.random.default_rng(10).normal(size=(3, 3, 3))
        _, dd, db, _ = asm_backward(j, d, 0.4, a, d_i)
        assert db == 0.0
        assert np.all(dd == 0.0)


class TestQuantize:
    def test_mid_value(self):
        q = quantize(np.array([[0.5]]))
        assert q.values[0, 0] == pytest.approx(128 / 255)
        assert q.lo[0, 0] == pytest.approx(128 / 255 - 1 / 510)
        assert q.hi[0, 0] == pytest.approx(128 / 255 + 1 / 510)

    def test_boundary_clamp(self):
        q = quantize(np.array([[0.0]]))
        assert q.values[0, 0] == 0.0
        assert q.lo[0, 0] == 0.0
        assert q.hi[0, 0] == pytest.approx(1 / 510)

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        q1 = quantize(rng.random((6, 6, 3)))
        q2 = quantize(q1.values)
        assert np.array_equal(q1.values, q2.values)

    def test_interval_invariants(self):
        rng = np.random.default_rng(12)
        q = quantize(rng.random((16, 16, 3)))
        assert np.all(q.lo <= q.values) and np.all(q.values <= q.hi)
        assert np.all(q.hi - q.lo <= 1 / 255 + 1e-9)

    def test_levels_validated(self):
        with pytest.raises(ValueError):
            quantize(np.zeros((2, 2)), levels=1)

    def test_png_code_round_trip(self):
        rng = np.random.default_rng(13)
        q = quantize(rng.random((4, 4, 3)))
        codes = np.round(q.values * 255).astype(np.uint8)
        q2 = quantized_from_png(codes)
        assert np.array_equal(q.values, q2.values)


class TestAtmosphereParams:
    def test_mapping_ranges(self):
        rng = np.random.default_rng(14)
        p = AtmosphereParams(beta_raw=rng.normal(0, 10, 100),
                             a_raw=rng.normal(0, 10, 100))
        assert np.all(p.beta > 0)
        assert np.all((p.a > 0) & (p.a < 1.5))

    def test_init_targets(self):
        p = AtmosphereParams.create(4, beta_init=0.05, a_init=0.75)
        assert np.allclose(p.beta, 0.05)
        assert np.allclose(p.a, 0.75)

    def test_chain_raw_matches_fd(self):
        p = AtmosphereParams.create(3, beta_init=0.2, a_init=0.9)
        db, da = p.chain_raw(np.ones(3), np.ones(3))

        def f_beta(raw):
            return float(AtmosphereParams(raw, p.a_raw).beta.sum())

        def f_a(raw):
            return float(AtmosphereParams(p.beta_raw, raw).a.sum())

        assert rel_err(db, numeric_grad(f_beta, p.beta_raw)) <= 1e-6
        assert rel_err(da, numeric_grad(f_a, p.a_raw)) <= 1e-6
