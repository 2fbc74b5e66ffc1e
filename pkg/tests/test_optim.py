import numpy as np
import pytest

from hazefield.optim import AdamState, LrSchedule, adam_step, lr_at


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = np.array([1.0, -2.0, 3.0])
        state = AdamState.for_params([p])
        adam_step([p], [np.zeros(3)], state, lr=0.1)
        assert np.array_equal(p, [1.0, -2.0, 3.0])
        assert state.step_count == 1

    def test_first_step_hand_value(self):
        # bias-corrected first step with g = 1 moves by about -lr
        p = np.array([0.0])
        state = AdamState.for_params([p])
        adam_step([p], [np.ones(1)], state, lr=0.01)
        expected = -0.01 * 1.0 / (1.0 + 1e-8)
        assert p[0] == pytest.approx(expected, rel=1e-12)

    def test_two_runs_bitwise_identical(self):
        rng = np.random.default_rng(0)
        grads = [rng.normal(size=(4, 4)) for _ in range(10)]
        results = []
        for _ in range(2):
            p = np.ones((4, 4))
            state = AdamState.for_params([p])
            for g in grads:
                adam_step([p], [g], state, lr=0.05)
            results.append(p.copy())
        assert np.array_equal(results[0], results[1])

    def test_nonfinite_gradient_diverges(self):
        p = np.zeros(2)
        state = AdamState.for_params([p])
        with pytest.raises(RuntimeError, match="diverged"):
            adam_step([p], [np.array([1.0, np.nan])], state, lr=0.01)

    def test_update_magnitude_bound(self):
        # provable per-step bound lr*(1-b1)/sqrt(1-b2); random dense gradients
        # stay within a whisker of lr itself
        rng = np.random.default_rng(1)
        p = np.zeros(50)
        state = AdamState.for_params([p])
        lr = 0.02
        hard = lr * (1.0 - state.beta1) / np.sqrt(1.0 - state.beta2)
        prev = p.copy()
        steps = []
        for _ in range(200):
            adam_step([p], [rng.normal(size=50)], state, lr)
            step = np.abs(p - prev)
            assert np.all(step <= hard + 1e-12)
            steps.append(step.max())
            prev = p.copy()
        assert max(steps) <= lr * 1.01

    def test_shape_mismatch(self):
        p = np.zeros(3)
        state = AdamState.for_params([p])
        with pytest.raises(ValueError):
            adam_step([p], [np.zeros(4)], state, lr=0.01)

    def test_zero_lr_leaves_params(self):
        p = np.array([1.0, 2.0])
        state = AdamState.for_params([p])
        adam_step([p], [np.ones(2)], state, lr=0.0)
        assert np.array_equal(p, [1.0, 2.0])


class TestSchedule:
    def test_base_rate_at_zero(self):
        s = LrSchedule(lr_grid=1e-2, lr_atmo=3e-4)
        lr_g, lr_a = lr_at(s, 0, 3000)
        assert lr_g == pytest.approx(1e-2)
        assert lr_a == pytest.approx(3e-4)

    def test_one_decay_after_first_milestone(self):
        s = LrSchedule(lr_grid=1e-2)
        lr_g, _ = lr_at(s, 1000, 3000)
        assert lr_g == pytest.approx(1e-2 * 0.33)
        lr_g_before, _ = lr_at(s, 999, 3000)
        assert lr_g_before == pytest.approx(1e-2)

    def test_four_decays_after_last_milestone(self):
        s = LrSchedule(lr_grid=1e-2)
        lr_g, _ = lr_at(s, 2999, 3000)
        assert lr_g == pytest.approx(1e-2 * 0.33 ** 4)
        assert lr_g == pytest.approx(1.186e-4, rel=1e-3)

    def test_nonincreasing_step_function(self):
        s = LrSchedule()
        prev = np.inf
        for it in range(0, 3000, 7):
            lr_g, _ = lr_at(s, it, 3000)
            assert lr_g <= prev + 1e-15
            prev = lr_g

    def test_out_of_range(self):
        s = LrSchedule()
        with pytest.raises(ValueError):
            lr_at(s, 3000, 3000)
        with pytest.raises(ValueError):
            lr_at(s, -1, 3000)

    def test_milestones_validated(self):
        with pytest.raises(ValueError):
            LrSchedule(milestones=(0.5, 0.3)).validate()
        with pytest.raises(ValueError):
            LrSchedule(decay=1.5).validate()
