import numpy as np
import pytest

from hazefield.evalkit import (dcp_dehaze, hazy_input_psnr, param_error, psnr,
                               run_eval, ssim)
from hazefield.fileio import load_dataset
from hazefield.haze import apply_asm
from hazefield.scenes import build_fixture_dataset, fixture_scene, gt_render


class TestPsnr:
    def test_identical_hits_cap(self):
        img = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(img, img) == 99.0

    def test_known_mse(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)
        assert psnr(a, b) == pytest.approx(20.0, rel=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        assert psnr(a, b) == pytest.approx(psnr(b, a), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestSsim:
    def test_identical_is_exactly_one(self):
        img = np.random.default_rng(2).random((16, 16, 3))
        assert ssim(img, img) == 1.0

    def test_checkerboard_negative_against_inverse(self):
        board = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
        assert ssim(board, 1.0 - board) < 0.0

    def test_luminance_shift_stays_high(self):
        x, y = np.meshgrid(np.linspace(0, 1, 16), np.linspace(0, 1, 16))
        smooth = 0.2 + 0.4 * x * y
        shifted = smooth + 0.1
        assert ssim(smooth, shifted) > 0.9

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestParamError:
    def test_exact(self):
        rb, ra, avg = param_error(0.162, 0.8, 0.162, 0.8)
        assert rb == 0.0 and ra == 0.0 and avg == 0.0

    def test_reported_scene_row(self):
        # estimates 0.1388 / 0.9309 against truth 0.162 / 0.8
        rb, ra, avg = param_error(0.1388, 0.9309, 0.162, 0.8)
        assert rb == pytest.approx(0.1432, abs=1e-4)
        assert ra == pytest.approx(0.1636, abs=1e-4)
        assert avg == pytest.approx(0.1534, abs=1e-4)

    def test_scale_invariance(self):
        r1 = param_error(0.1, 0.9, 0.2, 0.8)
        r2 = param_error(0.2, 1.8, 0.4, 1.6)
        assert r1 == pytest.approx(r2)

    def test_zero_gt_rejected(self):
        with pytest.raises(ValueError):
            param_error(0.1, 0.8, 0.0, 0.8)


class TestDcp:
    def test_zero_channel_passthrough(self):
        rng = np.random.default_rng(3)
        img = np.zeros((20, 20, 3))
        img[..., 0] = 0.3 + 0.5 * rng.random((20, 20))  # pure red scene
        out = dcp_dehaze(img)
        assert np.max(np.abs(out - img)) < 1e-9

    def test_constant_white(self):
        img = np.ones((20, 20, 3))
        out = dcp_dehaze(img)
        assert np.allclose(out, 1.0)

    def test_improves_hazed_fixture_view(self):
        from hazefield.scenes import generate_cameras
        scene = fixture_scene()
        cam = generate_cameras(2, radius=4.0, elevation_range=(0.4, 0.4),
                               width=48, height=48, focal=60, near=2, far=6)[0]
        clean, depth = gt_render(scene, cam)
        hazy = apply_asm(clean, depth, 0.25, 0.8)
        dehazed = dcp_dehaze(hazy)
        assert np.mean(np.abs(dehazed - clean)) < np.mean(np.abs(hazy - clean))

    def test_small_image_rejected(self):
        with pytest.raises(ValueError):
            dcp_dehaze(np.zeros((8, 8, 3)))


class TestRunEval:
    def test_missing_ground_truth_rejected(self, tmp_path):
        build_fixture_dataset(tmp_path / "d", n_train=2, n_test=2,
                              resolution=16, seed=0)
        ds = load_dataset(tmp_path / "d")
        del ds.manifest["gt"]
        with pytest.raises(ValueError, match="ground truth"):
            run_eval(ds, baseline_mode="naive", config=None)

    def test_needs_checkpoint_or_config(self, tmp_path):
        build_fixture_dataset(tmp_path / "d", n_train=2, n_test=2,
                              resolution=16, seed=0)
        ds = load_dataset(tmp_path / "d")
        with pytest.raises(ValueError, match="checkpoint or a train config"):
            run_eval(ds, baseline_mode="naive", config=None)

    def test_hazy_input_psnr_matches_direct(self, tmp_path):
        build_fixture_dataset(tmp_path / "d", n_train=2, n_test=2,
                              resolution=24, seed=0)
        ds = load_dataset(tmp_path / "d")
        direct = np.mean([psnr(ds.hazy_quantized(i).values, ds.gt_clean(i))
                          for i in ds.test_indices])
        assert hazy_input_psnr(ds) == pytest.approx(direct)

    def test_evaluation_deterministic(self, tmp_path):
        from hazefield.evalkit import evaluate_checkpoint
        from hazefield.optim import LrSchedule
        from hazefield.trainer import TrainConfig, train
        build_fixture_dataset(tmp_path / "d", n_train=3, n_test=2,
                              resolution=16, seed=0)
        ds = load_dataset(tmp_path / "d")
        cfg = TrainConfig(total_iterations=5, n_samples=10, stride=2,
                          views_per_step=2, checkpoint_every=0,
                          grid_resolution=(8, 8, 8), seed=0,
                          schedule=LrSchedule(lr_grid=5e-3, lr_atmo=5e-3))
        ck = train(ds, cfg).checkpoint
        r1 = evaluate_checkpoint(ds, ck, "ours")
        r2 = evaluate_checkpoint(ds, ck, "ours")
        assert r1 == r2
