"""Metrics and baselines: PSNR/SSIM, parameter recovery error, dark-channel
dehazing, and the comparison/sweep/ablation harnesses.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fileio import Dataset
from .trainer import (Checkpoint, TrainConfig, TrainResult, naive_config,
                      render_novel_view, train)

PSNR_CAP = 99.0


def psnr(a, b) -> float:
    """10*log10(1/MSE) for images in [0,1], capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    wins = sliding_window_view(x, win.shape)
    return np.einsum("ijkl,kl->ij", wins, win)


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
    dynamic range 1; channels averaged, statistics over the valid region."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError("image too small for an 11x11 window")
    win = _gaussian_window()
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _filter_valid(x, win)
        mu_y = _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mu_x ** 2
        syy = _filter_valid(y * y, win) - mu_y ** 2
        sxy = _filter_valid(x * y, win) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def param_error(beta_hat: float, a_hat: float, beta_gt: float, a_gt: float):
    """Relative errors |x_hat - x|/x and their unweighted mean."""
    if beta_gt <= 0 or a_gt <= 0:
        raise ValueError("ground-truth parameters must be positive")
    rel_beta = abs(beta_hat - beta_gt) / beta_gt
    rel_a = abs(a_hat - a_gt) / a_gt
    return rel_beta, rel_a, 0.5 * (rel_beta + rel_a)


def _min_filter(x: np.ndarray, size: int) -> np.ndarray:
    pad = size // 2
    xp = np.pad(x, pad, mode="edge")
    return sliding_window_view(xp, (size, size)).min(axis=(2, 3))


def dcp_dehaze(image, omega: float = 0.95, patch: int = 15,
               t0: float = 0.1) -> np.ndarray:
    """Dark-channel-prior dehazing without guided-filter refinement.

    Airlight is the maximum gray intensity among the brightest 0.1% of
    dark-channel pixels; the transmission estimate is 1 - omega * dark(I/A).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an HxWx3 image")
    if image.shape[0] < patch or image.shape[1] < patch:
        raise ValueError("image smaller than the dark-channel patch")
    dark = _min_filter(image.min(axis=2), patch)
    k = max(1, int(round(1e-3 * dark.size)))
    cand = np.argpartition(dark.reshape(-1), -k)[-k:]
    intensity = image.reshape(-1, 3).mean(axis=1)
    a = max(float(intensity[cand].max()), 1e-6)
    t = 1.0 - omega * dark / a
    dehazed = (image - a) / np.maximum(t, t0)[..., None] + a
    return np.clip(dehazed, 0.0, 1.0)


@dataclass
class ViewMetrics:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    mode: str
    per_view: List[ViewMetrics]
    psnr_mean: float
    ssim_mean: float
    beta_hat: Optional[float] = None
    a_hat: Optional[float] = None
    rel_beta: Optional[float] = None
    rel_a: Optional[float] = None
    avg_rel_err: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_view"] = [asdict(v) for v in self.per_view]
        return d


def _train_for_mode(dataset: Dataset, mode: str, config: TrainConfig,
                    out_dir=None) -> TrainResult:
    if mode == "naive":
        return train(dataset, naive_config(config), out_dir=out_dir)
    if mode == "dcp":
        override = {i: dcp_dehaze(dataset.hazy_quantized(i).values)
                    for i in dataset.train_indices}
        return train(dataset, naive_config(config), out_dir=out_dir,
                     image_override=override)
    if mode == "ours":
        return train(dataset, config, out_dir=out_dir)
    raise ValueError(f"unknown baseline mode {mode!r}")


def evaluate_checkpoint(dataset: Dataset, checkpoint: Checkpoint,
                        mode: str) -> EvalReport:
    """Render the held-out views and score them against the GT clean images."""
    if not dataset.has_ground_truth():
        raise ValueError("dataset lacks evaluation ground truth")
    test_idx = dataset.test_indices
    if not test_idx:
        raise ValueError("dataset has no held-out views")
    per_view = []
    for i in test_idx:
        rendered, _ = render_novel_view(checkpoint, dataset.camera(i))
        clean = dataset.gt_clean(i)
        per_view.append(ViewMetrics(name=f"view_{i:03d}",
                                    psnr=psnr(rendered, clean),
                                    ssim=ssim(rendered, clean)))
    report = EvalReport(
        mode=mode,
        per_view=per_view,
        psnr_mean=float(np.mean([v.psnr for v in per_view])),
        ssim_mean=float(np.mean([v.ssim for v in per_view])),
    )
    if mode == "ours":
        beta_gt, a_gt = dataset.gt_params()
        report.beta_hat = float(checkpoint.params.beta.mean())
        report.a_hat = float(checkpoint.params.a.mean())
        rb, ra, avg = param_error(report.beta_hat, report.a_hat, beta_gt, a_gt)
        report.rel_beta, report.rel_a, report.avg_rel_err = rb, ra, avg
    return report


def write_report(report: EvalReport, out_dir, stem: str = "eval_report"):
    """Emit the report as JSON plus a per-view CSV and a summary figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{stem}.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    with open(out_dir / f"{stem}.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["view", "psnr", "ssim"])
        for v in report.per_view:
            writer.writerow([v.name, f"{v.psnr:.4f}", f"{v.ssim:.6f}"])
        writer.writerow(["mean", f"{report.psnr_mean:.4f}",
                         f"{report.ssim_mean:.6f}"])
    from .figures import save_eval_figure
    save_eval_figure(report, out_dir / f"{stem}.png")


def run_eval(dataset: Dataset, checkpoint: Optional[Checkpoint] = None,
             baseline_mode: str = "ours", config: Optional[TrainConfig] = None,
             out_dir=None) -> EvalReport:
    """Evaluate one mode on the held-out views.

    `ours` uses the given checkpoint (or trains the full pipeline when only a
    config is given); `naive` and `dcp` always train their baseline first.
    """
    if not dataset.has_ground_truth():
        raise ValueError("dataset lacks evaluation ground truth")
    if checkpoint is None:
        if config is None:
            raise ValueError("run_eval needs a checkpoint or a train config")
        result = _train_for_mode(dataset, baseline_mode, config)
        checkpoint = result.checkpoint
    report = evaluate_checkpoint(dataset, checkpoint, baseline_mode)
    if out_dir is not None:
        write_report(report, out_dir, stem=f"eval_{baseline_mode}")
    return report


def hazy_input_psnr(dataset: Dataset) -> float:
    """Mean PSNR of the held-out hazy inputs against their GT clean images."""
    vals = [psnr(dataset.hazy_quantized(i).values, dataset.gt_clean(i))
            for i in dataset.test_indices]
    return float(np.mean(vals))


def run_beta_sweep(betas, workdir, config: TrainConfig, a_gt: float = 0.8,
                   n_train: int = 10, n_test: int = 3, resolution: int = 48,
                   levels: int = 256, seed: int = 0) -> dict:
    """Haze-concentration robustness: one fixture dataset per beta, trained
    and evaluated under both `ours` and `naive`. Emits curves as JSON/CSV/PNG.
    """
    from .fileio import load_dataset
    from .scenes import build_fixture_dataset

    workdir = Path(workdir)
    curves = {"beta": [], "ours_psnr": [], "naive_psnr": []}
    for beta in betas:
        ds_dir = workdir / f"dataset_beta_{beta:.3f}"
        build_fixture_dataset(ds_dir, beta_gt=beta, a_gt=a_gt,
                              n_train=n_train, n_test=n_test,
                              resolution=resolution, levels=levels, seed=seed)
        dataset = load_dataset(ds_dir)
        reports = {}
        for mode in ("ours", "naive"):
            result = _train_for_mode(dataset, mode, config)
            reports[mode] = evaluate_checkpoint(dataset, result.checkpoint, mode)
            write_report(reports[mode], workdir / f"beta_{beta:.3f}",
                         stem=f"eval_{mode}")
        curves["beta"].append(float(beta))
        curves["ours_psnr"].append(reports["ours"].psnr_mean)
        curves["naive_psnr"].append(reports["naive"].psnr_mean)

    with open(workdir / "sweep.json", "w") as f:
        json.dump(curves, f, indent=2)
    with open(workdir / "sweep.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["beta", "ours_psnr", "naive_psnr"])
        for i in range(len(curves["beta"])):
            writer.writerow([curves["beta"][i], f"{curves['ours_psnr'][i]:.4f}",
                             f"{curves['naive_psnr'][i]:.4f}"])
    from .figures import save_sweep_figure
    save_sweep_figure(curves, workdir / "sweep.png")
    return curves


ABLATION_NAMES = ("full", "no_smrc", "no_cons", "no_cd", "no_tv")


def ablation_config(config: TrainConfig, name: str) -> TrainConfig:
    if name == "full":
        return config
    if name == "no_smrc":
        return replace(config, rec_kind="mse")
    if name == "no_cons":
        return replace(config, weights=replace(config.weights, lambda1=0.0))
    if name == "no_cd":
        return replace(config, weights=replace(config.weights, lambda2=0.0))
    if name == "no_tv":
        return replace(config, weights=replace(config.weights, lambda3=0.0))
    raise ValueError(f"unknown ablation {name!r}")


def run_ablation(dataset: Dataset, config: TrainConfig, workdir,
                 names=ABLATION_NAMES) -> dict:
    """Disable each loss term in turn, retrain, and report. Returns a dict
    name -> {report fields...} and writes a combined JSON/CSV."""
    workdir = Path(workdir)
    results = {}
    for name in names:
        cfg = ablation_config(config, name)
        result = train(dataset, cfg)
        report = evaluate_checkpoint(dataset, result.checkpoint, "ours")
        report.mode = name
        write_report(report, workdir / name, stem="eval")
        results[name] = report.to_dict()
    with open(workdir / "ablation.json", "w") as f:
        json.dump(results, f, indent=2)
    with open(workdir / "ablation.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["ablation", "psnr_mean", "ssim_mean", "beta_hat", "a_hat"])
        for name, rep in results.items():
            writer.writerow([name, f"{rep['psnr_mean']:.4f}",
                             f"{rep['ssim_mean']:.6f}",
                             rep["beta_hat"], rep["a_hat"]])
    return results
