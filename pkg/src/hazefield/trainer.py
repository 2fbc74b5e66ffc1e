"""Joint two-branch training loop.

Each step renders randomly offset pixel subgrids of a few views from the
current field (clean branch), re-hazes them through the scattering model with
the per-image atmosphere parameters (reconstruction branch), evaluates the
loss stack against the quantized hazy targets, and backpropagates analytically
into both the grid and the atmosphere raws. Inference uses only the clean
branch.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .field import (Camera, GradBuffer, SubgridSpec, VoxelGrid, render_image,
                    render_subgrid, render_subgrid_backward)
from .fileio import (CorruptArtifactError, digest_to_floats, floats_to_digest,
                     load_arrays, pack_rng_state, save_arrays,
                     unpack_rng_state)
from .haze import AtmosphereParams, QuantizedImage, apply_asm, asm_backward
from .losses import (LossWeights, cd_loss, cons_loss, mse_loss, rec_loss,
                     total_loss, tv_loss)
from .optim import AdamState, LrSchedule, adam_step, lr_at


@dataclass
class TrainConfig:
    total_iterations: int = 3000
    n_samples: int = 128
    stride: int = 4
    views_per_step: int = 4
    checkpoint_every: int = 1000
    log_every: int = 100
    grid_resolution: tuple = (64, 64, 64)
    grid_bbox: tuple = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))
    seed: int = 0
    asm_enabled: bool = True
    rec_kind: str = "smrc"      # "smrc" | "mse"
    cons_scope: str = "batch"   # "batch" | "dataset"
    beta_init: float = 0.05
    a_init: float = 0.75
    density_init: float = -2.0
    color_init: float = 0.0
    grad_clip: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: LrSchedule = field(default_factory=LrSchedule)

    def validate(self):
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.views_per_step < 1:
            raise ValueError("views_per_step must be >= 1")
        if self.rec_kind not in ("smrc", "mse"):
            raise ValueError("rec_kind must be 'smrc' or 'mse'")
        if self.cons_scope not in ("batch", "dataset"):
            raise ValueError("cons_scope must be 'batch' or 'dataset'")
        self.weights.validate()
        self.schedule.validate()


@dataclass
class ViewData:
    """One training view: its camera, quantized hazy target and param slot."""
    index: int       # index into the dataset
    slot: int        # index into AtmosphereParams
    camera: Camera
    quantized: QuantizedImage


@dataclass
class StepReport:
    rec: float
    cons: float
    cd: float
    tv: float
    total: float
    lr_grid: float
    lr_atmo: float
    beta_mean: float
    a_mean: float


@dataclass
class Checkpoint:
    grid: VoxelGrid
    params: AtmosphereParams
    adam_grid: AdamState
    adam_atmo: AdamState
    iteration: int
    n_samples: int
    background: np.ndarray
    config_digest: bytes
    rng_state: np.ndarray  # packed PCG64 state


def sample_subgrid(height: int, width: int, stride: int,
                   rng: np.random.Generator) -> SubgridSpec:
    """Regular lattice with a uniform random offset in [0, stride)^2."""
    if stride < 1 or stride > min(height, width):
        raise ValueError("stride out of range")
    off = rng.integers(0, stride, size=2)
    return SubgridSpec.strided(width, height, stride,
                               offset=(int(off[0]), int(off[1])))


def train_step(grid: VoxelGrid, params: AtmosphereParams, batch: List[ViewData],
               config: TrainConfig, rng: np.random.Generator,
               adam_grid: AdamState, adam_atmo: AdamState,
               lr_grid: float, lr_atmo: float, grads: GradBuffer,
               background: np.ndarray,
               image_override: Optional[Dict[int, np.ndarray]] = None) -> StepReport:
    """One optimization step over a batch of views; updates params in place."""
    if not batch:
        raise ValueError("batch must be nonempty")
    w = config.weights
    n_views = len(batch)
    grads.reset()
    d_beta_act = np.zeros(params.n_images)
    d_a_act = np.zeros(params.n_images)
    beta_all = params.beta
    a_all = params.a

    rec_sum = cd_sum = tv_sum = 0.0
    for view in batch:
        spec = sample_subgrid(view.camera.height, view.camera.width,
                              config.stride, rng)
        out, tape = render_subgrid(grid, view.camera, spec, config.n_samples,
                                   rng=rng, background=background)
        j_est = out.color
        sel = np.ix_(spec.ys, spec.xs)
        hazy_vals = view.quantized.values[sel]
        if image_override is not None and view.index in image_override:
            target_vals = image_override[view.index][sel]
        else:
            target_vals = hazy_vals

        if config.asm_enabled:
            beta_i = float(beta_all[view.slot])
            a_i = float(a_all[view.slot])
            i_hat = apply_asm(j_est, out.depth, beta_i, a_i)
        else:
            i_hat = j_est

        if config.rec_kind == "smrc":
            rec_v, d_i = rec_loss(i_hat, target_vals,
                                  view.quantized.lo[sel],
                                  view.quantized.hi[sel], w.lambda_smrc)
        else:
            rec_v, d_i = mse_loss(target_vals, i_hat)
        rec_sum += rec_v
        d_i = d_i / n_views

        if config.asm_enabled:
            d_j, d_depth, d_beta, d_a = asm_backward(j_est, out.depth,
                                                     beta_i, a_i, d_i)
            d_beta_act[view.slot] += d_beta
            d_a_act[view.slot] += d_a
        else:
            d_j = d_i
            d_depth = np.zeros(j_est.shape[:2])

        cd_v, d_j_cd = cd_loss(hazy_vals, j_est, w.pool_size, hinge=w.cd_hinge)
        tv_v, d_j_tv = tv_loss(j_est, w.tv_eps)
        cd_sum += cd_v
        tv_sum += tv_v
        d_j = d_j + (w.lambda2 * d_j_cd + w.lambda3 * d_j_tv) / n_views

        render_subgrid_backward(grid, tape, d_j, d_depth,
                                np.zeros(d_depth.shape), grads)

    cons_v = 0.0
    if config.asm_enabled and w.lambda1 > 0.0:
        if config.cons_scope == "batch":
            slots = np.array([v.slot for v in batch])
            cons_v, d_cb, d_ca = cons_loss(beta_all[slots], a_all[slots])
            np.add.at(d_beta_act, slots, w.lambda1 * d_cb)
            np.add.at(d_a_act, slots, w.lambda1 * d_ca)
        else:
            cons_v, d_cb, d_ca = cons_loss(beta_all, a_all)
            d_beta_act += w.lambda1 * d_cb
            d_a_act += w.lambda1 * d_ca

    rec_mean = rec_sum / n_views
    cd_mean = cd_sum / n_views
    tv_mean = tv_sum / n_views
    total = total_loss(rec_mean, cons_v, cd_mean, tv_mean, w)

    db_raw, da_raw = params.chain_raw(d_beta_act, d_a_act)
    grads.d_beta_raw += db_raw
    grads.d_a_raw += da_raw

    grid_grads = [grads.d_density_raw, grads.d_color_raw]
    atmo_grads = [grads.d_beta_raw, grads.d_a_raw]
    if config.grad_clip > 0.0:
        for group in (grid_grads, atmo_grads):
            norm = np.sqrt(sum(float(np.sum(g ** 2)) for g in group))
            if norm > config.grad_clip:
                scale = config.grad_clip / norm
                for g in group:
                    g *= scale

    adam_step([grid.density_raw, grid.color_raw], grid_grads, adam_grid, lr_grid)
    if config.asm_enabled:
        adam_step([params.beta_raw, params.a_raw], atmo_grads, adam_atmo, lr_atmo)

    return StepReport(rec=rec_mean, cons=cons_v, cd=cd_mean, tv=tv_mean,
                      total=total, lr_grid=lr_grid, lr_atmo=lr_atmo,
                      beta_mean=float(beta_all.mean()), a_mean=float(a_all.mean()))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: List[dict]
    checkpoint_path: Optional[Path] = None


def _checkpoint_arrays(ck: Checkpoint) -> List[np.ndarray]:
    nx, ny, nz = ck.grid.resolution
    meta = np.array([ck.iteration, nx, ny, nz, ck.params.n_images,
                     ck.n_samples, ck.adam_grid.step_count,
                     ck.adam_atmo.step_count], dtype=np.float64)
    return [
        meta,
        np.concatenate([ck.grid.bbox_min, ck.grid.bbox_max]),
        np.asarray(ck.background, dtype=np.float64),
        ck.grid.density_raw.reshape(-1),
        ck.grid.color_raw.reshape(-1),
        ck.params.beta_raw,
        ck.params.a_raw,
        ck.adam_grid.m[0].reshape(-1), ck.adam_grid.v[0].reshape(-1),
        ck.adam_grid.m[1].reshape(-1), ck.adam_grid.v[1].reshape(-1),
        ck.adam_atmo.m[0], ck.adam_atmo.v[0],
        ck.adam_atmo.m[1], ck.adam_atmo.v[1],
        np.array([ck.adam_grid.beta1, ck.adam_grid.beta2, ck.adam_grid.eps]),
        ck.rng_state,
        digest_to_floats(ck.config_digest),
    ]


def save_checkpoint(path, ck: Checkpoint):
    save_arrays(path, _checkpoint_arrays(ck))


def load_checkpoint(path) -> Checkpoint:
    arrays = load_arrays(path)
    if len(arrays) != 18:
        raise CorruptArtifactError("unexpected checkpoint layout")
    meta = arrays[0]
    iteration, nx, ny, nz, n_images, n_samples, step_g, step_a = (
        int(v) for v in meta)
    res = (nx, ny, nz)
    bbox = arrays[1]
    grid = VoxelGrid(resolution=res, bbox_min=bbox[:3], bbox_max=bbox[3:],
                     density_raw=arrays[3].reshape(res),
                     color_raw=arrays[4].reshape(res + (3,)))
    grid.validate()
    if arrays[5].size != n_images or arrays[6].size != n_images:
        raise CorruptArtifactError("atmosphere parameter size mismatch")
    params = AtmosphereParams(beta_raw=arrays[5], a_raw=arrays[6])
    b1, b2, eps = arrays[15]
    adam_grid = AdamState(m=[arrays[7].reshape(res), arrays[9].reshape(res + (3,))],
                          v=[arrays[8].reshape(res), arrays[10].reshape(res + (3,))],
                          step_count=step_g, beta1=b1, beta2=b2, eps=eps)
    adam_atmo = AdamState(m=[arrays[11], arrays[13]],
                          v=[arrays[12], arrays[14]],
                          step_count=step_a, beta1=b1, beta2=b2, eps=eps)
    return Checkpoint(grid=grid, params=params, adam_grid=adam_grid,
                      adam_atmo=adam_atmo, iteration=iteration,
                      n_samples=n_samples, background=arrays[2],
                      config_digest=floats_to_digest(arrays[17]),
                      rng_state=arrays[16])


def train(dataset, config: TrainConfig, out_dir=None,
          resume_from=None, image_override: Optional[Dict[int, np.ndarray]] = None,
          config_digest: bytes = b"\x00" * 32,
          progress=None) -> TrainResult:
    """Run the optimization over the dataset's training split.

    Writes newline-delimited JSON metrics and periodic checkpoints when
    out_dir is given. Resuming from a checkpoint continues bit-identically to
    an uninterrupted run with the same config.
    """
    config.validate()
    train_idx = dataset.train_indices
    views = [ViewData(index=i, slot=s, camera=dataset.camera(i),
                      quantized=dataset.hazy_quantized(i))
             for s, i in enumerate(train_idx)]
    background = dataset.background

    grid = VoxelGrid.create(config.grid_resolution, config.grid_bbox[0],
                            config.grid_bbox[1], config.density_init,
                            config.color_init)
    params = AtmosphereParams.create(len(views), config.beta_init, config.a_init)
    adam_grid = AdamState.for_params([grid.density_raw, grid.color_raw])
    adam_atmo = AdamState.for_params([params.beta_raw, params.a_raw])
    rng = np.random.default_rng(config.seed)
    start_iter = 0

    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        if ck.config_digest != config_digest:
            raise ValueError("checkpoint was written with a different config")
        grid, params = ck.grid, ck.params
        adam_grid, adam_atmo = ck.adam_grid, ck.adam_atmo
        rng = unpack_rng_state(ck.rng_state)
        start_iter = ck.iteration

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_f = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_f = open(out_path / "metrics.ndjson",
                         "a" if resume_from else "w")

    grads = GradBuffer.zeros_like(grid, params.n_images)
    metrics: List[dict] = []
    total = config.total_iterations

    def snapshot(iteration):
        return Checkpoint(grid=grid, params=params, adam_grid=adam_grid,
                          adam_atmo=adam_atmo, iteration=iteration,
                          n_samples=config.n_samples, background=background,
                          config_digest=config_digest,
                          rng_state=pack_rng_state(rng))

    try:
        for it in range(start_iter, total):
            lr_g, lr_a = lr_at(config.schedule, it, total)
            pick = rng.choice(len(views),
                              size=min(config.views_per_step, len(views)),
                              replace=False)
            batch = [views[p] for p in pick]
            report = train_step(grid, params, batch, config, rng,
                                adam_grid, adam_atmo, lr_g, lr_a, grads,
                                background, image_override=image_override)
            if it % config.log_every == 0 or it == total - 1:
                record = {"iter": it, "rec": report.rec, "cons": report.cons,
                          "cd": report.cd, "tv": report.tv,
                          "total": report.total,
                          "beta_mean": report.beta_mean,
                          "a_mean": report.a_mean,
                          "beta_std": float(params.beta.std()),
                          "lr_grid": report.lr_grid, "lr_atmo": report.lr_atmo}
                metrics.append(record)
                if metrics_f is not None:
                    metrics_f.write(json.dumps(record) + "\n")
                    metrics_f.flush()
                if progress is not None:
                    progress(record)
            if (config.checkpoint_every > 0 and out_path is not None
                    and (it + 1) % config.checkpoint_every == 0
                    and (it + 1) < total):
                save_checkpoint(out_path / f"checkpoint_{it + 1:06d}.hznf",
                                snapshot(it + 1))
    except RuntimeError:
        if out_path is not None:
            save_checkpoint(out_path / "checkpoint_diverged.hznf", snapshot(it))
        if metrics_f is not None:
            metrics_f.close()
        raise
    if metrics_f is not None:
        metrics_f.close()

    final = snapshot(total)
    ck_path = None
    if out_path is not None:
        ck_path = out_path / "checkpoint_final.hznf"
        save_checkpoint(ck_path, final)
    return TrainResult(checkpoint=final, metrics=metrics, checkpoint_path=ck_path)


def render_novel_view(checkpoint: Checkpoint, camera: Camera):
    """Deterministic full-image render of the clean branch, clamped to [0,1].

    Inference never evaluates the scattering model.
    """
    return render_image(checkpoint.grid, camera, checkpoint.n_samples,
                        background=checkpoint.background, clamp=True)


def naive_config(config: TrainConfig) -> TrainConfig:
    """Photometric-only variant: no scattering model, plain MSE, no aux losses."""
    w = replace(config.weights, lambda1=0.0, lambda2=0.0, lambda3=0.0)
    return replace(config, asm_enabled=False, rec_kind="mse", weights=w)
