"""Finite-difference verification of every analytic gradient in the package.

Central differences in float64 are the independent oracle; each component is
checked on small random instances at its declared tolerance.
"""

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .field import (GradBuffer, Ray, SubgridSpec, VoxelGrid, render_ray,
                    render_ray_backward, render_subgrid,
                    render_subgrid_backward)
from .haze import AtmosphereParams, apply_asm, asm_backward, quantize
from .losses import (LossWeights, cd_loss, cons_loss, local_contrast, mse_loss,
                     rec_loss, smrc_penalty, total_loss, tv_loss)
from .scenes import look_at_camera
from .trainer import TrainConfig, ViewData


@dataclass
class CheckRow:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def rel_err(analytic, numeric, floor: float = 1e-8) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                 h: float = 1e-6, indices=None) -> np.ndarray:
    """Central finite differences of a scalar function, optionally restricted
    to a subset of flat indices (others return 0)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros(x.size)
    flat_indices = range(x.size) if indices is None else indices
    for i in flat_indices:
        xp = x.copy().reshape(-1)
        xp[i] += h
        fp = f(xp.reshape(x.shape))
        xm = x.copy().reshape(-1)
        xm[i] -= h
        fm = f(xm.reshape(x.shape))
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(x.shape)


def _random_grid(rng, res=(8, 8, 8)) -> VoxelGrid:
    grid = VoxelGrid.create(res, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    grid.density_raw[:] = rng.normal(0.0, 1.0, size=res)
    grid.color_raw[:] = rng.normal(0.0, 1.0, size=res + (3,))
    return grid


def check_render_gradients(rng, h: float = 1e-4) -> CheckRow:
    """Volume rendering adjoint vs finite differences on touched voxels."""
    grid = _random_grid(rng)
    worst = 0.0
    for _ in range(3):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        origin = -2.0 * d + 0.1 * rng.normal(size=3)
        ray = Ray(origin=origin, direction=d, near=0.5, far=4.5)
        dc = rng.normal(size=3)
        dd = float(rng.normal())
        do = float(rng.normal())
        bg = rng.random(3)

        out, tape = render_ray(grid, ray, n_samples=24, background=bg)
        grads = GradBuffer.zeros_like(grid, 1)
        render_ray_backward(grid, ray, tape, dc, dd, do, grads)

        touched = np.unique(tape.corner_idx)

        def loss_of(density_flat):
            g2 = VoxelGrid(grid.resolution, grid.bbox_min, grid.bbox_max,
                           density_flat.reshape(grid.resolution), grid.color_raw)
            o, _ = render_ray(g2, ray, n_samples=24, background=bg)
            return float(dc @ o.color + dd * o.depth + do * o.opacity)

        num = numeric_grad(loss_of, grid.density_raw, h=h, indices=touched)
        worst = max(worst, rel_err(grads.d_density_raw.reshape(-1)[touched],
                                   num.reshape(-1)[touched]))

        def loss_of_color(color_flat):
            g2 = VoxelGrid(grid.resolution, grid.bbox_min, grid.bbox_max,
                           grid.density_raw, color_flat.reshape(grid.color_raw.shape))
            o, _ = render_ray(g2, ray, n_samples=24, background=bg)
            return float(dc @ o.color + dd * o.depth + do * o.opacity)

        touched_col = np.unique(np.concatenate(
            [3 * touched, 3 * touched + 1, 3 * touched + 2]))
        num_c = numeric_grad(loss_of_color, grid.color_raw, h=h,
                             indices=touched_col)
        worst = max(worst, rel_err(grads.d_color_raw.reshape(-1)[touched_col],
                                   num_c.reshape(-1)[touched_col]))
    return CheckRow("volume rendering (color/depth/opacity)", worst, 1e-5)


def check_asm(rng, h: float = 1e-6) -> CheckRow:
    worst = 0.0
    for _ in range(4):
        j = rng.random((4, 4, 3))
        depth = 0.5 + 4.0 * rng.random((4, 4))
        beta = 0.05 + 0.4 * rng.random()
        a = 0.2 + rng.random()
        d_i = rng.normal(size=(4, 4, 3))
        d_j, d_depth, d_beta, d_a = asm_backward(j, depth, beta, a, d_i)

        def f_j(jv):
            return float(np.sum(apply_asm(jv, depth, beta, a) * d_i))

        def f_d(dv):
            return float(np.sum(apply_asm(j, dv, beta, a) * d_i))

        worst = max(worst, rel_err(d_j, numeric_grad(f_j, j, h=h)))
        worst = max(worst, rel_err(d_depth, numeric_grad(f_d, depth, h=h)))
        fb = lambda bv: float(np.sum(apply_asm(j, depth, float(bv), a) * d_i))
        fa = lambda av: float(np.sum(apply_asm(j, depth, beta, float(av)) * d_i))
        worst = max(worst, rel_err(d_beta, numeric_grad(fb, np.array(beta), h=h)))
        worst = max(worst, rel_err(d_a, numeric_grad(fa, np.array(a), h=h)))
    return CheckRow("scattering model adjoints", worst, 1e-5)


def check_smrc(rng, h: float = 1e-7) -> CheckRow:
    """SMRC derivative away from the piecewise boundaries (the finite
    difference is invalid within h of a branch switch)."""
    worst = 0.0
    lam = 0.1
    for _ in range(200):
        q = rng.random()
        half = 1.0 / 510.0
        lo, hi = q - half, q + half
        u = q + rng.normal(0.0, 0.05)
        if min(abs(u - lo), abs(u - hi)) < 20 * h:
            continue
        _, d_u = smrc_penalty(u, q, lo, hi, lam)
        f = lambda uv: smrc_penalty(float(uv), q, lo, hi, lam)[0]
        num = numeric_grad(f, np.array(u), h=h)
        worst = max(worst, rel_err(d_u, float(num)))
    return CheckRow("soft-margin reconstruction penalty", worst, 1e-4)


def check_cons(rng, h: float = 1e-6) -> CheckRow:
    worst = 0.0
    for _ in range(4):
        beta = 0.05 + rng.random(5)
        a = 0.2 + rng.random(5)
        _, d_b, d_a = cons_loss(beta, a)
        fb = lambda bv: cons_loss(bv, a)[0]
        fa = lambda av: cons_loss(beta, av)[0]
        worst = max(worst, rel_err(d_b, numeric_grad(fb, beta, h=h)))
        worst = max(worst, rel_err(d_a, numeric_grad(fa, a, h=h)))
    return CheckRow("atmosphere consistency loss", worst, 1e-4)


def check_cd(rng, h: float = 1e-6) -> CheckRow:
    worst = 0.0
    for _ in range(3):
        hazy = rng.random((8, 8, 3))
        est = rng.random((8, 8, 3))
        _, d_est = cd_loss(hazy, est, pool_size=4)
        f = lambda ev: cd_loss(hazy, ev, pool_size=4)[0]
        worst = max(worst, rel_err(d_est, numeric_grad(f, est, h=h)))
    return CheckRow("contrast discriminative loss", worst, 1e-4)


def check_local_contrast_padding(rng, h: float = 1e-6) -> CheckRow:
    """Replication-padded pooling path (size not divisible by the kernel)."""
    worst = 0.0
    for _ in range(2):
        img = rng.random((7, 9, 3))
        _, d_img = local_contrast(img, pool_size=4)
        f = lambda iv: local_contrast(iv, pool_size=4)[0]
        worst = max(worst, rel_err(d_img, numeric_grad(f, img, h=h)))
    return CheckRow("local contrast (padded pooling)", worst, 1e-4)


def check_tv(rng, h: float = 1e-6) -> CheckRow:
    worst = 0.0
    for _ in range(3):
        img = rng.random((8, 8, 3))
        _, d_img = tv_loss(img, tv_eps=1e-4)
        f = lambda iv: tv_loss(iv, tv_eps=1e-4)[0]
        worst = max(worst, rel_err(d_img, numeric_grad(f, img, h=h)))
    return CheckRow("total variation loss", worst, 1e-4)


def check_mse(rng, h: float = 1e-6) -> CheckRow:
    obs = rng.random((6, 6, 3))
    pred = rng.random((6, 6, 3))
    _, d_pred = mse_loss(obs, pred)
    f = lambda pv: mse_loss(obs, pv)[0]
    num = numeric_grad(f, pred, h=h)
    return CheckRow("mse loss", rel_err(d_pred, num), 1e-4)


def _end_to_end_loss(grid: VoxelGrid, params: AtmosphereParams, views,
                     specs, config: TrainConfig, background,
                     grads: GradBuffer = None) -> float:
    """Deterministic (midpoint-sampled, fixed subgrids) batch loss; fills
    `grads` with the full analytic backward when given."""
    w = config.weights
    n_views = len(views)
    rec_sum = cd_sum = tv_sum = 0.0
    beta_all = params.beta
    a_all = params.a
    d_beta_act = np.zeros(params.n_images)
    d_a_act = np.zeros(params.n_images)
    for view, spec in zip(views, specs):
        out, tape = render_subgrid(grid, view.camera, spec, config.n_samples,
                                   rng=None, background=background)
        sel = np.ix_(spec.ys, spec.xs)
        beta_i = float(beta_all[view.slot])
        a_i = float(a_all[view.slot])
        i_hat = apply_asm(out.color, out.depth, beta_i, a_i)
        rec_v, d_i = rec_loss(i_hat, view.quantized.values[sel],
                              view.quantized.lo[sel], view.quantized.hi[sel],
                              w.lambda_smrc)
        cd_v, d_j_cd = cd_loss(view.quantized.values[sel], out.color,
                               w.pool_size)
        tv_v, d_j_tv = tv_loss(out.color, w.tv_eps)
        rec_sum += rec_v
        cd_sum += cd_v
        tv_sum += tv_v
        if grads is not None:
            d_i = d_i / n_views
            d_j, d_depth, d_beta, d_a = asm_backward(out.color, out.depth,
                                                     beta_i, a_i, d_i)
            d_beta_act[view.slot] += d_beta
            d_a_act[view.slot] += d_a
            d_j = d_j + (w.lambda2 * d_j_cd + w.lambda3 * d_j_tv) / n_views
            render_subgrid_backward(grid, tape, d_j, d_depth,
                                    np.zeros(d_depth.shape), grads)
    cons_v, d_cb, d_ca = cons_loss(beta_all, a_all)
    if grads is not None:
        d_beta_act += w.lambda1 * d_cb
        d_a_act += w.lambda1 * d_ca
        db_raw, da_raw = params.chain_raw(d_beta_act, d_a_act)
        grads.d_beta_raw += db_raw
        grads.d_a_raw += da_raw
    return total_loss(rec_sum / n_views, cons_v, cd_sum / n_views,
                      tv_sum / n_views, w)


def check_end_to_end(rng, h: float = 1e-6, n_probe: int = 20) -> CheckRow:
    """Full two-branch loss vs finite differences w.r.t. voxel raws and the
    atmosphere raw parameters (8^3 grid, two 16x16 views)."""
    config = TrainConfig(n_samples=16, grid_resolution=(8, 8, 8),
                         grid_bbox=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
                         weights=LossWeights())
    grid = _random_grid(rng)
    params = AtmosphereParams(beta_raw=rng.normal(-2.5, 0.3, size=2),
                              a_raw=rng.normal(0.0, 0.3, size=2))
    background = rng.random(3)

    views = []
    for s in range(2):
        az = 2.0 * np.pi * s / 2 + 0.3
        eye = 2.5 * np.array([np.cos(az), np.sin(az), 0.45])
        cam = look_at_camera(eye, (0, 0, 0), 16, 16, focal=20.0,
                             near=0.8, far=4.5)
        target = quantize(rng.random((16, 16, 3)))
        views.append(ViewData(index=s, slot=s, camera=cam, quantized=target))
    specs = [SubgridSpec.full(16, 16)] * 2

    grads = GradBuffer.zeros_like(grid, 2)
    _end_to_end_loss(grid, params, views, specs, config, background, grads)

    worst = 0.0
    touched = np.flatnonzero(np.abs(grads.d_density_raw.reshape(-1)) > 1e-12)
    probe = rng.choice(touched, size=min(n_probe, touched.size), replace=False)

    def f_density(flat):
        g2 = VoxelGrid(grid.resolution, grid.bbox_min, grid.bbox_max,
                       flat.reshape(grid.resolution), grid.color_raw)
        return _end_to_end_loss(g2, params, views, specs, config, background)

    num = numeric_grad(f_density, grid.density_raw, h=h, indices=probe)
    worst = max(worst, rel_err(grads.d_density_raw.reshape(-1)[probe],
                               num.reshape(-1)[probe]))

    touched_c = np.flatnonzero(np.abs(grads.d_color_raw.reshape(-1)) > 1e-12)
    probe_c = rng.choice(touched_c, size=min(n_probe, touched_c.size),
                         replace=False)

    def f_color(flat):
        g2 = VoxelGrid(grid.resolution, grid.bbox_min, grid.bbox_max,
                       grid.density_raw, flat.reshape(grid.color_raw.shape))
        return _end_to_end_loss(g2, params, views, specs, config, background)

    num_c = numeric_grad(f_color, grid.color_raw, h=h, indices=probe_c)
    worst = max(worst, rel_err(grads.d_color_raw.reshape(-1)[probe_c],
                               num_c.reshape(-1)[probe_c]))

    def f_beta(raw):
        p2 = AtmosphereParams(beta_raw=raw, a_raw=params.a_raw)
        return _end_to_end_loss(grid, p2, views, specs, config, background)

    def f_a(raw):
        p2 = AtmosphereParams(beta_raw=params.beta_raw, a_raw=raw)
        return _end_to_end_loss(grid, p2, views, specs, config, background)

    worst = max(worst, rel_err(grads.d_beta_raw,
                               numeric_grad(f_beta, params.beta_raw, h=h)))
    worst = max(worst, rel_err(grads.d_a_raw,
                               numeric_grad(f_a, params.a_raw, h=h)))
    return CheckRow("end-to-end loss (voxels, beta_raw, a_raw)", worst, 1e-3)


def run_gradcheck(seed: int = 0) -> List[CheckRow]:
    rng = np.random.default_rng(seed)
    return [
        check_render_gradients(rng),
        check_asm(rng),
        check_smrc(rng),
        check_cons(rng),
        check_cd(rng),
        check_local_contrast_padding(rng),
        check_tv(rng),
        check_mse(rng),
        check_end_to_end(rng),
    ]
