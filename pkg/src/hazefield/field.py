"""Explicit voxel-grid radiance field with differentiable volume rendering.

The scene is a dense grid of raw (pre-activation) density and color values
over an axis-aligned box. Raw values are trilinearly interpolated at sample
positions and then activated: softplus for density, sigmoid for color.
Rendering composites stratified samples along camera rays and keeps a tape
of the forward state so the exact adjoint can be replayed without autodiff.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .numerics import sigmoid, softplus

DEFAULT_BACKGROUND = np.ones(3)


@dataclass
class VoxelGrid:
    """Raw density/color values on grid nodes spanning [bbox_min, bbox_max]."""

    resolution: Tuple[int, int, int]
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    density_raw: np.ndarray  # (nx, ny, nz)
    color_raw: np.ndarray    # (nx, ny, nz, 3)

    @classmethod
    def create(cls, resolution, bbox_min, bbox_max,
               density_init: float = -2.0, color_init: float = 0.0):
        """Allocate a grid with near-transparent density and mid-gray color."""
        resolution = tuple(int(r) for r in resolution)
        bbox_min = np.asarray(bbox_min, dtype=np.float64)
        bbox_max = np.asarray(bbox_max, dtype=np.float64)
        grid = cls(
            resolution=resolution,
            bbox_min=bbox_min,
            bbox_max=bbox_max,
            density_raw=np.full(resolution, density_init, dtype=np.float64),
            color_raw=np.full(resolution + (3,), color_init, dtype=np.float64),
        )
        grid.validate()
        return grid

    def validate(self):
        if len(self.resolution) != 3 or any(r < 2 for r in self.resolution):
            raise ValueError("resolution must be 3 integers, each >= 2")
        if not np.all(self.bbox_min < self.bbox_max):
            raise ValueError("bbox_min must be < bbox_max componentwise")
        if not (np.all(np.isfinite(self.density_raw))
                and np.all(np.isfinite(self.color_raw))):
            raise ValueError("grid values must be finite")
        if self.density_raw.shape != self.resolution:
            raise ValueError("density_raw shape mismatch")
        if self.color_raw.shape != self.resolution + (3,):
            raise ValueError("color_raw shape mismatch")

    @property
    def node_step(self) -> np.ndarray:
        res = np.asarray(self.resolution, dtype=np.float64)
        return (self.bbox_max - self.bbox_min) / (res - 1.0)


@dataclass
class Camera:
    """Pinhole camera with a rigid cam-to-world pose (camera looks along -z)."""

    width: int
    height: int
    focal: float
    principal_point: np.ndarray  # (cx, cy) in pixels
    cam_to_world: np.ndarray     # (3, 4), rotation block orthonormal, det +1
    near: float
    far: float

    def __post_init__(self):
        self.principal_point = np.asarray(self.principal_point, dtype=np.float64)
        self.cam_to_world = np.asarray(self.cam_to_world, dtype=np.float64)
        self.validate()

    def validate(self):
        if self.cam_to_world.shape != (3, 4):
            raise ValueError("cam_to_world must be 3x4")
        r = self.cam_to_world[:, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block must be orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-6):
            raise ValueError("rotation must have determinant +1")
        if not (0.0 < self.near < self.far):
            raise ValueError("need 0 < near < far")

    @property
    def position(self) -> np.ndarray:
        return self.cam_to_world[:, 3]

    def rays_for_pixels(self, px: np.ndarray, py: np.ndarray):
        """Unit world-space rays through pixel centers (px, py are indices)."""
        cx, cy = self.principal_point
        dirs_cam = np.stack([
            (np.asarray(px, dtype=np.float64) + 0.5 - cx) / self.focal,
            -(np.asarray(py, dtype=np.float64) + 0.5 - cy) / self.focal,
            -np.ones(np.shape(px), dtype=np.float64),
        ], axis=-1)
        rot = self.cam_to_world[:, :3]
        dirs = dirs_cam @ rot.T
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.position, dirs.shape).copy()
        return origins, dirs

    def rays_full(self):
        """One ray per pixel, row-major (H, W) layout."""
        xx, yy = np.meshgrid(np.arange(self.width), np.arange(self.height),
                             indexing="xy")
        return self.rays_for_pixels(xx, yy)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not self.near < self.far:
            raise ValueError("need near < far")


@dataclass
class RenderOutput:
    """Per-pixel color, expected depth and accumulated opacity."""

    color: np.ndarray    # (..., 3)
    depth: np.ndarray    # (...)
    opacity: np.ndarray  # (...)


@dataclass
class SubgridSpec:
    """Regular pixel lattice: columns x0 + stride*i, rows y0 + stride*j."""

    x0: int
    y0: int
    stride: int
    nx: int
    ny: int

    @classmethod
    def full(cls, width: int, height: int):
        return cls(x0=0, y0=0, stride=1, nx=width, ny=height)

    @classmethod
    def strided(cls, width: int, height: int, stride: int, offset=(0, 0)):
        ox, oy = int(offset[0]), int(offset[1])
        nx = -(-(width - ox) // stride)
        ny = -(-(height - oy) // stride)
        return cls(x0=ox, y0=oy, stride=stride, nx=nx, ny=ny)

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.stride * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.stride * np.arange(self.ny)

    def check_bounds(self, width: int, height: int):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("subgrid lattice is empty")
        if self.x0 < 0 or self.y0 < 0 or self.xs[-1] >= width or self.ys[-1] >= height:
            raise ValueError("subgrid lattice out of image bounds")


@dataclass
class GradBuffer:
    """Gradient accumulator congruent to VoxelGrid + per-image atmosphere raws."""

    d_density_raw: np.ndarray
    d_color_raw: np.ndarray
    d_beta_raw: np.ndarray
    d_a_raw: np.ndarray

    @classmethod
    def zeros_like(cls, grid: VoxelGrid, n_images: int):
        return cls(
            d_density_raw=np.zeros_like(grid.density_raw),
            d_color_raw=np.zeros_like(grid.color_raw),
            d_beta_raw=np.zeros(n_images, dtype=np.float64),
            d_a_raw=np.zeros(n_images, dtype=np.float64),
        )

    def reset(self):
        self.d_density_raw.fill(0.0)
        self.d_color_raw.fill(0.0)
        self.d_beta_raw.fill(0.0)
        self.d_a_raw.fill(0.0)


@dataclass
class RenderTape:
    """Forward state cached per ray batch, consumed by the backward pass.

    Interpolation data is stored compactly for the in-bbox samples only;
    `sel` holds their flat positions within the (R, S) sample lattice.
    Out-of-bbox samples carry zero density and contribute zero gradient.
    """

    z: np.ndarray          # (R, S) sample depths
    delta: np.ndarray      # (R, S) segment lengths
    sigma: np.ndarray      # (R, S) activated density (0 outside bbox)
    rgb: np.ndarray        # (R, S, 3) activated color (background outside)
    alpha: np.ndarray      # (R, S)
    trans: np.ndarray      # (R, S) transmittance up to each sample, T_1 = 1
    weights: np.ndarray    # (R, S)
    sel: np.ndarray        # (M,) flat indices of in-bbox samples
    corner_idx: np.ndarray     # (M, 8) flat voxel indices
    corner_weights: np.ndarray # (M, 8) trilinear weights
    act_dsigma: np.ndarray # (M,) d softplus / d raw at the in-bbox samples
    rgb_in: np.ndarray     # (M, 3) activated color at the in-bbox samples
    far: float
    background: np.ndarray
    grid_shape: Tuple[int, int, int]


def _inside_mask(grid: VoxelGrid, p: np.ndarray) -> np.ndarray:
    """Componentwise bbox test for flat (N, 3) points."""
    return np.all((p >= grid.bbox_min) & (p <= grid.bbox_max), axis=-1)


def _interp_corners(grid: VoxelGrid, p: np.ndarray):
    """Corner support for flat (M, 3) points assumed inside the bbox.

    Returns flat corner indices (M, 8), their trilinear weights (M, 8), and
    the interpolated raw density (M,) and raw color (M, 3).
    """
    nx, ny, nz = grid.resolution
    u = (p - grid.bbox_min) / grid.node_step
    # truncation equals floor for in-range values; right edge clips to n-2
    ix = np.minimum(u[:, 0].astype(np.int64), nx - 2)
    iy = np.minimum(u[:, 1].astype(np.int64), ny - 2)
    iz = np.minimum(u[:, 2].astype(np.int64), nz - 2)
    fx = u[:, 0] - ix
    fy = u[:, 1] - iy
    fz = u[:, 2] - iz

    base = (ix * ny + iy) * nz + iz
    sx = ny * nz
    m = p.shape[0]
    idx = np.empty((m, 8), dtype=np.int64)
    idx[:, 0] = base
    idx[:, 1] = base + 1
    idx[:, 2] = base + nz
    idx[:, 3] = base + nz + 1
    idx[:, 4] = base + sx
    idx[:, 5] = base + sx + 1
    idx[:, 6] = base + sx + nz
    idx[:, 7] = base + sx + nz + 1

    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    a00 = gx * gy
    a01 = gx * fy
    a10 = fx * gy
    a11 = fx * fy
    w8 = np.empty((m, 8))
    w8[:, 0] = a00 * gz
    w8[:, 1] = a00 * fz
    w8[:, 2] = a01 * gz
    w8[:, 3] = a01 * fz
    w8[:, 4] = a10 * gz
    w8[:, 5] = a10 * fz
    w8[:, 6] = a11 * gz
    w8[:, 7] = a11 * fz

    raw_sigma = np.einsum("nk,nk->n", grid.density_raw.reshape(-1)[idx], w8)
    # contiguous flat gather per channel is much faster than row gathers
    cflat = grid.color_raw.reshape(-1)
    idx3 = idx * 3
    raw_rgb = np.empty((m, 3))
    for ch in range(3):
        raw_rgb[:, ch] = np.einsum("nk,nk->n", cflat[idx3 + ch], w8)
    return idx, w8, raw_sigma, raw_rgb


def sample_field(grid: VoxelGrid, point, background=None):
    """Activated (sigma, rgb) at one world point plus its interpolation support.

    Points outside the bbox return sigma = 0, rgb = background and an empty
    support; they are legal because rays enter and exit the box.
    """
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (3,) or not np.all(np.isfinite(point)):
        raise ValueError("invalid sample position")
    bg = DEFAULT_BACKGROUND if background is None else np.asarray(background, dtype=np.float64)

    if not _inside_mask(grid, point[None, :])[0]:
        return 0.0, bg.copy(), (np.zeros((0, 3), dtype=np.int64), np.zeros(0))
    idx, w8, raw_sigma, raw_rgb = _interp_corners(grid, point[None, :])
    sigma = float(softplus(raw_sigma[0]))
    rgb = sigmoid(raw_rgb[0])
    nx, ny, nz = grid.resolution
    flat = idx[0]
    corners = np.stack([flat // (ny * nz), (flat // nz) % ny, flat % nz], axis=-1)
    return sigma, rgb, (corners, w8[0].copy())


def _stratified_depths(near, far, n_samples, n_rays, rng):
    """Bin midpoints, or uniform jitter within each bin when rng is given."""
    h = (far - near) / n_samples
    edges = near + h * np.arange(n_samples)
    if rng is None:
        z = edges + 0.5 * h
        z = np.broadcast_to(z, (n_rays, n_samples)).copy()
    else:
        z = edges[None, :] + h * rng.random((n_rays, n_samples))
    return z


def render_rays(grid: VoxelGrid, origins, dirs, near, far, n_samples,
                rng=None, background=None):
    """Volume-render a batch of unit rays.

    Per ray: stratified depths z_i in [near, far], segment lengths
    delta_i = z_{i+1} - z_i (last one runs to the far plane), weights
    w_i = T_i (1 - exp(-sigma_i delta_i)) with T_i = exp(-sum_{l<i} sigma_l delta_l).
    Color and depth are completed with the background color and the far plane
    using the residual transmittance 1 - sum(w).

    Returns (color (R,3), depth (R,), opacity (R,), tape).
    """
    if n_samples < 2:
        raise ValueError("insufficient samples")
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    bg = DEFAULT_BACKGROUND if background is None else np.asarray(background, dtype=np.float64)
    n_rays = origins.shape[0]

    z = _stratified_depths(near, far, n_samples, n_rays, rng)
    delta = np.empty_like(z)
    delta[:, :-1] = z[:, 1:] - z[:, :-1]
    delta[:, -1] = far - z[:, -1]

    pts = (origins[:, None, :] + dirs[:, None, :] * z[..., None]).reshape(-1, 3)
    sel = np.flatnonzero(_inside_mask(grid, pts))
    idx, w8, raw_sigma_in, raw_rgb_in = _interp_corners(grid, pts[sel])

    sigma_in = softplus(raw_sigma_in)
    rgb_in = sigmoid(raw_rgb_in)
    sigma = np.zeros(n_rays * n_samples)
    sigma[sel] = sigma_in
    sigma = sigma.reshape(n_rays, n_samples)
    rgb = np.broadcast_to(bg, (n_rays * n_samples, 3)).copy()
    rgb[sel] = rgb_in
    rgb = rgb.reshape(n_rays, n_samples, 3)

    tau = sigma * delta
    alpha = -np.expm1(-tau)
    cum = np.cumsum(tau, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((n_rays, 1)), cum[:, :-1]], axis=1))
    weights = trans * alpha

    opacity = weights.sum(axis=1)
    color = (weights[..., None] * rgb).sum(axis=1) + (1.0 - opacity)[:, None] * bg
    depth = (weights * z).sum(axis=1) + (1.0 - opacity) * far

    tape = RenderTape(z=z, delta=delta, sigma=sigma, rgb=rgb, alpha=alpha,
                      trans=trans, weights=weights, sel=sel, corner_idx=idx,
                      corner_weights=w8, act_dsigma=sigmoid(raw_sigma_in),
                      rgb_in=rgb_in, far=far, background=bg,
                      grid_shape=grid.resolution)
    return color, depth, opacity, tape


def render_rays_backward(grid: VoxelGrid, tape: RenderTape,
                         d_color, d_depth, d_opacity, grads: GradBuffer):
    """Exact adjoint of render_rays.

    For the scalar functional L = <d_color, C> + d_depth*D + d_opacity*W the
    per-sample weight cotangent is
        g_i = <d_color, c_i> + d_depth*z_i + d_opacity - (<d_color, bg> + d_depth*far)
    and the density gradient follows from dw_i/dsigma_j:
        dL/dsigma_j = delta_j * (g_j * T_{j+1} - sum_{i>j} g_i w_i).
    Gradients pass through the activations and the trilinear weights into the
    raw arrays of the grid.
    """
    if tape.grid_shape != grid.resolution:
        raise ValueError("tape/grid shape mismatch")
    d_color = np.atleast_2d(np.asarray(d_color, dtype=np.float64))
    d_depth = np.atleast_1d(np.asarray(d_depth, dtype=np.float64))
    d_opacity = np.atleast_1d(np.asarray(d_opacity, dtype=np.float64))

    bg_term = d_color @ tape.background + d_depth * tape.far
    g = np.einsum("rsc,rc->rs", tape.rgb, d_color)
    g = g + tape.z * d_depth[:, None] + (d_opacity - bg_term)[:, None]

    gw = g * tape.weights
    suffix = np.flip(np.cumsum(np.flip(gw, axis=1), axis=1), axis=1) - gw
    trans_next = tape.trans * (1.0 - tape.alpha)
    d_sigma = tape.delta * (g * trans_next - suffix)

    # restrict to the in-bbox samples; the rest carry zero density/gradient
    d_raw_sigma = d_sigma.reshape(-1)[tape.sel] * tape.act_dsigma
    d_rgb = (tape.weights[..., None] * d_color[:, None, :]).reshape(-1, 3)
    d_raw_rgb = d_rgb[tape.sel] * tape.rgb_in * (1.0 - tape.rgb_in)

    nvox = int(np.prod(grid.resolution))
    flat_idx = tape.corner_idx.reshape(-1)
    sig_contrib = (d_raw_sigma[:, None] * tape.corner_weights).reshape(-1)
    grads.d_density_raw += np.bincount(
        flat_idx, weights=sig_contrib, minlength=nvox).reshape(grid.resolution)
    d_col = grads.d_color_raw.reshape(-1, 3)
    for ch in range(3):
        contrib = (d_raw_rgb[:, ch:ch + 1] * tape.corner_weights).reshape(-1)
        d_col[:, ch] += np.bincount(flat_idx, weights=contrib, minlength=nvox)


def render_ray(grid: VoxelGrid, ray: Ray, n_samples: int,
               rng=None, background=None):
    """Render one ray; returns (RenderOutput, tape)."""
    color, depth, opacity, tape = render_rays(
        grid, ray.origin[None, :], ray.direction[None, :],
        ray.near, ray.far, n_samples, rng=rng, background=background)
    out = RenderOutput(color=color[0], depth=float(depth[0]),
                       opacity=float(opacity[0]))
    return out, tape


def render_ray_backward(grid: VoxelGrid, ray: Ray, tape: RenderTape,
                        d_color, d_depth, d_opacity, grads: GradBuffer):
    render_rays_backward(grid, tape, np.asarray(d_color)[None, :],
                         [d_depth], [d_opacity], grads)


def render_subgrid(grid: VoxelGrid, camera: Camera, pixels: SubgridSpec,
                   n_samples: int, rng=None, background=None):
    """Render the pixel lattice of `pixels`; output keeps the (ny, nx) layout
    so image-space losses apply directly. Returns (RenderOutput, tape)."""
    pixels.check_bounds(camera.width, camera.height)
    xx, yy = np.meshgrid(pixels.xs, pixels.ys, indexing="xy")
    origins, dirs = camera.rays_for_pixels(xx.ravel(), yy.ravel())
    color, depth, opacity, tape = render_rays(
        grid, origins, dirs, camera.near, camera.far, n_samples,
        rng=rng, background=background)
    shape = (pixels.ny, pixels.nx)
    out = RenderOutput(color=color.reshape(shape + (3,)),
                       depth=depth.reshape(shape),
                       opacity=opacity.reshape(shape))
    return out, tape


def render_subgrid_backward(grid: VoxelGrid, tape: RenderTape,
                            d_color, d_depth, d_opacity, grads: GradBuffer):
    """Backward for render_subgrid; cotangents use the (ny, nx) lattice layout."""
    n = tape.z.shape[0]
    render_rays_backward(grid, tape,
                         np.asarray(d_color, dtype=np.float64).reshape(n, 3),
                         np.asarray(d_depth, dtype=np.float64).reshape(n),
                         np.asarray(d_opacity, dtype=np.float64).reshape(n),
                         grads)


def render_image(grid: VoxelGrid, camera: Camera, n_samples: int,
                 background=None, clamp: bool = True):
    """Deterministic full-image render (no jitter); returns (rgb, depth)."""
    spec = SubgridSpec.full(camera.width, camera.height)
    out, _ = render_subgrid(grid, camera, spec, n_samples, rng=None,
                            background=background)
    rgb = np.clip(out.color, 0.0, 1.0) if clamp else out.color
    return rgb, out.depth
