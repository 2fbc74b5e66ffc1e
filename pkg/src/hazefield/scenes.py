"""Procedural ground-truth scenes: analytic primitives, orbiting camera rigs,
exact clean renders with exact depth, and ASM-hazed quantized datasets.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .field import Camera
from .fileio import camera_to_record, save_manifest, write_pfm, write_png
from .haze import apply_asm, quantize


@dataclass
class Primitive:
    kind: str          # "sphere" | "box"
    center: np.ndarray
    size: np.ndarray   # radius (sphere) or half-extents (box)
    albedo: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if np.any(self.size <= 0):
            raise ValueError("primitive size must be positive")


@dataclass
class SceneSpec:
    primitives: List[Primitive]
    background: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    light_dir: np.ndarray
    ambient: float = 0.35

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        self.background = np.asarray(self.background, dtype=np.float64)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64)
        self.light_dir = self.light_dir / np.linalg.norm(self.light_dir)


def fixture_scene() -> SceneSpec:
    """Default desk-scale scene: three spheres and a box over a ground slab."""
    return SceneSpec(
        primitives=[
            Primitive("box", center=(0.0, 0.0, -0.95),
                      size=(1.35, 1.35, 0.15), albedo=(0.75, 0.72, 0.68)),
            Primitive("sphere", center=(-0.55, -0.35, -0.35),
                      size=0.45, albedo=(0.85, 0.25, 0.20)),
            Primitive("sphere", center=(0.60, -0.50, -0.40),
                      size=0.40, albedo=(0.25, 0.70, 0.30)),
            Primitive("sphere", center=(0.05, 0.55, -0.15),
                      size=0.50, albedo=(0.25, 0.40, 0.85)),
            Primitive("box", center=(0.55, 0.50, -0.55),
                      size=(0.30, 0.30, 0.35), albedo=(0.85, 0.75, 0.25)),
        ],
        background=(1.0, 1.0, 1.0),
        bbox_min=(-1.5, -1.5, -1.5),
        bbox_max=(1.5, 1.5, 1.5),
        light_dir=(0.4, -0.3, 0.85),
        ambient=0.35,
    )


def look_at_camera(eye, target, width, height, focal, near, far,
                   world_up=(0.0, 0.0, 1.0)) -> Camera:
    """Right-handed look-at pose; the camera -z axis points at the target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(world_up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(fwd, (1.0, 0.0, 0.0))
    right = right / np.linalg.norm(right)
    cam_up = np.cross(-fwd, right)  # completes the right-handed triad
    rot = np.column_stack([right, cam_up, -fwd])
    c2w = np.concatenate([rot, eye[:, None]], axis=1)
    return Camera(width=width, height=height, focal=focal,
                  principal_point=(width / 2.0, height / 2.0),
                  cam_to_world=c2w, near=near, far=far)


def generate_cameras(n: int, radius: float, elevation_range: Tuple[float, float],
                     width: int, height: int, focal: float,
                     near: float, far: float,
                     rng: Optional[np.random.Generator] = None,
                     azimuth_offset: float = 0.0) -> List[Camera]:
    """n inward-facing poses on a sphere, azimuths equally spaced.

    Elevations (radians) are drawn uniformly from elevation_range when an rng
    is given, else fixed at the range midpoint.
    """
    if n < 2:
        raise ValueError("need at least 2 cameras")
    lo, hi = elevation_range
    cams = []
    for k in range(n):
        az = azimuth_offset + 2.0 * math.pi * k / n
        elev = 0.5 * (lo + hi) if rng is None else float(rng.uniform(lo, hi))
        eye = radius * np.array([
            math.cos(elev) * math.cos(az),
            math.cos(elev) * math.sin(az),
            math.sin(elev),
        ])
        cams.append(look_at_camera(eye, (0.0, 0.0, 0.0), width, height,
                                   focal, near, far))
    return cams


def _intersect_sphere(origins, dirs, center, radius):
    oc = origins - center
    b = np.einsum("...k,...k->...", oc, dirs)
    c = np.einsum("...k,...k->...", oc, oc) - radius ** 2
    disc = b ** 2 - c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t = np.where(hit, -b - sq, np.inf)
    # camera inside the sphere: take the far root
    t = np.where(hit & (t <= 0.0), -b + sq, t)
    t = np.where(t > 0.0, t, np.inf)
    t_safe = np.where(np.isfinite(t), t, 0.0)
    pts = origins + dirs * t_safe[..., None]
    normals = (pts - center) / radius
    return t, normals


def _intersect_box(origins, dirs, center, half):
    bmin = center - half
    bmax = center + half
    safe = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (bmin - origins) / safe
    t2 = (bmax - origins) / safe
    t_near = np.minimum(t1, t2)
    t_far = np.maximum(t1, t2)
    enter_axis = np.argmax(t_near, axis=-1)
    t_enter = np.max(t_near, axis=-1)
    t_exit = np.min(t_far, axis=-1)
    hit = (t_enter <= t_exit) & (t_enter > 0.0)
    t = np.where(hit, t_enter, np.inf)
    normals = np.zeros(origins.shape)
    idx = np.arange(normals.reshape(-1, 3).shape[0])
    flat_n = normals.reshape(-1, 3)
    flat_axis = enter_axis.reshape(-1)
    flat_sign = -np.sign(np.take_along_axis(dirs.reshape(-1, 3),
                                            flat_axis[:, None], axis=1))[:, 0]
    flat_n[idx, flat_axis] = flat_sign
    return t, normals


def gt_render(scene: SceneSpec, camera: Camera):
    """Analytic render: nearest ray-primitive hit, Lambertian + ambient
    shading, ray-distance depth. Misses get the background color and far."""
    origins, dirs = camera.rays_full()
    h, w = origins.shape[:2]
    best_t = np.full((h, w), np.inf)
    color = np.broadcast_to(scene.background, (h, w, 3)).copy()
    for prim in scene.primitives:
        if prim.kind == "sphere":
            t, normals = _intersect_sphere(origins, dirs, prim.center,
                                           float(prim.size[0]))
        else:
            t, normals = _intersect_box(origins, dirs, prim.center, prim.size)
        valid = (t >= camera.near) & (t <= camera.far) & (t < best_t)
        if not np.any(valid):
            continue
        lambert = np.maximum(0.0, normals @ scene.light_dir)
        shade = scene.ambient + (1.0 - scene.ambient) * lambert
        color = np.where(valid[..., None], prim.albedo * shade[..., None], color)
        best_t = np.where(valid, t, best_t)
    depth = np.where(np.isfinite(best_t), best_t, camera.far)
    depth = np.clip(depth, camera.near, camera.far)
    return color, depth


def build_dataset(scene: SceneSpec, cameras: List[Camera], beta_gt: float,
                  a_gt: float, levels: int, out_dir,
                  train_indices: Optional[List[int]] = None,
                  threads: int = 1) -> dict:
    """Render every view, haze it with the true depth, quantize, and write the
    dataset with a hidden ground-truth block. Returns the manifest dict.

    Views are independent; `threads` caps the render workers. Files are named
    by view index, so the output is identical for any worker count.
    """
    if beta_gt <= 0:
        raise ValueError("beta must be positive")
    if not (0.0 < a_gt < 1.5):
        raise ValueError("A must be in (0, 1.5)")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)

    n = len(cameras)
    if train_indices is None:
        train_indices = list(range(n))
    test_indices = [i for i in range(n) if i not in set(train_indices)]

    def emit_view(i: int):
        clean, depth = gt_render(scene, cameras[i])
        hazy = apply_asm(clean, depth, beta_gt, a_gt)
        q = quantize(hazy, levels=levels)
        write_png(out_dir / f"images/hazy_{i:03d}.png", q.values)
        write_png(out_dir / f"gt/clean_{i:03d}.png", clean)
        write_pfm(out_dir / f"gt/depth_{i:03d}.pfm", depth)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(emit_view, range(n)))
    else:
        for i in range(n):
            emit_view(i)
    image_paths = [f"images/hazy_{i:03d}.png" for i in range(n)]
    clean_paths = [f"gt/clean_{i:03d}.png" for i in range(n)]
    depth_paths = [f"gt/depth_{i:03d}.pfm" for i in range(n)]

    manifest = {
        "cameras": [camera_to_record(c) for c in cameras],
        "images": image_paths,
        "background": [float(v) for v in scene.background],
        "near": float(cameras[0].near),
        "far": float(cameras[0].far),
        "levels": int(levels),
        "splits": {"train": train_indices, "test": test_indices},
        "gt": {
            "beta": float(beta_gt),
            "A": float(a_gt),
            "clean": clean_paths,
            "depth": depth_paths,
        },
    }
    save_manifest(out_dir, manifest)
    return manifest


def build_fixture_dataset(out_dir, beta_gt: float = 0.162, a_gt: float = 0.8,
                          n_train: int = 20, n_test: int = 5,
                          resolution: int = 64, levels: int = 256,
                          seed: int = 0, threads: int = 1) -> dict:
    """The default fixture: orbit rig around fixture_scene at desk scale."""
    rng = np.random.default_rng(seed)
    scene = fixture_scene()
    focal = 1.25 * resolution
    common = dict(radius=4.0, width=resolution, height=resolution,
                  focal=focal, near=2.0, far=6.0)
    train_cams = generate_cameras(
        n_train, elevation_range=(math.radians(15), math.radians(35)),
        rng=rng, **common)
    test_cams = generate_cameras(
        n_test, elevation_range=(math.radians(22), math.radians(28)),
        rng=rng, azimuth_offset=math.pi / n_train, **common)
    cameras = train_cams + test_cams
    return build_dataset(scene, cameras, beta_gt, a_gt, levels, out_dir,
                         train_indices=list(range(n_train)), threads=threads)
