"""Atmospheric scattering model and per-image atmosphere parameters.

A hazy observation decomposes per pixel into attenuated object light and
airlight: I = J*t + A*(1 - t) with transmission t = exp(-beta * depth).
Forward hazing, its algebraic inverse, the exact adjoints, and the 8-bit
quantization simulation live here.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import logit, sigmoid, softplus, softplus_inv

A_SCALE = 1.5  # admissible airlight range is (0, 1.5); estimates above 1 occur


@dataclass
class AtmosphereParams:
    """Unbounded per-image raw parameters mapping to beta > 0, A in (0, 1.5)."""

    beta_raw: np.ndarray
    a_raw: np.ndarray

    @classmethod
    def create(cls, n_images: int, beta_init: float = 0.05, a_init: float = 0.75):
        return cls(
            beta_raw=np.full(n_images, softplus_inv(beta_init), dtype=np.float64),
            a_raw=np.full(n_images, float(logit(a_init / A_SCALE)), dtype=np.float64),
        )

    @property
    def n_images(self) -> int:
        return self.beta_raw.shape[0]

    @property
    def beta(self) -> np.ndarray:
        return softplus(self.beta_raw)

    @property
    def a(self) -> np.ndarray:
        return A_SCALE * sigmoid(self.a_raw)

    def chain_raw(self, d_beta, d_a):
        """Chain cotangents on (beta, A) back to the raw parameters."""
        s = sigmoid(self.a_raw)
        d_beta_raw = np.asarray(d_beta) * sigmoid(self.beta_raw)
        d_a_raw = np.asarray(d_a) * A_SCALE * s * (1.0 - s)
        return d_beta_raw, d_a_raw


@dataclass
class QuantizedImage:
    """Quantized pixel values with their per-value reconstruction interval."""

    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def transmission(depth, beta):
    """t = exp(-beta * depth); depth must be nonnegative."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0):
        raise ValueError("depth must be nonnegative")
    return np.exp(-beta * depth)


def apply_asm(j_clean, depth, beta, a):
    """Haze a clean image: I = J*t + A*(1-t), t from the per-pixel depth.

    No clamping happens here; values are clamped only when a dataset is
    exported, never inside training.
    """
    j_clean = np.asarray(j_clean, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if j_clean.shape[:-1] != depth.shape:
        raise ValueError("image/depth shape mismatch")
    t = transmission(depth, beta)
    return j_clean * t[..., None] + a * (1.0 - t[..., None])


def invert_asm(i_hazy, depth, beta, a, t_min: float = 1e-3):
    """Algebraic inverse of apply_asm: J = (I - A*(1-t)) / max(t, t_min)."""
    if t_min <= 0:
        raise ValueError("t_min must be positive")
    i_hazy = np.asarray(i_hazy, dtype=np.float64)
    t = transmission(np.asarray(depth, dtype=np.float64), beta)
    t = np.maximum(t, t_min)
    return (i_hazy - a * (1.0 - t[..., None])) / t[..., None]


def asm_backward(j_clean, depth, beta, a, d_i):
    """Exact adjoints of apply_asm.

    dI/dJ = t, dI/dA = 1-t, dI/dbeta = (A-J)*depth*t, dI/ddepth = (A-J)*beta*t.
    Scalar cotangents (d_beta, d_A) are summed over pixels and channels.
    """
    j_clean = np.asarray(j_clean, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    d_i = np.asarray(d_i, dtype=np.float64)
    if d_i.shape != j_clean.shape or j_clean.shape[:-1] != depth.shape:
        raise ValueError("cotangent shape mismatch")
    t = transmission(depth, beta)
    te = t[..., None]
    aj = a - j_clean
    d_j = d_i * te
    d_depth = np.sum(d_i * aj * beta * te, axis=-1)
    d_beta = float(np.sum(d_i * aj * depth[..., None] * te))
    d_a = float(np.sum(d_i * (1.0 - te)))
    return d_j, d_depth, d_beta, d_a


def quantize(image, levels: int = 256) -> QuantizedImage:
    """Clamp to [0,1] and round to the nearest k/(levels-1) code value.

    The reconstruction interval is centered on the code value with half-width
    1/(2*(levels-1)), clamped to [0,1]. With 256 levels and (levels-1)
    dividing 255 the code values are exactly representable in 8-bit PNG.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    scale = levels - 1
    values = np.round(image * scale) / scale
    half = 0.5 / scale
    lo = np.clip(values - half, 0.0, 1.0)
    hi = np.clip(values + half, 0.0, 1.0)
    return QuantizedImage(values=values, lo=lo, hi=hi)


def quantized_from_png(codes_u8, levels: int = 256) -> QuantizedImage:
    """Rebuild a QuantizedImage from 8-bit PNG codes.

    Exact whenever (levels - 1) divides 255 (quantize is idempotent on the
    stored code values); other level counts round-trip approximately.
    """
    codes = np.asarray(codes_u8, dtype=np.float64)
    return quantize(codes / 255.0, levels=levels)
