"""Loss stack for the two-branch optimization, each with exact derivatives.

Every loss returns (value, cotangent) so the trainer can assemble the full
analytic backward pass without an autodiff framework.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class LossWeights:
    """Balance coefficients for the total loss and loss-internal knobs.

    lambda_smrc discounts reconstruction error inside a pixel's quantization
    interval; lambda1/2/3 weight the atmosphere-consistency, contrast and
    total-variation terms. cd_hinge optionally clamps the contrast term at 0.
    """

    lambda_smrc: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.10
    lambda3: float = 0.03
    pool_size: int = 4
    tv_eps: float = 1e-4
    cd_hinge: bool = False

    def validate(self):
        if not (0.0 < self.lambda_smrc <= 1.0):
            raise ValueError("lambda_smrc must be in (0, 1]")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.pool_size < 1:
            raise ValueError("pool_size must be positive")
        if self.tv_eps <= 0:
            raise ValueError("tv_eps must be positive")


def smrc_penalty(u, q, lo, hi, lambda_smrc: float):
    """Soft-margin squared penalty against a quantized target.

    Inside the reconstruction interval [lo, hi] the error (u - q)^2 is scaled
    by lambda_smrc; outside, the distance to the violated bound is penalized
    at full weight. Returns elementwise (value, d_u).
    """
    u = np.asarray(u, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    below = u < lo
    above = u > hi
    inside = ~(below | above)
    value = np.where(inside, lambda_smrc * (u - q) ** 2, 0.0)
    value = np.where(below, (u - lo) ** 2, value)
    value = np.where(above, (u - hi) ** 2, value)
    d_u = np.where(inside, 2.0 * lambda_smrc * (u - q), 0.0)
    d_u = np.where(below, 2.0 * (u - lo), d_u)
    d_u = np.where(above, 2.0 * (u - hi), d_u)
    if value.ndim == 0:
        return float(value), float(d_u)
    return value, d_u


def rec_loss(u, q, lo, hi, lambda_smrc: float):
    """Mean SMRC penalty over all pixels/channels; d_u matches u's shape."""
    value, d_u = smrc_penalty(u, q, lo, hi, lambda_smrc)
    n = np.size(value)
    return float(np.mean(value)), np.asarray(d_u) / n


def cons_loss(beta, a):
    """Variance-style penalty tying per-image atmosphere estimates together.

    value = mean_i [(beta_i - mean(beta))^2 + (A_i - mean(A))^2]. The gradient
    through the means is kept; since deviations sum to zero it reduces to
    (2/N) * (x_i - mean(x)).
    """
    beta = np.asarray(beta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    n = beta.shape[0]
    if n == 0:
        raise ValueError("cons_loss needs at least one image")
    db = beta - beta.mean()
    da = a - a.mean()
    value = float(np.mean(db ** 2 + da ** 2))
    return value, (2.0 / n) * db, (2.0 / n) * da


def _pool_project(image, s: int):
    """Blockwise mean of `image` broadcast back to its own shape.

    Pads by edge replication when s does not divide the image, then crops.
    Returns (projection, cache for the adjoint).
    """
    h, w = image.shape[:2]
    ph = (-h) % s
    pw = (-w) % s
    pad_spec = ((0, ph), (0, pw)) + ((0, 0),) * (image.ndim - 2)
    padded = np.pad(image, pad_spec, mode="edge")
    hp, wp = padded.shape[:2]
    blocks = padded.reshape((hp // s, s, wp // s, s) + padded.shape[2:])
    pooled = blocks.mean(axis=(1, 3))
    up = np.repeat(np.repeat(pooled, s, axis=0), s, axis=1)[:h, :w]
    return up, (h, w, hp, wp, s)


def _pool_project_adjoint(d_up, cache):
    """Adjoint of _pool_project for the same padding/crop."""
    h, w, hp, wp, s = cache
    full = np.zeros((hp, wp) + d_up.shape[2:], dtype=np.float64)
    full[:h, :w] = d_up
    blocks = full.reshape((hp // s, s, wp // s, s) + full.shape[2:])
    d_pooled = blocks.sum(axis=(1, 3)) / (s * s)
    d_padded = np.repeat(np.repeat(d_pooled, s, axis=0), s, axis=1)
    # fold replicated-edge gradients back onto the source edge pixels
    out = d_padded[:h, :w].copy()
    if hp > h:
        out[h - 1] += d_padded[h:, :w].sum(axis=0)
    if wp > w:
        out[:, w - 1] += d_padded[:h, w:].sum(axis=1)
    if hp > h and wp > w:
        out[h - 1, w - 1] += d_padded[h:, w:].sum(axis=(0, 1))
    return out


def local_contrast(image, pool_size: int):
    """RMS of the residual against the blockwise-mean projection.

    Mean-pool with kernel = stride = pool_size, nearest-neighbor upsample by
    the same factor, and take the root-mean-square of the difference. The RMS
    makes the statistic independent of the lattice resolution.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if h < pool_size or w < pool_size:
        raise ValueError("image smaller than one pool cell")
    up, cache = _pool_project(image, pool_size)
    resid = image - up
    n = resid.size
    msq = float(np.mean(resid ** 2))
    value = float(np.sqrt(msq))
    # below float-noise contrast there is no meaningful descent direction
    if value <= 1e-12:
        return 0.0, np.zeros_like(image)
    d_resid = resid / (n * value)
    d_image = d_resid - _pool_project_adjoint(d_resid, cache)
    return value, d_image


def cd_loss(i_hazy, j_est, pool_size: int, hinge: bool = False):
    """Contrast gap local_contrast(I_hazy) - local_contrast(J_est).

    Minimizing it rewards contrast in the estimated clear image; the hazy
    input is data so the gradient flows only into j_est.
    """
    i_hazy = np.asarray(i_hazy, dtype=np.float64)
    j_est = np.asarray(j_est, dtype=np.float64)
    if i_hazy.shape != j_est.shape:
        raise ValueError("shape mismatch")
    lc_hazy, _ = local_contrast(i_hazy, pool_size)
    lc_est, d_est = local_contrast(j_est, pool_size)
    value = lc_hazy - lc_est
    if hinge and value <= 0.0:
        return 0.0, np.zeros_like(j_est)
    return value, -d_est


def tv_loss(image, tv_eps: float):
    """Smoothed total variation: mean of sqrt(ux^2 + uy^2 + eps^2) over the
    forward-difference interior, averaged across channels."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if h < 2 or w < 2:
        raise ValueError("lattice too small for differences")
    ux = image[:-1, 1:] - image[:-1, :-1]
    uy = image[1:, :-1] - image[:-1, :-1]
    r = np.sqrt(ux ** 2 + uy ** 2 + tv_eps ** 2)
    value = float(np.mean(r))
    scale = 1.0 / r.size
    gx = scale * ux / r
    gy = scale * uy / r
    d_image = np.zeros_like(image)
    d_image[:-1, 1:] += gx
    d_image[:-1, :-1] -= gx
    d_image[1:, :-1] += gy
    d_image[:-1, :-1] -= gy
    return value, d_image


def total_loss(rec, cons, cd, tv, weights: LossWeights) -> float:
    """rec + lambda1*cons + lambda2*cd + lambda3*tv."""
    value = rec + weights.lambda1 * cons + weights.lambda2 * cd + weights.lambda3 * tv
    if not np.isfinite(value):
        raise RuntimeError("diverged")
    return float(value)


def mse_loss(c_observed, c_hat):
    """Mean squared error and its derivative w.r.t. the prediction."""
    c_observed = np.asarray(c_observed, dtype=np.float64)
    c_hat = np.asarray(c_hat, dtype=np.float64)
    if c_observed.shape != c_hat.shape:
        raise ValueError("shape mismatch")
    diff = c_hat - c_observed
    value = float(np.mean(diff ** 2))
    return value, 2.0 * diff / diff.size
