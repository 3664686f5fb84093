"""Pixel-space Mahalanobis distance maps against a pseudo-healthy distribution.

Two covariance models are supported: the diagonal model (per-pixel
standardization by variance) and the full model, whose regularized inverse is
applied exactly through the low-rank identity

    (lam*I + C C^T / (N-1))^{-1} d = (d - C y) / lam,
    (lam*I_N + C^T C / (N-1)) y = C^T d / (N-1),

so no D x D matrix is ever formed. Both paths report a per-pixel map whose
squared values decompose the squared global distance: the contribution of
pixel k is m_k = d_k * (Sigma_reg^{-1} d)_k, the map value is
sqrt(max(0, m_k)), and sum_k m_k equals the squared scalar distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .pseudostats import PseudoHealthyDistribution
from .volume import as_image, gaussian_filter

#: Default ridge added to the covariance diagonal before inversion.
DEFAULT_LAMBDA = 1e-5


@dataclass(frozen=True)
class MhdResult:
    map: np.ndarray            # (H, W), nonnegative per-pixel distance map
    scalar: float              # global distance of the flattened image
    lam: float                 # regularization added to the diagonal
    contributions: np.ndarray  # (H, W), signed; sums to scalar**2


def _deviation(dist: PseudoHealthyDistribution, x: np.ndarray) -> np.ndarray:
    x = as_image(x)
    if x.shape != dist.shape:
        raise ValueError(f"image shape {x.shape} != distribution shape {dist.shape}")
    return (x - dist.mean).reshape(-1)


def _check_lambda(lam: float):
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def mhd_diag_map(dist: PseudoHealthyDistribution, x: np.ndarray,
                 lam: float = DEFAULT_LAMBDA) -> MhdResult:
    """Per-pixel standardization |d_k| / sqrt(var_k + lam) and its global distance."""
    _check_lambda(lam)
    d = _deviation(dist, x)
    denom = dist.variance.reshape(-1) + lam
    contributions = d * d / denom
    scalar = float(np.sqrt(contributions.sum()))
    map2d = (np.abs(d) / np.sqrt(denom)).reshape(dist.shape)
    return MhdResult(map=map2d, scalar=scalar, lam=lam,
                     contributions=contributions.reshape(dist.shape))


def woodbury_solve(dist: PseudoHealthyDistribution, d: np.ndarray,
                   lam: float) -> np.ndarray:
    """Solve (Sigma_full + lam*I) v = d using the rank-N factor only.

    The N x N system is symmetric positive definite for lam > 0 and is solved
    by Cholesky factorization; peak extra memory is O(D*N).
    """
    _check_lambda(lam)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if d.size != dist.d:
        raise ValueError(f"vector length {d.size} != distribution dimension {dist.d}")
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite values in deviation vector")
    c = dist.centered
    scale = 1.0 / (dist.n - 1)
    gram = (c.T @ c) * scale
    gram[np.diag_indices_from(gram)] += lam
    rhs = (c.T @ d) * scale
    y = cho_solve(cho_factor(gram, lower=True), rhs)
    return (d - c @ y) / lam


def _full_result(dist: PseudoHealthyDistribution, lam: float,
                 v: np.ndarray, d: np.ndarray) -> MhdResult:
    contributions = d * v
    total = contributions.sum()
    if total < -1e-9 * float(d @ d):
        raise FloatingPointError(f"quadratic form {total} is negative; solver failure")
    scalar = float(np.sqrt(max(total, 0.0)))
    map2d = np.sqrt(np.maximum(contributions, 0.0)).reshape(dist.shape)
    return MhdResult(map=map2d, scalar=scalar, lam=lam,
                     contributions=contributions.reshape(dist.shape))


def mhd_full_map(dist: PseudoHealthyDistribution, x: np.ndarray,
                 lam: float = DEFAULT_LAMBDA) -> MhdResult:
    """Full-covariance distance map via the exact low-rank solve."""
    _check_lambda(lam)
    d = _deviation(dist, x)
    v = woodbury_solve(dist, d, lam)
    return _full_result(dist, lam, v, d)


def dense_mhd_oracle(dist: PseudoHealthyDistribution, x: np.ndarray,
                     lam: float = DEFAULT_LAMBDA) -> MhdResult:
    """Reference path materializing Sigma_full + lam*I densely. Test use only."""
    _check_lambda(lam)
    if dist.d > 4096:
        raise ValueError(f"dense oracle limited to D <= 4096, got D = {dist.d}")
    d = _deviation(dist, x)
    c = dist.centered
    sigma = (c @ c.T) / (dist.n - 1)
    sigma[np.diag_indices_from(sigma)] += lam
    v = np.linalg.solve(sigma, d)
    return _full_result(dist, lam, v, d)


def smooth_mhd(result: MhdResult, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-smoothed distance map (the form composed into anomaly scores)."""
    return gaussian_filter(result.map, sigma)
