"""Anomaly-map composition and binarization.

Three map variants are produced per case: the inverted-SSIM map against the
mean reconstruction (s_mean), and its per-pixel products with the smoothed
diagonal and full-covariance Mahalanobis maps (s_mhd, s_smhd). The
population-reference variant scores an input against a set of healthy images
instead of per-case reconstructions and is returned raw, without the SSIM
factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import mahalanobis
from .pseudostats import summarize
from .ssim import SsimParams, s_mean
from .volume import as_image, as_mask, gaussian_filter


@dataclass(frozen=True)
class ScoringConfig:
    n_reconstructions: int = 10
    t_test: int = 500
    lam: float = mahalanobis.DEFAULT_LAMBDA
    mhd_smooth_sigma: float = 1.0
    ssim: SsimParams = field(default_factory=SsimParams)
    noise_kind: str = "simplex"
    seed: int = 0


@dataclass
class ScoredCase:
    input: np.ndarray
    s_mean: np.ndarray
    s_mhd: np.ndarray
    s_smhd: np.ndarray
    mhd_scalar_diag: float
    mhd_scalar_full: float
    ground_truth: Optional[np.ndarray] = None


def score_case(x: np.ndarray, stack: np.ndarray, cfg: ScoringConfig,
               ground_truth=None) -> ScoredCase:
    """Score one input against its reconstruction stack.

    The Mahalanobis maps are Gaussian-smoothed before the per-pixel
    multiplication with the SSIM anomaly map; s_mean itself is not smoothed
    beyond its own window.
    """
    x = as_image(x)
    dist = summarize(stack)
    if dist.shape != x.shape:
        raise ValueError(f"stack shape {dist.shape} != input shape {x.shape}")
    base = s_mean(x, dist.mean, cfg.ssim)
    diag = mahalanobis.mhd_diag_map(dist, x, cfg.lam)
    full = mahalanobis.mhd_full_map(dist, x, cfg.lam)
    smoothed_diag = mahalanobis.smooth_mhd(diag, cfg.mhd_smooth_sigma)
    smoothed_full = mahalanobis.smooth_mhd(full, cfg.mhd_smooth_sigma)
    gt = as_mask(ground_truth) if ground_truth is not None else None
    return ScoredCase(
        input=x,
        s_mean=base,
        s_mhd=base * smoothed_diag,
        s_smhd=base * smoothed_full,
        mhd_scalar_diag=diag.scalar,
        mhd_scalar_full=full.scalar,
        ground_truth=gt,
    )


def population_cm_score(x: np.ndarray, healthy_set: np.ndarray,
                        cfg: ScoringConfig) -> np.ndarray:
    """Full-covariance distance map against a healthy population, smoothed.

    The reference is a (K, H, W) stack of registered healthy images rather
    than reconstructions of x; the map is a standalone baseline and carries no
    SSIM factor.
    """
    x = as_image(x)
    dist = summarize(healthy_set)
    if dist.shape != x.shape:
        raise ValueError(f"population shape {dist.shape} != input shape {x.shape}")
    full = mahalanobis.mhd_full_map(dist, x, cfg.lam)
    return gaussian_filter(full.map, cfg.mhd_smooth_sigma)


def binarize(score_map: np.ndarray, threshold: float) -> np.ndarray:
    """Segmentation mask: pixel is foreground iff its score exceeds threshold."""
    return np.asarray(score_map) > threshold
