"""Pixel-wise structural similarity and the inverted anomaly map.

Local statistics are Gaussian-weighted (sigma 1 by default, truncated at
radius 3, reflected borders, matching :func:`smhd.volume.gaussian_filter`),
so the map keeps the full image size. The anomaly map is 1 - SSIM, large
where the input disagrees with the mean reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .volume import as_image, gaussian_filter


@dataclass(frozen=True)
class SsimParams:
    """Window width and stabilizers; c1/c2 default to (0.01*L)^2 and (0.03*L)^2."""

    kernel_sigma: float = 1.0
    data_range: float = 1.0
    c1: Optional[float] = None
    c2: Optional[float] = None

    def __post_init__(self):
        if self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")
        if self.data_range <= 0:
            raise ValueError("data_range must be positive")
        if self.c1 is None:
            object.__setattr__(self, "c1", (0.01 * self.data_range) ** 2)
        if self.c2 is None:
            object.__setattr__(self, "c2", (0.03 * self.data_range) ** 2)
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("stabilizers c1 and c2 must be positive")


def ssim_map(x: np.ndarray, y: np.ndarray,
             params: SsimParams = SsimParams()) -> np.ndarray:
    """Per-pixel SSIM between two images, values in [-1, 1]."""
    x = as_image(x)
    y = as_image(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    sigma = params.kernel_sigma
    mx = gaussian_filter(x, sigma)
    my = gaussian_filter(y, sigma)
    vx = gaussian_filter(x * x, sigma) - mx * mx
    vy = gaussian_filter(y * y, sigma) - my * my
    cxy = gaussian_filter(x * y, sigma) - mx * my
    c1, c2 = params.c1, params.c2
    return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / \
           ((mx * mx + my * my + c1) * (vx + vy + c2))


def s_mean(x: np.ndarray, mu: np.ndarray,
           params: SsimParams = SsimParams()) -> np.ndarray:
    """Inverted similarity 1 - SSIM(x, mu); values in [0, 2]."""
    return 1.0 - ssim_map(x, mu, params)
