"""Dense-array data model and separable Gaussian filtering.

Array conventions used throughout the package:

* ``Image2D``   -- ``(H, W)`` float64 array, row-major, single channel.
* ``Volume3D``  -- ``(S, H, W)`` float64 array of S slices sharing H and W.
* ``BinaryMask``-- boolean array matching the image (or volume) it annotates.
* stacks of N reconstructions -- ``(N, H, W)`` float64 arrays.

Pixel intensities are normalized to [0, 1] for inputs; score maps are
unbounded. All public operations keep values finite and work in float64.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter1d


def as_image(data) -> np.ndarray:
    """Coerce to a finite (H, W) float64 image, validating the invariants."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains NaN or Inf values")
    return img


def as_mask(data) -> np.ndarray:
    """Coerce to a boolean mask array (any nonzero value counts as foreground)."""
    mask = np.asarray(data)
    if mask.dtype != np.bool_:
        mask = mask != 0
    return mask


def flatten(img: np.ndarray) -> np.ndarray:
    """Flatten an (H, W) image into a length H*W vector, row index slowest."""
    img = as_image(img)
    return img.reshape(-1)


def reshape(v: np.ndarray, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`flatten`: lay a length h*w vector out row-major."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != h * w:
        raise ValueError(f"cannot reshape vector of length {v.size} to {h}x{w}")
    return v.reshape(h, w)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian kernel, truncated at radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 / (sigma * sigma) * x**2)
    return k / k.sum()


def gaussian_filter(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders.

    The kernel is truncated at radius ceil(3*sigma) and renormalized to sum 1,
    so constant images are preserved exactly and the image mean is conserved.
    """
    img = as_image(img)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    out = gaussian_filter1d(img, sigma, axis=0, mode="reflect", radius=radius)
    out = gaussian_filter1d(out, sigma, axis=1, mode="reflect", radius=radius)
    return out
