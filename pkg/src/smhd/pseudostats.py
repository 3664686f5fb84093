"""Summary statistics of a reconstruction stack.

A stack of N reconstructions of one input is condensed into its mean image,
the per-pixel unbiased variance, and the centered deviation matrix C of shape
(D, N) whose column i is flatten(x_i) - flatten(mean). The full covariance
C @ C.T / (N - 1) has rank at most N - 1 and is never materialized; every
consumer works from the factor C.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PseudoHealthyDistribution:
    mean: np.ndarray      # (H, W)
    variance: np.ndarray  # (H, W), unbiased (N - 1 normalization)
    centered: np.ndarray  # (D, N), column i = flatten(x_i) - flatten(mean)
    n: int

    @property
    def shape(self) -> tuple:
        return self.mean.shape

    @property
    def d(self) -> int:
        return self.mean.size


def summarize(stack: np.ndarray) -> PseudoHealthyDistribution:
    """Condense an (N, H, W) reconstruction stack into mean, variance, and factor.

    Uses a two-pass mean-then-center computation; the centered matrix is the
    transposed view of the per-image deviations, so each column is contiguous.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError(f"expected an (N, H, W) stack, got shape {stack.shape}")
    n = stack.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 reconstructions for covariance, got {n}")
    if not np.all(np.isfinite(stack)):
        raise ValueError("stack contains NaN or Inf values")
    mean = stack.mean(axis=0)
    deviations = stack - mean
    variance = np.einsum("nhw,nhw->hw", deviations, deviations) / (n - 1)
    centered = deviations.reshape(n, -1).T  # (D, N), F-ordered: columns contiguous
    return PseudoHealthyDistribution(mean=mean, variance=variance,
                                     centered=centered, n=n)
