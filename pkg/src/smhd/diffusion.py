"""Closed-form diffusion forward process and reconstruction-stack sampling.

The forward process corrupts an image x0 with scheduled noise,
x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, where abar_t is the
cumulative product of (1 - beta_s). The noise predictor itself is pluggable:
the single-step denoising math and the single-shot x0 estimate take the
predicted noise as data, and reconstruction is abstracted behind the
:data:`Reconstructor` callable contract so stacks can be built from any
model, including the synthetic oracles in :mod:`smhd.phantom`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .volume import as_image


class ReconstructionError(RuntimeError):
    """Raised when a reconstructor fails; carries the failing stack index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"reconstruction {index} failed: {message}")
        self.index = index


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process constants: betas and their cumulative alpha-bar products."""

    betas: np.ndarray       # (T,) each in (0, 1)
    alpha_bars: np.ndarray  # (T,) strictly decreasing, in (0, 1)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        abars = np.asarray(self.alpha_bars, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1 or abars.shape != betas.shape:
            raise ValueError("betas and alpha_bars must be 1D arrays of equal length >= 1")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(abars) >= 0) or abars[0] >= 1 or abars[-1] <= 0:
            raise ValueError("alpha_bars must be strictly decreasing within (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", abars)

    @property
    def t_max(self) -> int:
        return int(self.betas.size)

    def alpha_bar(self, t: int) -> float:
        """abar_t for 1-indexed t; abar_0 is defined as 1."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def _check_t(self, t: int):
        if not 1 <= t <= self.t_max:
            raise ValueError(f"timestep {t} outside [1, {self.t_max}]")


def make_linear_schedule(t_max: int, beta_start: float = 1e-4,
                         beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule inclusive of both endpoints."""
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, t_max)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)


# ---------------------------------------------------------------------------
# Simplex-style gradient noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimplexParams:
    """Multi-octave gradient-noise settings; equal seeds reproduce equal fields."""

    octaves: int = 6
    persistence: float = 0.8
    lacunarity: float = 2.0
    base_frequency: float = 1.0 / 64.0
    seed: int = 0

    def __post_init__(self):
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if not 0 < self.persistence <= 1:
            raise ValueError("persistence must be in (0, 1]")
        if self.lacunarity <= 1:
            raise ValueError("lacunarity must be > 1")
        if self.base_frequency <= 0:
            raise ValueError("base_frequency must be positive")


_F2 = 0.5 * (np.sqrt(3.0) - 1.0)   # skew factor for the 2D simplex lattice
_G2 = (3.0 - np.sqrt(3.0)) / 6.0   # unskew factor
_GRADS2 = np.array(
    [(1, 1), (-1, 1), (1, -1), (-1, -1),
     (1, 0), (-1, 0), (0, 1), (0, -1)],
    dtype=np.float64,
)


def _grad_dot(perm: np.ndarray, ix: np.ndarray, iy: np.ndarray,
              dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    gi = perm[(ix + perm[iy & 255]) & 255] & 7
    g = _GRADS2[gi]
    return g[..., 0] * dx + g[..., 1] * dy


def _simplex2(x: np.ndarray, y: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Single-octave 2D simplex gradient noise on arbitrary coordinate arrays."""
    s = (x + y) * _F2
    i = np.floor(x + s).astype(np.int64)
    j = np.floor(y + s).astype(np.int64)
    t = (i + j) * _G2
    x0 = x - (i - t)
    y0 = y - (j - t)

    # offsets of the middle simplex corner: (1,0) in the lower triangle, (0,1) above
    upper = x0 > y0
    i1 = np.where(upper, 1, 0)
    j1 = np.where(upper, 0, 1)

    x1 = x0 - i1 + _G2
    y1 = y0 - j1 + _G2
    x2 = x0 - 1.0 + 2.0 * _G2
    y2 = y0 - 1.0 + 2.0 * _G2

    value = np.zeros_like(x0)
    for cx, cy, ox, oy in ((x0, y0, 0, 0), (x1, y1, i1, j1), (x2, y2, 1, 1)):
        att = 0.5 - cx * cx - cy * cy
        np.maximum(att, 0.0, out=att)
        att *= att
        value += att * att * _grad_dot(perm, i + ox, j + oy, cx, cy)
    return value


def simplex_noise(h: int, w: int, params: SimplexParams = SimplexParams()) -> np.ndarray:
    """Multi-octave 2D simplex noise, standardized per image to mean 0, variance 1.

    Octave k is sampled at pixel coordinates scaled by
    base_frequency * lacunarity**k and weighted by persistence**k; all octaves
    share one seeded gradient permutation.
    """
    if h < 1 or w < 1:
        raise ValueError(f"field shape must be positive, got {h}x{w}")
    perm = np.random.default_rng(int(params.seed) & (2**64 - 1)).permutation(256).astype(np.int64)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w), dtype=np.float64)
    amplitude = 1.0
    frequency = params.base_frequency
    for _ in range(params.octaves):
        field += amplitude * _simplex2(xs * frequency, ys * frequency, perm)
        amplitude *= params.persistence
        frequency *= params.lacunarity
    std = field.std()
    if std == 0.0:
        return np.zeros((h, w), dtype=np.float64)
    return (field - field.mean()) / std


# ---------------------------------------------------------------------------
# Forward / backward process math
# ---------------------------------------------------------------------------

def forward_noise(x0: np.ndarray, t: int, sched: NoiseSchedule,
                  eps: np.ndarray) -> np.ndarray:
    """Noised state x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    x0 = as_image(x0)
    eps = as_image(eps)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != image shape {x0.shape}")
    sched._check_t(t)
    abar = sched.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def simple_loss(eps: np.ndarray, eps_hat: np.ndarray) -> float:
    """Squared error between true and predicted noise, summed over pixels."""
    eps = as_image(eps)
    eps_hat = as_image(eps_hat)
    if eps.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch {eps.shape} vs {eps_hat.shape}")
    diff = eps - eps_hat
    return float(np.sum(diff * diff))


def denoise_step(xt: np.ndarray, t: int, eps_hat: np.ndarray,
                 sched: NoiseSchedule, z: Optional[np.ndarray] = None) -> np.ndarray:
    """One ancestral denoising step from x_t to x_{t-1}.

    The step mean is (xt - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t)
    and the posterior variance is (1 - abar_{t-1}) / (1 - abar_t) * beta_t with
    abar_0 := 1, so the t=1 step is deterministic and ``z`` is ignored there.
    """
    xt = as_image(xt)
    eps_hat = as_image(eps_hat)
    if eps_hat.shape != xt.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != image shape {xt.shape}")
    beta = sched.beta(t)
    abar = sched.alpha_bar(t)
    mu = (xt - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(1.0 - beta)
    if t == 1:
        return mu
    if z is None:
        raise ValueError(f"z is required for t={t} > 1")
    z = as_image(z)
    if z.shape != xt.shape:
        raise ValueError(f"z shape {z.shape} != image shape {xt.shape}")
    sigma2 = (1.0 - sched.alpha_bar(t - 1)) / (1.0 - abar) * beta
    return mu + np.sqrt(sigma2) * z


def estimate_x0(xt: np.ndarray, t: int, eps_hat: np.ndarray,
                sched: NoiseSchedule) -> np.ndarray:
    """Single-shot x0 estimate (xt - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)."""
    xt = as_image(xt)
    eps_hat = as_image(eps_hat)
    if eps_hat.shape != xt.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != image shape {xt.shape}")
    sched._check_t(t)
    abar = sched.alpha_bar(t)
    return (xt - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)


# ---------------------------------------------------------------------------
# Reconstruction stacks
# ---------------------------------------------------------------------------

#: Contract for reconstruction backends: ``rec(xt, t, sched, seed)`` returns one
#: reconstruction of the same shape as ``xt`` with finite values. Stochastic
#: implementations must derive all randomness from the explicit seed.
Reconstructor = Callable[[np.ndarray, int, NoiseSchedule, int], np.ndarray]


def _derived_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(index,))


def sample_stack(rec: Reconstructor, x0: np.ndarray, t_test: int, n: int,
                 sched: NoiseSchedule, noise_kind: str = "simplex", seed: int = 0,
                 simplex_params: Optional[SimplexParams] = None) -> np.ndarray:
    """Draw n reconstructions of x0, renoising independently for each.

    For draw i, fresh noise is generated from a seed derived from (seed, i),
    x_t is formed at t_test, and the reconstructor is called with its own
    derived seed, so stacks are reproducible and order-independent.
    """
    x0 = as_image(x0)
    if n < 2:
        raise ValueError(f"need at least 2 reconstructions, got {n}")
    if noise_kind not in ("gaussian", "simplex"):
        raise ValueError(f"unknown noise_kind {noise_kind!r}")
    sched._check_t(t_test)
    h, w = x0.shape
    base = simplex_params if simplex_params is not None else SimplexParams()
    stack = np.empty((n, h, w), dtype=np.float64)
    for i in range(n):
        noise_word, rec_word = _derived_seed(seed, i).generate_state(2, dtype=np.uint64)
        if noise_kind == "gaussian":
            eps = np.random.default_rng(noise_word).standard_normal((h, w))
        else:
            eps = simplex_noise(h, w, SimplexParams(
                octaves=base.octaves, persistence=base.persistence,
                lacunarity=base.lacunarity, base_frequency=base.base_frequency,
                seed=int(noise_word)))
        xt = forward_noise(x0, t_test, sched, eps)
        try:
            out = np.asarray(rec(xt, t_test, sched, int(rec_word)), dtype=np.float64)
        except Exception as exc:
            raise ReconstructionError(i, str(exc)) from exc
        if out.shape != x0.shape:
            raise ReconstructionError(i, f"shape {out.shape} != input shape {x0.shape}")
        if not np.all(np.isfinite(out)):
            raise ReconstructionError(i, "non-finite values in reconstruction")
        stack[i] = out
    return stack
