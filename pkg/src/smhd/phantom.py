"""Synthetic 2D phantoms, lesion injection, and oracle reconstructors.

Phantoms are elliptical "brain" regions with band-limited texture on a zero
background. Lesions are smooth-edged additive ellipses with exact ground
truth. Oracle reconstructors return the known healthy image plus a correlated
low-frequency bias field (optionally coupled across the vertical midline) and
white pixel noise, emulating the spatially structured imperfections of a
generative reconstruction model without training one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .diffusion import Reconstructor, SimplexParams, simplex_noise
from .volume import as_image, as_mask


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    texture_frequency: float = 1.0 / 16.0
    texture_amplitude: float = 0.15
    lesion_radius_range: tuple = (3.0, 9.0)
    lesion_contrast_range: tuple = (0.25, 0.5)
    ellipse_axes_fraction: tuple = (0.8, 0.65)

    def __post_init__(self):
        if self.size < 16:
            raise ValueError("phantom size must be >= 16")
        for lo, hi in (self.lesion_radius_range, self.lesion_contrast_range):
            if not 0 < lo <= hi:
                raise ValueError("ranges must be nonempty and positive")


@dataclass(frozen=True)
class PerturbationConfig:
    bias_field_frequency: float = 1.0 / 32.0
    bias_amplitude: float = 0.05
    pixel_noise_sigma: float = 0.01
    symmetry_coupling: float = 0.5

    def __post_init__(self):
        if self.bias_amplitude < 0 or self.pixel_noise_sigma < 0:
            raise ValueError("amplitudes must be nonnegative")
        if not 0 <= self.symmetry_coupling <= 1:
            raise ValueError("symmetry_coupling must lie in [0, 1]")


#: Octave settings for phantom texture: band-limited and smooth.
_TEXTURE_OCTAVES = 3
#: Octave settings for reconstruction bias fields: genuinely low-frequency, so
#: repeated draws span a low-dimensional family the covariance can learn.
_BIAS_OCTAVES = 2

# sigmoid width (pixels) of the lesion edge falloff
_EDGE_WIDTH = 1.5
# support ends this many pixels outside the nominal boundary; the sigmoid is
# shifted and rescaled to reach exactly zero there
_EDGE_SUPPORT_PX = 4.5


def _seed_words(seed: int, count: int) -> np.ndarray:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1)).generate_state(
        count, dtype=np.uint64)


def gen_healthy(cfg: PhantomConfig, seed: int) -> tuple:
    """Healthy phantom: textured ellipse interior on a zero background.

    Returns (image, brain_mask); deterministic in the seed.
    """
    n = cfg.size
    half = n / 2.0
    cy = cx = (n - 1) / 2.0
    ay = cfg.ellipse_axes_fraction[0] * half
    ax = cfg.ellipse_axes_fraction[1] * half
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    brain = ((ys - cy) / ay) ** 2 + ((xs - cx) / ax) ** 2 <= 1.0
    texture_seed = int(_seed_words(seed, 1)[0])
    texture = simplex_noise(n, n, SimplexParams(
        octaves=_TEXTURE_OCTAVES, base_frequency=cfg.texture_frequency,
        seed=texture_seed))
    img = np.clip(0.5 + cfg.texture_amplitude * texture, 0.0, 1.0)
    img[~brain] = 0.0
    return img, brain


def inject_lesion(img: np.ndarray, brain_mask: np.ndarray, cfg: PhantomConfig,
                  seed: int) -> tuple:
    """Add one smooth-edged elliptical lesion fully inside the brain mask.

    The additive contrast is sampled from the configured range with random
    sign; the ground-truth mask covers pixels receiving more than half the
    peak contrast. Returns (lesioned image, lesion_mask).

    Raises ValueError when no placement fits after many attempts (brain too
    small for the minimum radius).
    """
    img = as_image(img)
    brain_mask = as_mask(brain_mask)
    if not brain_mask.any():
        raise ValueError("brain mask is empty")
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    rng = np.random.default_rng(_seed_words(seed, 1))
    r_lo, r_hi = cfg.lesion_radius_range
    c_lo, c_hi = cfg.lesion_contrast_range
    rows, cols = np.nonzero(brain_mask)

    for _ in range(500):
        rx = rng.uniform(r_lo, r_hi)
        ry = rng.uniform(r_lo, r_hi)
        theta = rng.uniform(0.0, np.pi)
        contrast = rng.uniform(c_lo, c_hi) * (1.0 if rng.random() < 0.5 else -1.0)
        pick = rng.integers(0, rows.size)
        cy, cx = float(rows[pick]), float(cols[pick])

        cos_t, sin_t = np.cos(theta), np.sin(theta)
        u = cos_t * (xs - cx) + sin_t * (ys - cy)
        v = -sin_t * (xs - cx) + cos_t * (ys - cy)
        rho = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
        # first-order signed distance (pixels) to the nominal ellipse boundary
        grad = np.sqrt((u / rx**2) ** 2 + (v / ry**2) ** 2)
        s = np.divide((rho - 1.0) * rho, grad, out=np.full_like(rho, -min(rx, ry)),
                      where=grad > 0)
        support = s < _EDGE_SUPPORT_PX
        if not np.all(brain_mask[support]):
            continue
        profile = np.zeros_like(rho)
        sig_cut = 1.0 / (1.0 + np.exp(_EDGE_SUPPORT_PX / _EDGE_WIDTH))
        sig = 1.0 / (1.0 + np.exp(s[support] / _EDGE_WIDTH))
        profile[support] = (sig - sig_cut) / (1.0 - sig_cut)
        added = contrast * profile
        lesion_mask = np.abs(added) > np.abs(added).max() / 2.0
        if not lesion_mask.any():
            continue
        lesioned = np.clip(img + added, 0.0, 1.0)
        return lesioned, lesion_mask

    raise ValueError("could not place a lesion inside the brain mask")


def _symmetrized(field: np.ndarray, coupling: float) -> np.ndarray:
    """Blend a field with its left-right symmetrization.

    coupling 0 keeps the field unchanged; coupling 1 yields an exactly
    mirror-symmetric field.
    """
    if coupling == 0.0:
        return field
    symmetric = 0.5 * (field + field[:, ::-1])
    return (1.0 - coupling) * field + coupling * symmetric


def make_oracle_reconstructor(healthy: np.ndarray,
                              pert: PerturbationConfig) -> Reconstructor:
    """Reconstructor returning the healthy image plus seeded imperfections.

    Each call adds a fresh low-frequency bias field (blended toward left-right
    symmetry by the coupling factor) and white pixel noise, clamped to [0, 1].
    Imperfections are confined to the support of the healthy image: the empty
    background is reconstructed faithfully, as a model trained on
    skull-stripped data would. The noised input is deliberately ignored: the
    oracle stands in for a model that reconstructs healthy anatomy regardless
    of the corruption.
    """
    healthy = as_image(healthy)
    h, w = healthy.shape
    support = healthy > 0.0

    def reconstruct(xt: np.ndarray, t: int, sched, seed: int) -> np.ndarray:
        words = _seed_words(seed, 2)
        error = np.zeros((h, w))
        if pert.bias_amplitude > 0.0:
            bias = simplex_noise(h, w, SimplexParams(
                octaves=_BIAS_OCTAVES, base_frequency=pert.bias_field_frequency,
                seed=int(words[0])))
            error += pert.bias_amplitude * _symmetrized(bias, pert.symmetry_coupling)
        if pert.pixel_noise_sigma > 0.0:
            noise = np.random.default_rng(words[1]).standard_normal((h, w))
            error += pert.pixel_noise_sigma * noise
        error[~support] = 0.0
        return np.clip(healthy + error, 0.0, 1.0)

    return reconstruct


@dataclass
class PhantomCase:
    image: np.ndarray         # lesioned input
    lesion_mask: np.ndarray   # ground truth
    brain_mask: np.ndarray
    healthy: np.ndarray       # lesion-free image the oracle reconstructs
    reconstructor: Reconstructor
    seed: int


def gen_dataset(cfg: PhantomConfig, pert: PerturbationConfig, n_cases: int,
                seed: int) -> List[PhantomCase]:
    """Generate independent seeded cases; per-case seeds derive from (seed, i)."""
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    cases = []
    for i in range(n_cases):
        ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(i,))
        healthy_seed, lesion_seed = (int(x) for x in ss.generate_state(2, dtype=np.uint64))
        healthy, brain = gen_healthy(cfg, healthy_seed)
        image, lesion_mask = inject_lesion(healthy, brain, cfg, lesion_seed)
        cases.append(PhantomCase(
            image=image, lesion_mask=lesion_mask, brain_mask=brain,
            healthy=healthy, reconstructor=make_oracle_reconstructor(healthy, pert),
            seed=lesion_seed))
    return cases


def gen_population(cfg: PhantomConfig, count: int, seed: int) -> np.ndarray:
    """Stack of healthy phantoms used as a population reference distribution."""
    if count < 2:
        raise ValueError("a population needs at least 2 images")
    images = np.empty((count, cfg.size, cfg.size), dtype=np.float64)
    for i in range(count):
        ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                    spawn_key=(i, 1))
        images[i] = gen_healthy(cfg, int(ss.generate_state(1, dtype=np.uint64)[0]))[0]
    return images
