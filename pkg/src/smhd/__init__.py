"""Anomaly scoring from reconstruction distributions.

Builds pseudo-healthy pixel distributions from repeated stochastic
reconstructions of an input image, scores anomalies with pixel-space
Mahalanobis distance maps (diagonal and exact low-rank full covariance)
composed with inverted-SSIM maps, and evaluates segmentations with AUPRC,
best-achievable Dice, and permutation tests.
"""

from .diffusion import (
    NoiseSchedule,
    ReconstructionError,
    Reconstructor,
    SimplexParams,
    denoise_step,
    estimate_x0,
    forward_noise,
    make_linear_schedule,
    sample_stack,
    simple_loss,
    simplex_noise,
)
from .formats import VolumeFormatError, export_pgm, read_volume, write_volume
from .mahalanobis import (
    MhdResult,
    dense_mhd_oracle,
    mhd_diag_map,
    mhd_full_map,
    smooth_mhd,
    woodbury_solve,
)
from .metrics import (
    EvalResult,
    auprc,
    best_dice,
    dice,
    evaluate,
    paired_permutation_test,
    permutation_test,
)
from .phantom import (
    PerturbationConfig,
    PhantomCase,
    PhantomConfig,
    gen_dataset,
    gen_healthy,
    gen_population,
    inject_lesion,
    make_oracle_reconstructor,
)
from .pseudostats import PseudoHealthyDistribution, summarize
from .scoring import ScoredCase, ScoringConfig, binarize, population_cm_score, score_case
from .ssim import SsimParams, s_mean, ssim_map
from .volume import flatten, gaussian_filter, reshape

__version__ = "0.1.0"
