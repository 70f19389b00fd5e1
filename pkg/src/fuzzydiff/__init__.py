"""Diffusion sampling with fuzzy per-pixel image conditioning.

The package couples a plain ancestral diffusion sampler with two things the
trained-network version of this pipeline cannot offer: exact analytic noise
oracles (so sampled distributions can be checked against closed-form truth)
and a per-pixel anomaly map derived from reconstruction discrepancies, which
feeds back into the sampler as a conditioning weight map.
"""

from .config import ConfigError, build_model, build_schedule, load_config
from .core import Grid, RngStream, ValidationError, clamp_unit, grid_stats, randn_grid
from .denoiser import (
    EpsilonModel,
    GaussianFieldModel,
    GmmPixelModel,
    gaussian_predict,
    gmm_predict,
    log_marginal,
)
from .gridio import read_grid, write_grid, write_pgm, write_ppm
from .harness import (
    DegradationRecord,
    DegradeParams,
    ExperimentConfig,
    ExperimentReport,
    degrade,
    ks_critical,
    ks_two_sample,
    masked_mse,
    moment_error,
    pixel_auc,
    run_correction_experiment,
)
from .projection import (
    AttentionMap,
    ValidationStats,
    attention_from_discrepancies,
    attention_map,
    discrepancy,
    project_reconstruct,
    validation_stats,
    weight_from_attention,
)
from .sampler import (
    FuzzySamplerConfig,
    WeightMap,
    ancestral_sample,
    forward_mean,
    forward_sample,
    fuzzy_fuse,
    fuzzy_sample,
    renoise,
    reverse_mean,
    reverse_step,
)
from .schedule import NoiseSchedule, linear_schedule, posterior_mean_coeffs

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "load_config",
    "build_schedule",
    "build_model",
    "Grid",
    "RngStream",
    "ValidationError",
    "clamp_unit",
    "grid_stats",
    "randn_grid",
    "read_grid",
    "write_grid",
    "write_pgm",
    "write_ppm",
    "NoiseSchedule",
    "linear_schedule",
    "posterior_mean_coeffs",
    "EpsilonModel",
    "GaussianFieldModel",
    "GmmPixelModel",
    "gaussian_predict",
    "gmm_predict",
    "log_marginal",
    "WeightMap",
    "FuzzySamplerConfig",
    "forward_sample",
    "forward_mean",
    "reverse_step",
    "reverse_mean",
    "ancestral_sample",
    "fuzzy_fuse",
    "fuzzy_sample",
    "renoise",
    "ValidationStats",
    "AttentionMap",
    "project_reconstruct",
    "discrepancy",
    "validation_stats",
    "attention_map",
    "attention_from_discrepancies",
    "weight_from_attention",
    "DegradeParams",
    "DegradationRecord",
    "degrade",
    "ks_two_sample",
    "ks_critical",
    "moment_error",
    "pixel_auc",
    "masked_mse",
    "ExperimentConfig",
    "ExperimentReport",
    "run_correction_experiment",
]
