"""Gradient-guided Bayesian Flow Network sampling on hybrid coordinate/type states."""

from .bfn import unconditional_sample
from .diffusion import DiffusionSchedule, targetopt_sample
from .guidance import GuidanceConfig, cbyg_sample
from .rng import SeededStream
from .state import HybridMolecule, PocketContext, build_schedule
from .toy import attractor_denoiser, attractor_output_model, make_toy_world, toy_ensemble_predictor

__version__ = "0.1.0"

__all__ = [
    "DiffusionSchedule",
    "GuidanceConfig",
    "HybridMolecule",
    "PocketContext",
    "SeededStream",
    "attractor_denoiser",
    "attractor_output_model",
    "build_schedule",
    "cbyg_sample",
    "make_toy_world",
    "targetopt_sample",
    "toy_ensemble_predictor",
    "unconditional_sample",
]
