"""Building samplers from a run configuration and executing single chains."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .bfn import unconditional_sample
from .config import RunConfig
from .diffusion import targetopt_sample
from .errors import SamplingError
from .guidance import cbyg_sample
from .rng import SeededStream
from .state import HybridMolecule
from .toy import (
    ToyWorld,
    attractor_denoiser,
    attractor_output_model,
    best_achievable_score,
    combined_score,
    toy_ensemble_predictor,
    world_to_json,
)
from .trajectory import TrajectoryRecord


@dataclass
class Components:
    world: ToyWorld
    predictor: object
    target: float


def build_components(cfg: RunConfig) -> Components:
    world = cfg.world.build()
    predictor = toy_ensemble_predictor(world, cfg.guidance.ensemble_size, cfg.predictor.seed, cfg.predictor.jitter)
    target = cfg.guidance.target_label if cfg.guidance.target_label is not None else best_achievable_score(world)
    return Components(world, predictor, float(target))


def world_digest(world: ToyWorld) -> str:
    return hashlib.sha256(world_to_json(world).encode("utf-8")).hexdigest()


def terminal_score(mol: HybridMolecule, world: ToyWorld) -> float:
    """Combined score of the argmax-typed molecule, the quantity compared across arms."""
    return combined_score(mol.concrete(), world.pocket, world.params)[0]


def run_chain(cfg: RunConfig, index: int, parts: Components | None = None) -> tuple[HybridMolecule, list[TrajectoryRecord]]:
    """Run chain ``index`` with seed ``base_seed + index``."""
    parts = parts or build_components(cfg)
    world = parts.world
    rng = SeededStream.for_chain(cfg.base_seed, index)
    try:
        if cfg.sampler == "bfn-unguided":
            return unconditional_sample(attractor_output_model(world), world.pocket, cfg.schedule.build(), rng)
        if cfg.sampler == "cbyg":
            return cbyg_sample(
                attractor_output_model(world),
                parts.predictor,
                world.pocket,
                cfg.schedule.build(),
                cfg.guidance,
                rng,
                default_target=parts.target,
            )
        schedule = cfg.diffusion.build(cfg.schedule.n_steps)
        return targetopt_sample(
            attractor_denoiser(world, schedule.n_steps),
            parts.predictor,
            world.pocket,
            schedule,
            cfg.guidance,
            cfg.sampler.split("-")[1],
            rng,
            delta=cfg.diffusion.delta,
            default_target=parts.target,
        )
    except SamplingError as exc:
        raise SamplingError(exc.detail, exc.step, chain=index) from (exc.__cause__ or exc)
