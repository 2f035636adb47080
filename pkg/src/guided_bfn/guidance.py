"""Property-guided BFN sampling with uncertainty-weighted gradients.

The predictor's ensemble spread is decomposed into aleatoric and epistemic
variance; the predictive log-likelihood gradient, evaluated at the output
model's predicted clean molecule, is injected into both Bayesian updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import _faults
from .bfn import LOG_FLOOR, OutputModel, continuous_update, discrete_update, log_probs, observe, row_softmax, start_state
from .errors import DimensionError, DomainError, InvalidStateError, SamplingError, ShapeMismatchError
from .rng import SeededStream, as_stream
from .state import AccuracySchedule, ContinuousParamState, DiscreteParamState, HybridMolecule, NoisyObservation, PocketContext, check_simplex_rows
from .trajectory import TrajectoryRecord, mean_entropy

DEFAULT_LAMBDA = 40.0


class PropertyPredictor(Protocol):
    def predict(self, m: HybridMolecule, pocket: PocketContext) -> list[tuple[float, float]]: ...

    def grad_coords(self, m: HybridMolecule, pocket: PocketContext, target: float, objective: str = ...) -> np.ndarray: ...

    def grad_types(self, e_v: np.ndarray, coords: np.ndarray, pocket: PocketContext, target: float, objective: str = ...) -> np.ndarray: ...


@dataclass(frozen=True)
class PropertyPrediction:
    mean: float
    aleatoric: float
    epistemic: float
    total: float
    members: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class GuidanceConfig:
    lambda_coords: float = DEFAULT_LAMBDA
    lambda_types: float = DEFAULT_LAMBDA
    target_label: float | None = None
    uncertainty_scaling: bool = True
    gumbel_temperature: float = 0.5
    ensemble_size: int = 8
    uncertainty_component: str = "total"
    variance_cap: float | None = None
    objective: str = "log_likelihood"

    def __post_init__(self):
        if self.lambda_coords < 0:
            raise DomainError("lambda_coords must be nonnegative")
        if self.lambda_types < 0:
            raise DomainError("lambda_types must be nonnegative")
        if not self.gumbel_temperature > 0:
            raise DomainError("gumbel_temperature must be positive")
        if self.ensemble_size < 1:
            raise DimensionError("ensemble_size must be >= 1")
        if self.uncertainty_component not in ("total", "epistemic"):
            raise ValueError(f"uncertainty_component must be 'total' or 'epistemic', got {self.uncertainty_component!r}")
        if self.variance_cap is not None and not self.variance_cap > 0:
            raise DomainError("variance_cap must be positive when set")
        if self.objective not in ("log_likelihood", "maximize_mean"):
            raise ValueError(f"objective must be 'log_likelihood' or 'maximize_mean', got {self.objective!r}")


def variance_decompose(members: Sequence[tuple[float, float]]) -> PropertyPrediction:
    """Law-of-total-variance split of an ensemble of Gaussian predictions.

    Epistemic variance is the population variance of member means.
    """
    if len(members) == 0:
        raise DimensionError("variance_decompose needs at least one member")
    mu = np.array([m for m, _ in members], dtype=float)
    var = np.array([v for _, v in members], dtype=float)
    if np.any(var < 0):
        raise DomainError("member variances must be nonnegative")
    mean = float(mu.mean())
    aleatoric = float(var.mean())
    epistemic = float(np.mean((mu - mean) ** 2))
    return PropertyPrediction(mean, aleatoric, epistemic, aleatoric + epistemic, tuple((float(a), float(b)) for a, b in members))


def _check_sigma2(sigma2: float) -> None:
    if not sigma2 > 0:
        raise DomainError(f"variance must be positive, got {sigma2}")


def nll_loss(y: float, mu: float, sigma2: float) -> float:
    """Gaussian negative log-likelihood without the ``log(2 pi) / 2`` constant."""
    _check_sigma2(sigma2)
    return 0.5 * math.log(sigma2) + (mu - y) ** 2 / (2.0 * sigma2)


def nll_grad(y: float, mu: float, sigma2: float) -> tuple[float, float]:
    """Derivatives of :func:`nll_loss` w.r.t. ``mu`` and ``sigma2``."""
    _check_sigma2(sigma2)
    r = mu - y
    return r / sigma2, 0.5 / sigma2 - r**2 / (2.0 * sigma2**2)


def beta_nll_loss(y: float, mu: float, sigma2: float, beta: float) -> float:
    """NLL weighted by ``sigma2**beta``; the weight is treated as a constant."""
    _check_sigma2(sigma2)
    if beta < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    return sigma2**beta * nll_loss(y, mu, sigma2)


def beta_nll_grad(y: float, mu: float, sigma2: float, beta: float) -> tuple[float, float]:
    """Gradient of :func:`beta_nll_loss` with the ``sigma2**beta`` weight detached."""
    if beta < 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    weight = sigma2**beta
    d_mu, d_var = nll_grad(y, mu, sigma2)
    return weight * d_mu, weight * d_var


def guidance_log_likelihood(pred: PropertyPrediction, target: float) -> float:
    """``log N(target; mean, total)``, the per-step guidance score."""
    if not pred.total > 0:
        raise DomainError(f"degenerate predictive variance {pred.total}")
    return -0.5 * math.log(2.0 * math.pi * pred.total) - (target - pred.mean) ** 2 / (2.0 * pred.total)


def relax_types(v_hat: np.ndarray, tau: float, rng: SeededStream) -> np.ndarray:
    """Gumbel-softmax relaxation of categorical rows at temperature ``tau``."""
    if not tau > 0:
        raise DomainError("temperature must be positive")
    v_hat = np.asarray(v_hat, dtype=float)
    check_simplex_rows(v_hat, "v_hat")
    if np.any(v_hat.max(axis=1) <= 0):
        raise InvalidStateError("v_hat has an all-zero row")
    rng = as_stream(rng)
    g = rng.gumbel(v_hat.shape)
    return row_softmax((np.log(np.maximum(v_hat, LOG_FLOOR)) + g) / tau)


def variance_scale(pred: PropertyPrediction, config: GuidanceConfig) -> float:
    if not config.uncertainty_scaling:
        return 1.0
    scale = pred.total if config.uncertainty_component == "total" else pred.epistemic
    if config.variance_cap is not None:
        scale = min(scale, config.variance_cap)
    return float(scale)


def guided_continuous_kernel(
    theta_prev: ContinuousParamState,
    y: NoisyObservation,
    grad: np.ndarray,
    variance_scale: float,
    lambda_coords: float,
    alpha: float,
) -> ContinuousParamState:
    """Unguided Gaussian update plus ``variance_scale * lambda / rho * grad``."""
    if np.shape(grad) != theta_prev.mean.shape:
        raise ShapeMismatchError(f"gradient shape {np.shape(grad)} != mean shape {theta_prev.mean.shape}")
    if variance_scale < 0 or lambda_coords < 0:
        raise DomainError("variance_scale and lambda_coords must be nonnegative")
    base = continuous_update(theta_prev, y, alpha)
    weight = variance_scale * lambda_coords
    if weight == 0.0:
        return base
    return ContinuousParamState(base.mean + (weight / base.precision) * np.asarray(grad, float), base.precision)


def guided_discrete_kernel(
    theta_prev: DiscreteParamState,
    y: NoisyObservation,
    grad: np.ndarray,
    variance_scale: float,
    lambda_types: float,
) -> DiscreteParamState:
    """Categorical update tilted by ``exp(variance_scale * lambda * grad)``."""
    if np.shape(grad) != theta_prev.probs.shape:
        raise ShapeMismatchError(f"gradient shape {np.shape(grad)} != belief shape {theta_prev.probs.shape}")
    if y.channel != "types" or y.payload.shape != theta_prev.probs.shape:
        raise ShapeMismatchError("guided discrete kernel needs a types-channel observation of matching shape")
    if variance_scale < 0 or lambda_types < 0:
        raise DomainError("variance_scale and lambda_types must be nonnegative")
    weight = variance_scale * lambda_types
    if weight == 0.0:
        return discrete_update(theta_prev, y)
    h = weight * np.asarray(grad, float)
    if "zeta_v_sign" in _faults.active:
        h = -h
    return DiscreteParamState(row_softmax(y.payload + log_probs(theta_prev) + h))


def resolve_target(config: GuidanceConfig, default: float | None) -> float:
    if config.target_label is not None:
        return float(config.target_label)
    if default is None:
        raise ValueError("no target_label configured and no default available")
    return float(default)


def cbyg_sample(
    model: OutputModel,
    predictor: PropertyPredictor,
    pocket: PocketContext,
    schedule: AccuracySchedule,
    config: GuidanceConfig,
    rng: SeededStream,
    n_atoms: int | None = None,
    default_target: float | None = None,
) -> tuple[HybridMolecule, list[TrajectoryRecord]]:
    """Guided BFN sampling loop.

    Per step: predict the clean molecule, draw sender observations, score the
    prediction with the ensemble, take log-likelihood gradients at the predicted
    coordinates and at a Gumbel-softmax relaxation of the predicted types, then apply
    the two guided kernels. With both guidance scales at zero the chain is
    identical to :func:`guided_bfn.bfn.unconditional_sample` on the same seed.
    """
    rng = as_stream(rng)
    target = resolve_target(config, default_target)
    n_atoms = n_atoms if n_atoms is not None else getattr(model, "n_atoms")
    theta_x, theta_v = start_state(n_atoms, schedule, pocket)
    times = schedule.times
    records: list[TrajectoryRecord] = []
    for i in range(schedule.n_steps):
        step = i + 1
        try:
            out = model(theta_x, theta_v, pocket, float(times[i]))
            if out.coords.shape != theta_x.mean.shape or out.types.shape != theta_v.probs.shape:
                raise ShapeMismatchError("output model returned a molecule of the wrong shape")
            alpha_x, alpha_v = schedule.alpha_coords[i], schedule.alpha_types[i]
            y_x, y_v = observe(out, alpha_x, alpha_v, rng)
            pred = variance_decompose(predictor.predict(out, pocket))
            score = guidance_log_likelihood(pred, target)
            e_v = relax_types(out.types, config.gumbel_temperature, rng)
            g_x = np.asarray(predictor.grad_coords(out, pocket, target, config.objective))
            g_v = np.asarray(predictor.grad_types(e_v, out.coords, pocket, target, config.objective))
            if not (np.all(np.isfinite(g_x)) and np.all(np.isfinite(g_v))):
                raise InvalidStateError("predictor returned non-finite gradients")
            scale = variance_scale(pred, config)
            theta_x = guided_continuous_kernel(theta_x, y_x, g_x, scale, config.lambda_coords, alpha_x)
            theta_v = guided_discrete_kernel(theta_v, y_v, g_v, scale, config.lambda_types)
        except SamplingError:
            raise
        except Exception as exc:
            raise SamplingError(str(exc), step) from exc
        records.append(
            TrajectoryRecord(
                step=step,
                t=float(times[i]),
                rho=theta_x.precision,
                theta_x_norm=float(np.linalg.norm(theta_x.mean)),
                theta_v_entropy=mean_entropy(theta_v.probs),
                rng_counter=rng.counter,
                guidance_score=score,
                predicted_mean=pred.mean,
                aleatoric=pred.aleatoric,
                epistemic=pred.epistemic,
                total_variance=pred.total,
                grad_coords_norm=float(np.linalg.norm(g_x)),
                grad_types_norm=float(np.linalg.norm(g_v)),
                theta_x=theta_x.mean,
                theta_v=theta_v.probs,
                x_hat=out.coords,
                v_hat=out.types,
            )
        )
    try:
        final = model(theta_x, theta_v, pocket, float(times[-1]))
    except Exception as exc:
        raise SamplingError(str(exc), schedule.n_steps) from exc
    return final, records
