"""Unconditional Bayesian Flow Network machinery.

Sender distributions, Bayesian update functions in sampled and score-gradient
form, the Tweedie mean, and the n-step unconditional sampling loop. The receiver
distribution is never needed at generation time, so it has no code here.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np

from .errors import DomainError, InvalidStateError, SamplingError, ShapeMismatchError
from .rng import SeededStream, as_stream
from .state import (
    AccuracySchedule,
    ContinuousParamState,
    DiscreteParamState,
    HybridMolecule,
    NoisyObservation,
    PocketContext,
    is_one_hot,
    new_prior_state,
    one_hot,
)
from .trajectory import TrajectoryRecord, mean_entropy

LOG_FLOOR = 1e-30


class OutputModel(Protocol):
    """Deterministic map from the current belief to a predicted clean molecule."""

    def __call__(
        self, theta_x: ContinuousParamState, theta_v: DiscreteParamState, pocket: PocketContext, t: float
    ) -> HybridMolecule: ...


ScoreFunction = Callable[[np.ndarray], np.ndarray]


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (np.isfinite(alpha) and alpha > 0.0):
        raise DomainError(f"alpha must be positive, got {alpha}")
    return alpha


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeMismatchError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


def continuous_sender_sample(x: np.ndarray, alpha: float, rng: SeededStream) -> NoisyObservation:
    """Draw ``y ~ N(x, alpha^-1 I)``."""
    alpha = _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    rng = as_stream(rng)
    y = x + rng.normal(x.shape) / np.sqrt(alpha)
    return NoisyObservation(y, "coords", alpha)


def continuous_update(theta_prev: ContinuousParamState, y: NoisyObservation, alpha: float) -> ContinuousParamState:
    """Precision-weighted Gaussian update: ``rho += alpha``, mean moves toward ``y``."""
    alpha = _check_alpha(alpha)
    if y.channel != "coords":
        raise ShapeMismatchError("continuous update needs a coords-channel observation")
    _same_shape(theta_prev.mean, y.payload, "continuous_update")
    rho = theta_prev.precision + alpha
    mean = (theta_prev.mean * theta_prev.precision + y.payload * alpha) / rho
    return ContinuousParamState(mean, rho)


def tweedie_mean(z: np.ndarray, covariance_scale: float, score: np.ndarray) -> np.ndarray:
    """Posterior mean ``E[mu | z] = z + s * grad log p(z)`` for isotropic covariance ``s I``."""
    if not covariance_scale > 0:
        raise DomainError(f"covariance_scale must be positive, got {covariance_scale}")
    _same_shape(z, score, "tweedie_mean")
    return np.asarray(z, dtype=float) + covariance_scale * np.asarray(score, dtype=float)


def continuous_update_gradient_form(
    theta_prev: ContinuousParamState, x: np.ndarray, score: np.ndarray, alpha: float
) -> ContinuousParamState:
    """Score-form update: ``(alpha x + rho_prev theta + score) / rho``.

    Equal to :func:`continuous_update` when ``score = sqrt(alpha) * eps`` and
    ``y = x + eps / sqrt(alpha)``.
    """
    alpha = _check_alpha(alpha)
    _same_shape(theta_prev.mean, x, "continuous_update_gradient_form (x)")
    _same_shape(theta_prev.mean, score, "continuous_update_gradient_form (score)")
    rho = theta_prev.precision + alpha
    mean = (alpha / rho) * np.asarray(x) + (theta_prev.precision / rho) * theta_prev.mean + np.asarray(score) / rho
    return ContinuousParamState(mean, rho)


def discrete_sender_mean(e_x: np.ndarray, alpha: float) -> np.ndarray:
    k = e_x.shape[1]
    return alpha * (k * e_x - 1.0)


def discrete_sender_sample(e_x: np.ndarray, alpha: float, rng: SeededStream) -> NoisyObservation:
    """Draw ``y ~ N(alpha (K e_x - 1), alpha K I)`` for one-hot rows ``e_x``."""
    alpha = _check_alpha(alpha)
    e_x = np.asarray(e_x, dtype=float)
    if e_x.ndim != 2 or not is_one_hot(e_x):
        raise InvalidStateError("discrete sender needs one-hot rows")
    rng = as_stream(rng)
    k = e_x.shape[1]
    y = discrete_sender_mean(e_x, alpha) + np.sqrt(alpha * k) * rng.normal(e_x.shape)
    return NoisyObservation(y, "types", alpha)


def log_probs(theta: DiscreteParamState) -> np.ndarray:
    p = theta.probs
    if np.any(p.max(axis=1) <= 0.0):
        raise InvalidStateError("type belief has an all-zero row")
    return np.log(np.maximum(p, LOG_FLOOR))


def row_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def discrete_update(theta_prev: DiscreteParamState, y: NoisyObservation) -> DiscreteParamState:
    """Categorical update ``theta ∝ e^y * theta_prev``, computed as a stable row softmax."""
    if y.channel != "types":
        raise ShapeMismatchError("discrete update needs a types-channel observation")
    _same_shape(theta_prev.probs, y.payload, "discrete_update")
    return DiscreteParamState(row_softmax(y.payload + log_probs(theta_prev)))


def discrete_update_gradient_form(
    theta_prev: DiscreteParamState, e_x: np.ndarray, score: np.ndarray, alpha: float, n_classes: int
) -> DiscreteParamState:
    """Score-form categorical update with ``y = alpha (K e_x - 1) + score``.

    The score replaces the whole ``sqrt(alpha K) eps`` noise term.
    """
    e_x = np.asarray(e_x, dtype=float)
    _same_shape(theta_prev.probs, e_x, "discrete_update_gradient_form (e_x)")
    _same_shape(theta_prev.probs, score, "discrete_update_gradient_form (score)")
    if e_x.shape[1] != n_classes:
        raise ShapeMismatchError(f"e_x has {e_x.shape[1]} classes, expected {n_classes}")
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    y = alpha * (n_classes * e_x - 1.0) + np.asarray(score, dtype=float)
    return DiscreteParamState(row_softmax(y + log_probs(theta_prev)))


def check_model_dims(pocket: PocketContext, theta_v: DiscreteParamState) -> None:
    if pocket.n_classes != theta_v.n_classes:
        raise ShapeMismatchError(f"pocket has {pocket.n_classes} classes, belief has {theta_v.n_classes}")


def observe(model_out: HybridMolecule, alpha_x: float, alpha_v: float, rng: SeededStream):
    """Sender draws for one step: categorical type draw, coordinate noise, type noise.

    The draw order is fixed; guided and unguided samplers share it.
    """
    e_x = one_hot(rng.categorical(model_out.types), model_out.n_classes)
    y_x = continuous_sender_sample(model_out.coords, alpha_x, rng)
    y_v = discrete_sender_sample(e_x, alpha_v, rng)
    return y_x, y_v


def start_state(model_n_atoms: int, schedule: AccuracySchedule, pocket: PocketContext):
    return new_prior_state(model_n_atoms, pocket.n_classes, schedule.rho_0)


def unconditional_sample(
    model: OutputModel,
    pocket: PocketContext,
    schedule: AccuracySchedule,
    rng: SeededStream,
    n_atoms: int | None = None,
) -> tuple[HybridMolecule, list[TrajectoryRecord]]:
    """Run the n-step BFN generation loop and draw the final sample from the output model."""
    rng = as_stream(rng)
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
            y_x, y_v = observe(out, schedule.alpha_coords[i], schedule.alpha_types[i], rng)
            theta_x = continuous_update(theta_x, y_x, schedule.alpha_coords[i])
            theta_v = discrete_update(theta_v, y_v)
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
