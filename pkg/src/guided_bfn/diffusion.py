"""Guided DDPM baseline over the same hybrid state.

Gaussian reverse steps for coordinates, a multinomial-diffusion posterior for
types, and two ways of computing the guidance gradient: directly at the noisy
state ``x_t`` or at the denoiser's clean prediction ``x0_hat`` (posterior-sampling
style, chained back through the denoiser).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bfn import LOG_FLOOR, row_softmax
from .errors import DimensionError, DomainError, InvalidStateError, SamplingError, ShapeMismatchError
from .guidance import GuidanceConfig, PropertyPredictor, guidance_log_likelihood, resolve_target, variance_decompose, variance_scale
from .rng import SeededStream, as_stream
from .state import HybridMolecule, PocketContext, check_simplex_rows, is_one_hot, one_hot
from .trajectory import TrajectoryRecord, mean_entropy

log = logging.getLogger(__name__)

VARIANTS = ("xt", "x0")
DEFAULT_DELTA = 1e-8


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule ``beta_1..beta_T``; step ``t`` is 1-based and ``alpha_bar(0) = 1``."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=float)
        if b.ndim != 1 or b.size < 1:
            raise DimensionError("betas must be a non-empty 1-D array")
        if np.any(b <= 0) or np.any(b >= 1):
            raise DomainError("every beta must lie in (0, 1)")
        b.setflags(write=False)
        abar = np.cumprod(1.0 - b)
        abar.setflags(write=False)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "_alpha_bars", abar)

    @classmethod
    def linear(cls, n_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "DiffusionSchedule":
        if n_steps < 1:
            raise DimensionError("n_steps must be >= 1")
        if n_steps == 1:
            return cls(np.array([beta_end]))
        return cls(np.linspace(beta_start, beta_end, n_steps))

    @property
    def n_steps(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return self._alpha_bars

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.n_steps:
            raise DimensionError(f"diffusion step {t} outside 1..{self.n_steps}")

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return 1.0 - self.beta(t)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self._alpha_bars[t - 1])


@dataclass(frozen=True)
class DiffusionState:
    coords: np.ndarray
    types: np.ndarray
    t: int

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        types = np.array(self.types, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 3 or types.ndim != 2 or types.shape[0] != coords.shape[0]:
            raise ShapeMismatchError("diffusion state needs N x 3 coords and N x K types")
        if not np.all(np.isfinite(coords)):
            raise InvalidStateError("diffusion coords contain non-finite entries")
        if not is_one_hot(types):
            raise InvalidStateError("diffusion types must be one-hot rows")
        coords.setflags(write=False)
        types.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "types", types)


def forward_marginal_coords(x_0: np.ndarray, t: int, schedule: DiffusionSchedule, rng: SeededStream) -> np.ndarray:
    """Draw ``x_t ~ N(sqrt(abar_t) x_0, (1 - abar_t) I)``."""
    schedule.beta(t)  # range check, 1 <= t <= T
    abar = schedule.alpha_bar(t)
    rng = as_stream(rng)
    x_0 = np.asarray(x_0, dtype=float)
    return np.sqrt(abar) * x_0 + np.sqrt(1.0 - abar) * rng.normal(x_0.shape)


def posterior_coefficients(t: int, schedule: DiffusionSchedule) -> tuple[float, float, float]:
    """``(x0 coefficient, x_t coefficient, posterior variance)`` of ``q(x_{t-1} | x_t, x_0)``."""
    beta = schedule.beta(t)
    alpha = 1.0 - beta
    abar = schedule.alpha_bar(t)
    abar_prev = schedule.alpha_bar(t - 1)
    c0 = np.sqrt(abar_prev) * beta / (1.0 - abar)
    ct = np.sqrt(alpha) * (1.0 - abar_prev) / (1.0 - abar)
    var = beta * (1.0 - abar_prev) / (1.0 - abar)
    return float(c0), float(ct), float(var)


def ddpm_guided_step_coords(
    x_t: np.ndarray,
    x0_hat: np.ndarray,
    t: int,
    schedule: DiffusionSchedule,
    grad: np.ndarray,
    lam: float,
    rng: SeededStream,
) -> np.ndarray:
    """One reverse step ``mu_tilde + lam (1 - alpha_t) / sqrt(alpha_t) grad + sigma_t z``.

    No noise is drawn at ``t = 1``.
    """
    x_t = np.asarray(x_t, dtype=float)
    if np.shape(x0_hat) != x_t.shape or np.shape(grad) != x_t.shape:
        raise ShapeMismatchError("x_t, x0_hat and grad must share a shape")
    if lam < 0:
        raise DomainError("guidance scale must be nonnegative")
    c0, ct, var = posterior_coefficients(t, schedule)
    out = c0 * np.asarray(x0_hat, float) + ct * x_t
    if lam != 0.0:
        alpha = schedule.alpha(t)
        out = out + lam * (1.0 - alpha) / np.sqrt(alpha) * np.asarray(grad, float)
    if t > 1:
        out = out + np.sqrt(var) * as_stream(rng).normal(x_t.shape)
    return out


def categorical_posterior(v_t: np.ndarray, v0_hat: np.ndarray, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    """Row-normalized ``[alpha_t v_t + (1 - alpha_t)/K] * [abar_{t-1} v0 + (1 - abar_{t-1})/K]``."""
    v_t = np.asarray(v_t, dtype=float)
    v0_hat = np.asarray(v0_hat, dtype=float)
    if v_t.shape != v0_hat.shape:
        raise ShapeMismatchError(f"v_t {v_t.shape} and v0_hat {v0_hat.shape} differ")
    k = v_t.shape[1]
    alpha = schedule.alpha(t)
    abar_prev = schedule.alpha_bar(t - 1)
    c = (alpha * v_t + (1.0 - alpha) / k) * (abar_prev * v0_hat + (1.0 - abar_prev) / k)
    return c / c.sum(axis=1, keepdims=True)


def categorical_guided_sample(
    theta_post: np.ndarray, grad: np.ndarray, lam: float, delta: float, rng: SeededStream
) -> np.ndarray:
    """Draw one-hot rows from ``(theta_post + delta) * exp(lam * grad)``, renormalized."""
    theta_post = np.asarray(theta_post, dtype=float)
    if np.shape(grad) != theta_post.shape:
        raise ShapeMismatchError("grad and theta_post must share a shape")
    if lam < 0 or delta < 0:
        raise DomainError("lam and delta must be nonnegative")
    check_simplex_rows(theta_post, "theta_post")
    logits = np.log(np.maximum(theta_post + delta, LOG_FLOOR))
    if lam != 0.0:
        logits = logits + lam * np.asarray(grad, float)
    probs = row_softmax(logits)
    rng = as_stream(rng)
    return one_hot(rng.categorical(probs), theta_post.shape[1])


class GuidanceGradient(NamedTuple):
    coords: np.ndarray
    types: np.ndarray
    finite_difference: bool = False


def guidance_grad_xt(
    predictor: PropertyPredictor, state: DiffusionState, pocket: PocketContext, target: float, objective: str = "log_likelihood"
) -> GuidanceGradient:
    """Predictor gradients evaluated directly at the noisy state."""
    m = HybridMolecule(state.coords, state.types)
    gx = predictor.grad_coords(m, pocket, target, objective)
    gv = predictor.grad_types(state.types, state.coords, pocket, target, objective)
    return GuidanceGradient(np.asarray(gx), np.asarray(gv), False)


def guidance_grad_x0(
    predictor: PropertyPredictor,
    model_x0,
    state: DiffusionState,
    pocket: PocketContext,
    target: float,
    objective: str = "log_likelihood",
    fd_step: float = 1e-4,
) -> GuidanceGradient:
    """Single-sample posterior-sampling gradient through the denoiser.

    The coordinate gradient at ``x0_hat`` is pulled back to ``x_t`` with the
    denoiser's ``vjp_coords`` when it has one, else by central differences of the
    composed objective (``finite_difference`` is then True). The type gradient
    stays in clean-prediction space, since ``v_t`` is discrete and the tilt of the
    categorical sampler acts on class logits directly.
    """
    x0, v0 = model_x0(state.coords, state.types, state.t)
    m0 = HybridMolecule(x0, v0)
    gv = np.asarray(predictor.grad_types(v0, x0, pocket, target, objective))
    vjp = getattr(model_x0, "vjp_coords", None)
    if vjp is not None:
        g0 = np.asarray(predictor.grad_coords(m0, pocket, target, objective))
        return GuidanceGradient(np.asarray(vjp(state.coords, state.types, state.t, g0)), gv, False)

    from .analysis import finite_difference_gradient

    log.debug("denoiser has no vjp_coords; using finite differences (step %g)", fd_step)

    def composed(x):
        xh, vh = model_x0(x, state.types, state.t)
        if objective == "maximize_mean":
            return variance_decompose(predictor.predict(HybridMolecule(xh, vh), pocket)).mean
        return guidance_log_likelihood(variance_decompose(predictor.predict(HybridMolecule(xh, vh), pocket)), target)

    gx = finite_difference_gradient(composed, np.asarray(state.coords, float), fd_step)
    return GuidanceGradient(gx, gv, True)


def targetopt_sample(
    model_x0,
    predictor: PropertyPredictor,
    pocket: PocketContext,
    schedule: DiffusionSchedule,
    config: GuidanceConfig,
    variant: str,
    rng: SeededStream,
    n_atoms: int | None = None,
    delta: float = DEFAULT_DELTA,
    default_target: float | None = None,
) -> tuple[HybridMolecule, list[TrajectoryRecord]]:
    """Reverse diffusion from ``x_T ~ N(0, I)`` and uniform types with guidance.

    Record ``i`` corresponds to diffusion step ``t = T - i + 1``; its ``t`` field holds
    ``(T - t) / T`` so steps line up with the BFN sampler's time grid. The guidance
    score is the predictive log-likelihood at whichever state the gradient is taken.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    rng = as_stream(rng)
    target = resolve_target(config, default_target)
    n_atoms = n_atoms if n_atoms is not None else getattr(model_x0, "n_atoms")
    k = pocket.n_classes
    big_t = schedule.n_steps
    x = rng.normal((n_atoms, 3))
    v = one_hot(rng.categorical(np.full((n_atoms, k), 1.0 / k)), k)
    records: list[TrajectoryRecord] = []
    for t in range(big_t, 0, -1):
        step = big_t - t + 1
        try:
            state = DiffusionState(x, v, t)
            x0_hat, v0_hat = model_x0(state.coords, state.types, t)
            if variant == "xt":
                eval_m = HybridMolecule(state.coords, state.types)
                grads = guidance_grad_xt(predictor, state, pocket, target, config.objective)
            else:
                eval_m = HybridMolecule(x0_hat, v0_hat)
                grads = guidance_grad_x0(predictor, model_x0, state, pocket, target, config.objective)
            pred = variance_decompose(predictor.predict(eval_m, pocket))
            score = guidance_log_likelihood(pred, target)
            scale = variance_scale(pred, config)
            x = ddpm_guided_step_coords(state.coords, x0_hat, t, schedule, grads.coords, scale * config.lambda_coords, rng)
            theta_post = categorical_posterior(state.types, v0_hat, t, schedule)
            v = categorical_guided_sample(theta_post, grads.types, scale * config.lambda_types, delta, rng)
        except SamplingError:
            raise
        except Exception as exc:
            raise SamplingError(str(exc), step) from exc
        records.append(
            TrajectoryRecord(
                step=step,
                t=(big_t - t) / big_t,
                rho=None,
                theta_x_norm=float(np.linalg.norm(x)),
                theta_v_entropy=mean_entropy(theta_post),
                rng_counter=rng.counter,
                guidance_score=score,
                predicted_mean=pred.mean,
                aleatoric=pred.aleatoric,
                epistemic=pred.epistemic,
                total_variance=pred.total,
                grad_coords_norm=float(np.linalg.norm(grads.coords)),
                grad_types_norm=float(np.linalg.norm(grads.types)),
                variant=variant,
                theta_x=x,
                theta_v=theta_post,
                x_hat=eval_m.coords,
                v_hat=eval_m.types,
            )
        )
    return HybridMolecule(x, v), records
