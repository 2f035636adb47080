"""Self-verification suite: exact oracles run at budgeted sizes.

Each check returns a :class:`CheckResult`; :func:`run_all` runs every check and
never raises, so a failing property shows up in the table rather than as a traceback.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import NonInvariantPredictor, check_equivariance, finite_difference_gradient, random_rotation
from .bfn import (
    continuous_sender_sample,
    continuous_update,
    continuous_update_gradient_form,
    discrete_sender_sample,
    discrete_update,
    discrete_update_gradient_form,
    tweedie_mean,
    unconditional_sample,
)
from .diffusion import DiffusionSchedule, categorical_posterior, posterior_coefficients
from .guidance import (
    GuidanceConfig,
    beta_nll_loss,
    cbyg_sample,
    guided_continuous_kernel,
    guided_discrete_kernel,
    nll_loss,
    variance_decompose,
)
from .rng import SeededStream
from .state import ContinuousParamState, DiscreteParamState, HybridMolecule, NoisyObservation, build_schedule, one_hot
from .toy import (
    FiniteDifferencePredictor,
    affinity_surrogate,
    attractor_output_model,
    combined_score,
    enumerate_discrete_posterior,
    gaussian_tilt_closed_form,
    make_toy_world,
    sa_surrogate,
    surrogate_values,
    toy_ensemble_predictor,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _random_simplex(rng, n, k):
    p = rng.dirichlet(np.ones(k), size=n)
    return np.maximum(p, 1e-6) / np.maximum(p, 1e-6).sum(axis=1, keepdims=True)


def check_gradient_form(n_instances: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Max discrepancy between sampled and score-form updates (continuous, discrete)."""
    rng = np.random.default_rng(seed)
    worst_c = worst_d = 0.0
    for i in range(n_instances):
        n = int(rng.integers(1, 6))
        k = int(rng.integers(2, 6))
        alpha = float(rng.uniform(0.01, 5.0))
        theta = ContinuousParamState(rng.standard_normal((n, 3)), float(rng.uniform(0.5, 50.0)))
        x = rng.standard_normal((n, 3))
        stream = SeededStream(seed * 100_003 + i)
        y = continuous_sender_sample(x, alpha, stream)
        eps = (y.payload - x) * math.sqrt(alpha)
        a = continuous_update(theta, y, alpha).mean
        b = continuous_update_gradient_form(theta, x, math.sqrt(alpha) * eps, alpha).mean
        worst_c = max(worst_c, float(np.max(np.abs(a - b))))

        th = DiscreteParamState(_random_simplex(rng, n, k))
        e = one_hot(rng.integers(0, k, n), k)
        yv = discrete_sender_sample(e, alpha, stream)
        score = yv.payload - alpha * (k * e - 1.0)
        p = discrete_update(th, yv).probs
        q = discrete_update_gradient_form(th, e, score, alpha, k).probs
        worst_d = max(worst_d, float(np.max(np.abs(p - q))))
    return worst_c, worst_d


def check_tweedie(n_instances: int = 1000, seed: int = 1) -> float:
    """Tweedie mean versus the conjugate posterior mean for mu ~ N(m, s2), z ~ N(mu, tau2)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        m = rng.normal(0, 3, 3)
        s2 = rng.uniform(0.05, 5.0)
        tau2 = rng.uniform(0.05, 5.0)
        z = rng.normal(0, 4, 3)
        # marginal z ~ N(m, s2 + tau2); score of the marginal
        score = -(z - m) / (s2 + tau2)
        exact = (tau2 * m + s2 * z) / (s2 + tau2)
        got = tweedie_mean(z, tau2, score)
        worst = max(worst, float(np.max(np.abs(got - exact))))
    return worst


def check_linear_tilt(n_instances: int = 200, seed: int = 2) -> float:
    """Guided categorical kernel versus brute-force enumeration under a linear likelihood."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 4))
        k = int(rng.integers(2, 4))
        theta = DiscreteParamState(_random_simplex(rng, n, k))
        alpha = float(rng.uniform(0.05, 2.0))
        y = NoisyObservation(rng.normal(0, 2, (n, k)), "types", alpha)
        grad = rng.normal(0, 1, (n, k))
        scale = float(rng.uniform(0.01, 2.0))
        lam = float(rng.uniform(0.1, 5.0))
        got = guided_discrete_kernel(theta, y, grad, scale, lam).probs
        prior = discrete_update(theta, y)
        h = scale * lam * grad
        oracle = enumerate_discrete_posterior(prior, lambda a: float(h[np.arange(n), list(a)].sum()))
        worst = max(worst, float(np.max(np.abs(got - oracle.marginals))))
    return worst


def check_quadratic_tilt(n_instances: int = 200, seed: int = 3) -> float:
    """Guided Gaussian kernel versus the closed-form tilted posterior mean.

    For the tilt ``exp(-c |x - x*|^2)`` the kernel reproduces the conjugate mean
    exactly when the tilt gradient is taken at that mean.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 6))
        theta = ContinuousParamState(rng.standard_normal((n, 3)), float(rng.uniform(0.5, 20.0)))
        alpha = float(rng.uniform(0.05, 5.0))
        y = NoisyObservation(rng.standard_normal((n, 3)), "coords", alpha)
        c = float(rng.uniform(0.0, 3.0))
        target = rng.normal(0, 2, (n, 3))
        scale = float(rng.uniform(0.1, 2.0))
        lam = float(rng.uniform(0.1, 5.0))
        c_eff = c * scale * lam
        oracle = gaussian_tilt_closed_form(theta, alpha, c_eff, target, y=y.payload)
        grad = -2.0 * c * (oracle.mean - target)
        got = guided_continuous_kernel(theta, y, grad, scale, lam, alpha).mean
        worst = max(worst, float(np.max(np.abs(got - oracle.mean))))
    return worst


def check_unguided_reduction(n_seeds: int = 3, n_steps: int = 30) -> bool:
    world = make_toy_world(0)
    model = attractor_output_model(world)
    pred = toy_ensemble_predictor(world)
    sched = build_schedule(n_steps)
    cfg = GuidanceConfig(lambda_coords=0.0, lambda_types=0.0, target_label=0.5)
    for s in range(n_seeds):
        a, ra = unconditional_sample(model, world.pocket, sched, SeededStream(s))
        b, rb = cbyg_sample(model, pred, world.pocket, sched, cfg, SeededStream(s))
        if not (np.array_equal(a.coords, b.coords) and np.array_equal(a.types, b.types)):
            return False
        for x, y in zip(ra, rb):
            if not (np.array_equal(x.theta_x, y.theta_x) and np.array_equal(x.theta_v, y.theta_v)):
                return False
    return True


def _random_molecule(rng, world, spread=2.0):
    n, k = world.n_atoms, world.n_classes
    return HybridMolecule(rng.normal(0, spread, (n, 3)), _random_simplex(rng, n, k))


def check_equivariance_suite(n_rotations: int = 20, seed: int = 4) -> tuple[bool, str]:
    world = make_toy_world(0)
    base = toy_ensemble_predictor(world)
    rng = np.random.default_rng(seed)
    m = _random_molecule(rng, world)
    worst_v = worst_g = 0.0
    for pred in (base, FiniteDifferencePredictor(base)):
        ident = check_equivariance(pred, m, world.pocket, np.eye(3), target=0.3)
        if ident.value_residual != 0.0 or ident.grad_residual != 0.0:
            return False, "identity rotation gave nonzero residual"
        for r in range(n_rotations):
            rep = check_equivariance(pred, m, world.pocket, random_rotation(seed * 1000 + r), target=0.3)
            if not (rep.passed and rep.types_grad_residual < rep.grad_tol):
                return False, f"rotation {r}: value {rep.value_residual:.2e}, grad {rep.grad_residual:.2e}"
            worst_v, worst_g = max(worst_v, rep.value_residual), max(worst_g, rep.grad_residual)
    bad = NonInvariantPredictor(base)
    caught = sum(
        check_equivariance(bad, m, world.pocket, random_rotation(seed * 1000 + r), target=0.3).grad_residual > 0.01
        for r in range(n_rotations)
    )
    if caught < n_rotations - 1:
        return False, f"negative control caught only {caught}/{n_rotations}"
    return True, f"value {worst_v:.1e}, grad {worst_g:.1e}, control {caught}/{n_rotations}"


def check_variance_decomposition(n_members: int = 10_000, seed: int = 5) -> tuple[bool, str]:
    """Exact identity on random ensembles, then the epistemic term of many N(0, 1) means."""
    rng = np.random.default_rng(seed)
    for _ in range(200):
        m = int(rng.integers(1, 12))
        p = variance_decompose(list(zip(rng.normal(0, 2, m), rng.uniform(0.01, 3.0, m))))
        if p.total != p.aleatoric + p.epistemic:
            return False, "total != aleatoric + epistemic"
    p = variance_decompose([(float(mu), 0.3) for mu in rng.standard_normal(n_members)])
    ok = 0.96 <= p.epistemic <= 1.04 and abs(p.aleatoric - 0.3) < 1e-12
    return ok, f"epistemic {p.epistemic:.4f} at M={n_members}"


def check_losses(n_instances: int = 1000, seed: int = 6) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        y, mu = rng.normal(0, 3, 2)
        s2 = rng.uniform(1e-3, 10)
        worst = max(worst, abs(nll_loss(y, mu, s2) - beta_nll_loss(y, mu, s2, 0.0)))
    hand = max(
        abs(nll_loss(0.0, 0.0, 1.0)),
        abs(nll_loss(1.0, 0.0, 1.0) - 0.5),
        abs(nll_loss(2.0, 0.0, 2.0) - (math.log(2.0) / 2 + 1.0)),
        abs(beta_nll_loss(2.0, 0.0, 2.0, 1.0) - 2.0 * (math.log(2.0) / 2 + 1.0)),
        abs(beta_nll_loss(1.3, 0.2, 1.0, 0.5) - nll_loss(1.3, 0.2, 1.0)),
    )
    return worst == 0.0 and hand < 1e-12, f"beta=0 gap {worst:.1e}, hand-value gap {hand:.1e}"


def check_surrogate_gradients(n_states: int = 20, seed: int = 7) -> tuple[bool, str]:
    """Analytic surrogate gradients against central differences of the raw formulas."""
    world = make_toy_world(0)
    rng = np.random.default_rng(seed)
    p, pocket = world.params, world.pocket
    worst = 0.0
    for _ in range(n_states):
        m = _random_molecule(rng, world, spread=1.5)
        analytic = (
            combined_score(m, pocket, p)[1],
            affinity_surrogate(m, pocket, p)[1:],
            (np.zeros_like(m.coords), sa_surrogate(m, p)[1]),
        )
        for which, (gx, gv) in enumerate(analytic):
            fx = finite_difference_gradient(lambda x: surrogate_values(x, m.types, pocket, p)[which], m.coords, 1e-5)
            fv = finite_difference_gradient(lambda v: surrogate_values(m.coords, v, pocket, p)[which], m.types, 1e-5)
            worst = max(worst, _rel(gx, fx), _rel(gv, fv))
    return worst < 1e-6, f"max relative error {worst:.1e}"


def _rel(a, b) -> float:
    scale = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / scale if scale > 1e-12 else float(np.linalg.norm(a - b))


def check_diffusion_identities(seed: int = 8) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        sched = DiffusionSchedule(np.sort(rng.uniform(1e-4, 0.3, int(rng.integers(2, 50)))))
        t = int(rng.integers(1, sched.n_steps + 1))
        c0, ct, _ = posterior_coefficients(t, sched)
        # with x0_hat = x_t the mean is (c0 + ct) x_t; the ratio is fixed by the abar recursion
        a, ab, abp = sched.alpha(t), sched.alpha_bar(t), sched.alpha_bar(t - 1)
        worst = max(worst, abs(ab - a * abp), abs(c0 * (1 - ab) - math.sqrt(abp) * (1 - a)))
    sched = DiffusionSchedule(np.array([1e-15, 1e-15]))
    v_t = one_hot([0, 1], 3)
    v0 = _random_simplex(rng, 2, 3)
    noiseless = categorical_posterior(v_t, v0, 2, sched)
    target = v_t * v0 / (v_t * v0).sum(axis=1, keepdims=True)
    worst = max(worst, float(np.max(np.abs(noiseless - target))))
    noisy = DiffusionSchedule(np.array([1 - 1e-15, 1 - 1e-15]))
    pure = categorical_posterior(v_t, v0, 2, noisy)
    worst = max(worst, float(np.max(np.abs(pure - 1.0 / 3))))
    return worst < 1e-12, f"max error {worst:.1e}"


def _wrap(name: str, fn: Callable[[], CheckResult | tuple]) -> CheckResult:
    start = time.perf_counter()
    try:
        out = fn()
    except Exception as exc:  # a crashing oracle is a failed property
        return CheckResult(name, False, f"error: {exc!r}", time.perf_counter() - start)
    passed, detail = out
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


def _gradient_form():
    c, d = check_gradient_form()
    return c < 1e-10 and d < 1e-12, f"continuous {c:.1e}, discrete {d:.1e}"


def _tweedie():
    w = check_tweedie()
    return w < 1e-10, f"max error {w:.1e}"


def _linear_tilt():
    w = check_linear_tilt()
    return w < 1e-10, f"max error {w:.1e}"


def _quadratic_tilt():
    w = check_quadratic_tilt()
    return w < 1e-10, f"max error {w:.1e}"


def _reduction():
    ok = check_unguided_reduction()
    return ok, "bitwise equal" if ok else "zero-scale guided chain diverged"


CHECKS: tuple[tuple[str, Callable], ...] = (
    ("gradient-form equivalence", _gradient_form),
    ("tweedie conjugate mean", _tweedie),
    ("linear-tilt exactness", _linear_tilt),
    ("quadratic-tilt exactness", _quadratic_tilt),
    ("unguided reduction", _reduction),
    ("rotation equivariance", check_equivariance_suite),
    ("variance decomposition", check_variance_decomposition),
    ("loss identities", check_losses),
    ("surrogate finite differences", check_surrogate_gradients),
    ("diffusion identities", check_diffusion_identities),
)


def run_all() -> list[CheckResult]:
    return [_wrap(name, fn) for name, fn in CHECKS]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time    detail", "-" * (width + 40)]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:6.2f}s {r.detail}")
    return "\n".join(lines)
