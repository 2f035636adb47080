"""Synthetic pocket/template world standing in for trained networks.

The world supplies an analytic output model that pulls the belief toward the
nearest template, differentiable docking-like and synthesizability-like
surrogates combined as ``(DS / -20) * SA``, an ensemble property predictor with
heteroscedastic noise, and small exact oracles used by the test suite.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionError, DomainError, ShapeMismatchError
from .state import ContinuousParamState, DiscreteParamState, HybridMolecule, PocketContext, one_hot

SCORE_DIVISOR = -20.0
ENUMERATION_CAP = 3


@dataclass(frozen=True)
class ToyPropertyParams:
    class_weights: tuple[float, ...]
    easy_classes: tuple[int, ...]
    kernel_width: float = 1.0
    ds_floor: float = -12.0
    sa_slope: float = 4.0
    sa_offset: float = -2.0
    jitter: float = 0.05
    sigma_base: float = 0.1
    spatial_scale: float = 4.0

    def __post_init__(self):
        if not self.kernel_width > 0:
            raise DomainError("kernel_width must be positive")
        if not self.sigma_base > 0:
            raise DomainError("sigma_base must be positive")
        if not self.spatial_scale > 0:
            raise DomainError("spatial_scale must be positive")
        if any(w < 0 for w in self.class_weights):
            raise DomainError("class weights must be nonnegative")
        if self.ds_floor >= 0:
            raise DomainError("ds_floor must be negative")

    @property
    def n_classes(self) -> int:
        return len(self.class_weights)

    def easy_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_classes)
        mask[list(self.easy_classes)] = 1.0
        return mask


@dataclass(frozen=True)
class TemplateLibrary:
    templates: tuple[HybridMolecule, ...]
    ids: tuple[str, ...]

    def __post_init__(self):
        if not self.templates:
            raise DimensionError("template library is empty")
        n, k = self.templates[0].n_atoms, self.templates[0].n_classes
        if any(t.n_atoms != n or t.n_classes != k for t in self.templates):
            raise ShapeMismatchError("all templates must share atom and class counts")

    def __len__(self) -> int:
        return len(self.templates)

    @property
    def n_atoms(self) -> int:
        return self.templates[0].n_atoms

    @property
    def n_classes(self) -> int:
        return self.templates[0].n_classes

    def coord_stack(self) -> np.ndarray:
        return np.stack([t.coords for t in self.templates])

    def type_stack(self) -> np.ndarray:
        return np.stack([t.types for t in self.templates])


@dataclass(frozen=True)
class ToyWorld:
    pocket: PocketContext
    library: TemplateLibrary
    params: ToyPropertyParams
    seed: int
    pocket_size: float

    @property
    def n_atoms(self) -> int:
        return self.library.n_atoms

    @property
    def n_classes(self) -> int:
        return self.library.n_classes


def _sphere_points(rng, n: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def make_toy_world(
    seed: int = 0,
    n_atoms: int = 6,
    n_classes: int = 4,
    n_templates: int = 4,
    pocket_size: float = 4.0,
    n_pocket_atoms: int = 24,
    n_hotspots: int = 3,
) -> ToyWorld:
    """Build a deterministic world from ``seed``.

    Pocket atoms sit on a shell of radius ``pocket_size``, hotspots inside it, and
    each template clusters around one hotspot. Everything is expressed relative to
    the pocket centroid.
    """
    if n_atoms < 1 or n_templates < 1 or n_pocket_atoms < 1 or n_hotspots < 1:
        raise DimensionError("world sizes must be positive")
    if n_classes < 2:
        raise DimensionError("need at least two classes")
    if not pocket_size > 0:
        raise DomainError("pocket_size must be positive")
    rng = np.random.default_rng(seed)
    pocket_coords = _sphere_points(rng, n_pocket_atoms, pocket_size)
    pocket_types = one_hot(rng.integers(0, n_classes, n_pocket_atoms), n_classes)
    radii = rng.uniform(0.25, 0.55, n_hotspots) * pocket_size
    hotspots = _sphere_points(rng, n_hotspots, 1.0) * radii[:, None]
    center = pocket_coords.mean(axis=0)
    pocket = PocketContext(pocket_coords - center, pocket_types, hotspots - center)

    limit = 0.9 * pocket_size
    templates, ids = [], []
    for j in range(n_templates):
        anchor = pocket.hotspots[j % n_hotspots] + 0.6 * rng.standard_normal(3)
        coords = anchor + 0.9 * rng.standard_normal((n_atoms, 3))
        norms = np.linalg.norm(coords, axis=1, keepdims=True)
        coords = np.where(norms > limit, coords * limit / np.maximum(norms, 1e-300), coords)
        types = one_hot(rng.integers(0, n_classes, n_atoms), n_classes)
        templates.append(HybridMolecule(coords, types))
        ids.append(f"T{j:03d}")

    weights = rng.uniform(0.2, 1.0, n_classes)
    params = ToyPropertyParams(
        class_weights=tuple(float(w) for w in weights),
        easy_classes=tuple(range(max(1, n_classes // 2))),
        spatial_scale=float(pocket_size),
    )
    return ToyWorld(pocket, TemplateLibrary(tuple(templates), tuple(ids)), params, int(seed), float(pocket_size))


def _round9(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return float(f"{float(a):.9g}")
    return [_round9(v) for v in a]


def world_to_dict(world: ToyWorld) -> dict:
    p = world.params
    return {
        "pocket": {
            "coords": _round9(world.pocket.coords),
            "types": np.argmax(world.pocket.types, axis=1).tolist(),
            "center": _round9(world.pocket.center),
        },
        "hotspots": _round9(world.pocket.hotspots),
        "templates": [
            {"id": tid, "coords": _round9(t.coords), "types": t.class_indices().tolist()}
            for tid, t in zip(world.library.ids, world.library.templates)
        ],
        "params": {
            "class_weights": _round9(p.class_weights),
            "easy_classes": list(p.easy_classes),
            **{
                name: _round9(getattr(p, name))
                for name in ("kernel_width", "ds_floor", "sa_slope", "sa_offset", "jitter", "sigma_base", "spatial_scale")
            },
        },
        "seed": world.seed,
    }


def world_to_json(world: ToyWorld) -> str:
    return json.dumps(world_to_dict(world), sort_keys=True)


# ---------------------------------------------------------------------------
# Output model


class AttractorOutputModel:
    """Output model that blends the belief with its nearest template.

    ``x_hat = (1 - g) theta_x + g x_T``, ``v_hat = (1 - g) theta_v + g e_T`` with
    ``g = clip(t, 0, 1)``. Ties in template distance go to the lowest index.
    """

    def __init__(self, library: TemplateLibrary):
        self.library = library
        self._coords = library.coord_stack()
        self._types = library.type_stack()
        self.n_atoms = library.n_atoms
        self.n_classes = library.n_classes

    def nearest(self, coords: np.ndarray) -> int:
        d = np.mean((self._coords - coords[None]) ** 2, axis=(1, 2))
        return int(np.argmin(d))

    def blend(self, coords: np.ndarray, types: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray, int]:
        j = self.nearest(coords)
        x_hat = (1.0 - gamma) * coords + gamma * self._coords[j]
        u = (1.0 - gamma) * types + gamma * self._types[j]
        return x_hat, u / u.sum(axis=1, keepdims=True), j

    def __call__(self, theta_x: ContinuousParamState, theta_v: DiscreteParamState, pocket: PocketContext, t: float):
        gamma = float(np.clip(t, 0.0, 1.0))
        x_hat, v_hat, _ = self.blend(theta_x.mean, theta_v.probs, gamma)
        return HybridMolecule(x_hat, v_hat)


def attractor_output_model(world: ToyWorld) -> AttractorOutputModel:
    return AttractorOutputModel(world.library)


class AttractorDenoiser:
    """The attractor model re-indexed by diffusion step, used as the x0 predictor.

    Diffusion step ``t`` of ``T`` maps to blend weight ``1 - t / T``, mirroring the
    BFN time ``(i - 1) / n`` of the matching step. Exposes an exact vector-Jacobian
    product for the coordinate channel so guidance can be chained through it
    without finite differences.
    """

    def __init__(self, library: TemplateLibrary, n_steps: int):
        self.attractor = AttractorOutputModel(library)
        self.n_steps = int(n_steps)
        self.n_atoms = library.n_atoms
        self.n_classes = library.n_classes

    def gamma(self, t: int) -> float:
        return float(np.clip(1.0 - t / self.n_steps, 0.0, 1.0))

    def __call__(self, coords: np.ndarray, types: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
        x0, v0, _ = self.attractor.blend(np.asarray(coords, float), np.asarray(types, float), self.gamma(t))
        return x0, v0

    def vjp_coords(self, coords, types, t: int, g_coords: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. ``x0_hat`` back to ``x_t``.

        The nearest-template index is piecewise constant and contributes nothing.
        """
        return (1.0 - self.gamma(t)) * np.asarray(g_coords, float)


def attractor_denoiser(world: ToyWorld, n_steps: int) -> AttractorDenoiser:
    return AttractorDenoiser(world.library, n_steps)


# ---------------------------------------------------------------------------
# Surrogates


def _hotspot_kernel(coords: np.ndarray, hotspots: np.ndarray, width: float):
    diff = coords[:, None, :] - hotspots[None, :, :]
    k = np.exp(-np.sum(diff**2, axis=2) / (2.0 * width**2))
    return diff, k


def _member_scores(coords, types, hotspots, weights, width, ds_floor, slopes, offsets, easy_mask):
    """Combined score and its gradients for a stack of M parameter sets.

    ``weights`` is M x K, ``slopes``/``offsets`` length M. Returns values (M,),
    coordinate gradients (M, N, 3) and type gradients (M, N, K), plus the DS and SA parts.
    """
    n = coords.shape[0]
    h = hotspots.shape[0]
    diff, k = _hotspot_kernel(coords, hotspots, width)  # (N,H,3), (N,H)
    site = k.sum(axis=1)  # (N,)
    pull = -np.einsum("nh,nhd->nd", k, diff) / width**2  # d site / d x, (N,3)

    wmax = weights.max(axis=1)
    cap = n * h * wmax
    scale = np.where(cap > 0, ds_floor / np.where(cap > 0, cap, 1.0), 0.0)  # (M,)
    affinity = types @ weights.T  # (N,M): v_j . w
    raw = np.einsum("nm,n->m", affinity, site)
    ds = scale * raw
    ds_gx = scale[:, None, None] * affinity.T[:, :, None] * pull[None]  # (M,N,3)
    ds_gv = scale[:, None, None] * weights[:, None, :] * site[None, :, None]  # (M,N,K)

    easy = float(np.sum(types @ easy_mask)) / n
    arg = slopes * easy + offsets
    sa = 1.0 / (1.0 + np.exp(-arg))
    sa_gv = (sa * (1.0 - sa) * slopes / n)[:, None, None] * easy_mask[None, None, :]

    value = ds / SCORE_DIVISOR * sa
    gx = ds_gx / SCORE_DIVISOR * sa[:, None, None]
    gv = ds_gv / SCORE_DIVISOR * sa[:, None, None] + (ds / SCORE_DIVISOR)[:, None, None] * sa_gv
    return value, gx, gv, ds, ds_gx, ds_gv, sa, sa_gv


def _single(params: ToyPropertyParams):
    w = np.asarray(params.class_weights, float)[None]
    return w, np.array([params.sa_slope]), np.array([params.sa_offset])


def _check_pair(m: HybridMolecule, pocket: PocketContext, params: ToyPropertyParams) -> None:
    if m.n_classes != params.n_classes or pocket.n_classes != params.n_classes:
        raise ShapeMismatchError(
            f"class counts disagree: molecule {m.n_classes}, pocket {pocket.n_classes}, params {params.n_classes}"
        )


def affinity_surrogate(m: HybridMolecule, pocket: PocketContext, params: ToyPropertyParams):
    """Docking-like score in ``[ds_floor, 0]`` (lower is better) with exact gradients."""
    _check_pair(m, pocket, params)
    w, a, b = _single(params)
    out = _member_scores(m.coords, m.types, pocket.hotspots, w, params.kernel_width, params.ds_floor, a, b, params.easy_mask())
    return float(out[3][0]), out[4][0], out[5][0]


def sa_surrogate(m: HybridMolecule, params: ToyPropertyParams):
    """Synthesizability-like score in ``(0, 1)``: logistic in the easy-class mass fraction."""
    if m.n_classes != params.n_classes:
        raise ShapeMismatchError(f"molecule has {m.n_classes} classes, params {params.n_classes}")
    mask = params.easy_mask()
    easy = float(m.types @ mask @ np.ones(m.n_atoms)) / m.n_atoms
    sa = 1.0 / (1.0 + np.exp(-(params.sa_slope * easy + params.sa_offset)))
    grad = np.tile(sa * (1.0 - sa) * params.sa_slope / m.n_atoms * mask, (m.n_atoms, 1))
    return float(sa), grad


def combined_score(m: HybridMolecule, pocket: PocketContext, params: ToyPropertyParams):
    """``(DS / -20) * SA`` with product-rule gradients; always within ``[0, 0.6]``."""
    _check_pair(m, pocket, params)
    w, a, b = _single(params)
    value, gx, gv, *_ = _member_scores(
        m.coords, m.types, pocket.hotspots, w, params.kernel_width, params.ds_floor, a, b, params.easy_mask()
    )
    return float(value[0]), (gx[0], gv[0])


def surrogate_values(coords, types, pocket: PocketContext, params: ToyPropertyParams) -> tuple[float, float, float]:
    """``(score, DS, SA)`` on raw arrays; ``types`` may leave the simplex (used by gradient checks)."""
    w, a, b = _single(params)
    out = _member_scores(
        np.asarray(coords, float), np.asarray(types, float), pocket.hotspots, w, params.kernel_width, params.ds_floor, a, b, params.easy_mask()
    )
    return float(out[0][0]), float(out[3][0]), float(out[6][0])


def score_upper_bound(params: ToyPropertyParams) -> float:
    return params.ds_floor / SCORE_DIVISOR


def best_achievable_score(world: ToyWorld) -> float:
    """Maximum of the combined score over all molecules of the world's size.

    Atoms do not interact, so every atom sits at the best hotspot-kernel location and
    the optimum picks how many atoms take the best easy class versus the best class
    overall.
    """
    p = world.params
    hs = world.pocket.hotspots
    width = p.kernel_width

    def neg_site(x):
        d = hs - x
        k = np.exp(-np.sum(d**2, axis=1) / (2 * width**2))
        return -k.sum(), (np.einsum("h,hd->d", k, d) / width**2) * -1.0

    best_site = 0.0
    for start in hs:
        res = minimize(neg_site, start, jac=True, method="BFGS")
        best_site = max(best_site, -float(res.fun))
    w = np.asarray(p.class_weights)
    n, h = world.n_atoms, hs.shape[0]
    cap = n * h * w.max()
    if cap == 0:
        return 0.0
    mask = p.easy_mask().astype(bool)
    w_easy = w[mask].max()
    w_hard = w[~mask].max() if (~mask).any() else None
    best = 0.0
    for n_easy in range(n + 1):
        if w_hard is None and n_easy < n:
            continue
        raw = best_site * (n_easy * w_easy + (n - n_easy) * (w_hard or 0.0))
        ds = p.ds_floor * raw / cap
        sa = 1.0 / (1.0 + np.exp(-(p.sa_slope * n_easy / n + p.sa_offset)))
        best = max(best, ds / SCORE_DIVISOR * sa)
    return float(best)


# ---------------------------------------------------------------------------
# Ensemble predictor


@dataclass
class MemberEvaluation:
    """Per-member means, shared aleatoric variance, and their gradients."""

    mu: np.ndarray  # (M,)
    var: np.ndarray  # (M,)
    mu_gx: np.ndarray  # (M,N,3)
    mu_gv: np.ndarray  # (M,N,K)
    var_gx: np.ndarray  # (M,N,3)
    var_gv: np.ndarray  # (M,N,K)


def gaussian_loglik_grads(ev: MemberEvaluation, target: float):
    """Log N(target; mean, aleatoric + epistemic) and its exact gradients."""
    m = ev.mu.size
    mu_hat = ev.mu.mean()
    dev = ev.mu - mu_hat
    total = ev.var.mean() + np.mean(dev**2)
    gx_mean = ev.mu_gx.mean(axis=0)
    gv_mean = ev.mu_gv.mean(axis=0)
    gx_total = ev.var_gx.mean(axis=0) + 2.0 / m * np.einsum("m,mnd->nd", dev, ev.mu_gx)
    gv_total = ev.var_gv.mean(axis=0) + 2.0 / m * np.einsum("m,mnk->nk", dev, ev.mu_gv)
    r = target - mu_hat
    value = -0.5 * np.log(2 * np.pi * total) - r**2 / (2 * total)
    c_mean = r / total
    c_total = r**2 / (2 * total**2) - 1.0 / (2 * total)
    return value, c_mean * gx_mean + c_total * gx_total, c_mean * gv_mean + c_total * gv_total, gx_mean, gv_mean


class EnsemblePredictorBase:
    """Shared predictor surface on top of :meth:`evaluate`.

    Subclasses implement ``evaluate(coords, types, pocket) -> MemberEvaluation``.
    ``types`` may be any real N x K array, so type gradients can be probed off the simplex.
    """

    analytic_gradients = True

    def evaluate(self, coords, types, pocket) -> MemberEvaluation:
        raise NotImplementedError

    def predict(self, m: HybridMolecule, pocket: PocketContext) -> list[tuple[float, float]]:
        ev = self.evaluate(m.coords, m.types, pocket)
        return [(float(a), float(b)) for a, b in zip(ev.mu, ev.var)]

    def log_likelihood(self, coords, types, pocket, target: float) -> float:
        ev = self.evaluate(np.asarray(coords, float), np.asarray(types, float), pocket)
        return float(gaussian_loglik_grads(ev, target)[0])

    def _grads(self, coords, types, pocket, target, objective):
        ev = self.evaluate(np.asarray(coords, float), np.asarray(types, float), pocket)
        _, gx, gv, gx_mean, gv_mean = gaussian_loglik_grads(ev, target)
        if objective == "maximize_mean":
            return gx_mean, gv_mean
        if objective != "log_likelihood":
            raise ValueError(f"unknown guidance objective {objective!r}")
        return gx, gv

    def grad_coords(self, m: HybridMolecule, pocket: PocketContext, target: float, objective: str = "log_likelihood"):
        return self._grads(m.coords, m.types, pocket, target, objective)[0]

    def grad_types(self, e_v, coords, pocket: PocketContext, target: float, objective: str = "log_likelihood"):
        return self._grads(coords, e_v, pocket, target, objective)[1]

    def grads(self, coords, types, pocket, target: float, objective: str = "log_likelihood"):
        return self._grads(coords, types, pocket, target, objective)


class ToyEnsemblePredictor(EnsemblePredictorBase):
    """M jittered copies of the combined score with heteroscedastic variance.

    Member ``i`` uses class weights ``w * exp(jitter * eps_i)``, SA slope
    ``a * (1 + jitter * eta_i)`` and offset ``b + jitter * zeta_i``; the perturbations
    are drawn once from ``rng_init``. Every member shares the variance
    ``sigma_base**2 * (1 + |centroid - center| / spatial_scale)``.
    """

    def __init__(self, params: ToyPropertyParams, n_members: int = 8, rng_init: int = 0):
        if n_members < 1:
            raise DimensionError("ensemble needs at least one member")
        self.params = params
        self.n_members = int(n_members)
        self.rng_init = rng_init
        rng = np.random.default_rng(rng_init)
        eps = rng.standard_normal((n_members, params.n_classes))
        eta = rng.standard_normal(n_members)
        zeta = rng.standard_normal(n_members)
        j = params.jitter
        self.weights = np.asarray(params.class_weights)[None] * np.exp(j * eps)
        self.slopes = params.sa_slope * (1.0 + j * eta)
        self.offsets = params.sa_offset + j * zeta
        self._easy = params.easy_mask()

    def evaluate(self, coords, types, pocket) -> MemberEvaluation:
        coords = np.asarray(coords, float)
        types = np.asarray(types, float)
        if types.shape[1] != self.params.n_classes or coords.shape[0] != types.shape[0]:
            raise ShapeMismatchError("molecule shape does not match predictor")
        p = self.params
        mu, gx, gv, *_ = _member_scores(
            coords, types, pocket.hotspots, self.weights, p.kernel_width, p.ds_floor, self.slopes, self.offsets, self._easy
        )
        n = coords.shape[0]
        offset = coords.mean(axis=0) - pocket.center
        dist = float(np.linalg.norm(offset))
        base = p.sigma_base**2
        var = base * (1.0 + dist / p.spatial_scale)
        dir_ = offset / dist if dist > 0 else np.zeros(3)
        var_gx = np.broadcast_to(base / p.spatial_scale * dir_ / n, coords.shape)
        m = self.n_members
        return MemberEvaluation(
            mu=mu,
            var=np.full(m, var),
            mu_gx=gx,
            mu_gv=gv,
            var_gx=np.broadcast_to(var_gx, (m,) + coords.shape),
            var_gv=np.zeros_like(gv),
        )


def toy_ensemble_predictor(world: ToyWorld, n_members: int = 8, rng_init: int = 0, jitter: float | None = None):
    params = world.params if jitter is None else replace(world.params, jitter=jitter)
    return ToyEnsemblePredictor(params, n_members, rng_init)


class FiniteDifferencePredictor(EnsemblePredictorBase):
    """Wraps a predictor and replaces its gradients with central differences."""

    analytic_gradients = False

    def __init__(self, base: EnsemblePredictorBase, step: float = 1e-5):
        self.base = base
        self.step = step

    def evaluate(self, coords, types, pocket) -> MemberEvaluation:
        return self.base.evaluate(coords, types, pocket)

    def _grads(self, coords, types, pocket, target, objective):
        from .analysis import finite_difference_gradient

        coords = np.asarray(coords, float)
        types = np.asarray(types, float)

        def value(x, v):
            ev = self.base.evaluate(x, v, pocket)
            if objective == "maximize_mean":
                return float(ev.mu.mean())
            return float(gaussian_loglik_grads(ev, target)[0])

        gx = finite_difference_gradient(lambda x: value(x, types), coords, self.step)
        gv = finite_difference_gradient(lambda v: value(coords, v), types, self.step)
        return gx, gv


# ---------------------------------------------------------------------------
# Exact oracles


@dataclass
class DiscretePosterior:
    joint: np.ndarray  # shape (K,)*N
    marginals: np.ndarray  # N x K

    def probability(self, assignment) -> float:
        return float(self.joint[tuple(assignment)])


def enumerate_discrete_posterior(theta: DiscreteParamState, log_likelihood) -> DiscretePosterior:
    """Exact posterior over all K**N type assignments for tiny N and K.

    ``log_likelihood`` receives a tuple of class indices, one per atom.
    """
    n, k = theta.probs.shape
    if n > ENUMERATION_CAP or k > ENUMERATION_CAP:
        raise DimensionError(f"enumeration limited to N, K <= {ENUMERATION_CAP}, got N={n}, K={k}")
    log_post = np.empty((k,) * n)
    logp = np.log(theta.probs)
    for assignment in itertools.product(range(k), repeat=n):
        log_post[assignment] = logp[np.arange(n), assignment].sum() + log_likelihood(assignment)
    log_post -= log_post.max()
    joint = np.exp(log_post)
    joint /= joint.sum()
    marginals = np.stack([joint.sum(axis=tuple(a for a in range(n) if a != j)) for j in range(n)])
    return DiscretePosterior(joint, marginals)


@dataclass
class TiltedGaussian:
    mean: np.ndarray
    precision: float
    shift: np.ndarray


def gaussian_tilt_closed_form(
    theta: ContinuousParamState,
    alpha: float | None,
    c: float,
    target,
    y: np.ndarray | None = None,
) -> TiltedGaussian:
    """Mean of an isotropic Gaussian tilted by ``exp(-c |x - target|^2)``.

    With ``y`` and ``alpha`` given, the Gaussian is the conjugate posterior after
    observing ``y`` at precision ``alpha``; otherwise it is ``theta`` itself.
    """
    if c < 0:
        raise DomainError("tilt strength c must be nonnegative")
    if y is not None:
        rho = theta.precision + alpha
        base = (theta.precision * theta.mean + alpha * np.asarray(y, float)) / rho
    else:
        rho = theta.precision
        base = np.asarray(theta.mean, float)
    mean = (rho * base + 2.0 * c * np.asarray(target, float)) / (rho + 2.0 * c)
    return TiltedGaussian(mean=mean, precision=rho + 2.0 * c, shift=mean - base)
