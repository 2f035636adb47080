"""Verification and comparison helpers.

Rotation-equivariance checks for predictors, per-step statistics over a batch of
trajectories, paired improvement metrics, and central finite differences.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, ShapeMismatchError
from .state import HybridMolecule, PocketContext, rotate_about
from .toy import EnsemblePredictorBase, MemberEvaluation
from .trajectory import TrajectoryRecord

VALUE_TOL = 1e-10
GRAD_TOL = 1e-8
FD_GRAD_TOL = 1e-3
STATS_COLUMNS = ("step", "t", "mean_score", "var_score", "mean_mu")


def random_rotation(seed: int) -> np.ndarray:
    """Haar-uniform proper rotation from the QR factorization of a Gaussian matrix."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))[None, :]
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def finite_difference_gradient(f: Callable[[np.ndarray], float], point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar field, one coordinate at a time."""
    if not h > 0:
        raise DomainError("finite-difference step must be positive")
    x = np.array(point, dtype=float)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"function is not finite near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Equivariance


@dataclass(frozen=True)
class EquivarianceReport:
    value_residual: float
    grad_residual: float
    types_grad_residual: float
    rotation: np.ndarray
    value_tol: float = VALUE_TOL
    grad_tol: float = GRAD_TOL

    @property
    def value_ok(self) -> bool:
        return self.value_residual < self.value_tol

    @property
    def grad_ok(self) -> bool:
        return self.grad_residual < self.grad_tol

    @property
    def types_ok(self) -> bool:
        return self.types_grad_residual == 0.0

    @property
    def passed(self) -> bool:
        return self.value_ok and self.grad_ok


def check_equivariance(
    predictor, m: HybridMolecule, pocket: PocketContext, rotation: np.ndarray, target: float = 0.0
) -> EquivarianceReport:
    """Rotate molecule and pocket together about the pocket center and compare.

    The value is the guidance log-likelihood; its coordinate gradient should rotate
    with the frame and its type gradient should not change at all.
    """
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3):
        raise ShapeMismatchError("rotation must be 3 x 3")
    c = pocket.center
    m_rot = HybridMolecule(rotate_about(m.coords, c, r), m.types)
    p_rot = pocket.rotated(r)
    v0 = predictor.log_likelihood(m.coords, m.types, pocket, target)
    v1 = predictor.log_likelihood(m_rot.coords, m_rot.types, p_rot, target)
    gx0, gv0 = predictor.grads(m.coords, m.types, pocket, target)
    gx1, gv1 = predictor.grads(m_rot.coords, m_rot.types, p_rot, target)
    grad_res = float(np.linalg.norm(gx1 - gx0 @ r.T))
    tol = GRAD_TOL if getattr(predictor, "analytic_gradients", True) else FD_GRAD_TOL
    return EquivarianceReport(
        value_residual=abs(v1 - v0),
        grad_residual=grad_res,
        types_grad_residual=float(np.max(np.abs(gv1 - gv0))),
        rotation=r,
        grad_tol=tol,
    )


class NonInvariantPredictor(EnsemblePredictorBase):
    """Negative control: adds the x-coordinate of atom 0 to every member mean."""

    def __init__(self, base: EnsemblePredictorBase):
        self.base = base

    def evaluate(self, coords, types, pocket) -> MemberEvaluation:
        ev = self.base.evaluate(coords, types, pocket)
        shift_g = np.zeros(np.shape(coords))
        shift_g[0, 0] = 1.0
        return MemberEvaluation(
            mu=ev.mu + float(np.asarray(coords)[0, 0]),
            var=ev.var,
            mu_gx=ev.mu_gx + shift_g[None],
            mu_gv=ev.mu_gv,
            var_gx=ev.var_gx,
            var_gv=ev.var_gv,
        )


# ---------------------------------------------------------------------------
# Trajectory statistics


@dataclass(frozen=True)
class TrajectoryStats:
    steps: np.ndarray
    t: np.ndarray
    mean_score: np.ndarray
    var_score: np.ndarray
    mean_mu: np.ndarray
    terminal_mean: float | None = None
    terminal_median: float | None = None
    terminal_deciles: tuple[float, ...] | None = None

    def final_quarter_variance(self) -> float:
        """Per-step score variance averaged over the last quarter of steps."""
        n = self.steps.size
        start = n - max(1, n // 4)
        return float(np.mean(self.var_score[start:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for row in zip(self.steps, self.t, self.mean_score, self.var_score, self.mean_mu):
            w.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "" if v is None or not np.isfinite(v) else repr(float(v))


def deciles(values: Sequence[float]) -> tuple[float, ...]:
    """10th..100th percentiles as order statistics (no interpolation)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise DimensionError("deciles of an empty set")
    return tuple(float(v) for v in np.percentile(arr, np.arange(10, 101, 10), method="inverted_cdf"))


def _field(records: Sequence[TrajectoryRecord], name: str) -> np.ndarray:
    return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in records], dtype=float)


def trajectory_stats(
    trajectories: Sequence[Sequence[TrajectoryRecord]], terminal_scores: Sequence[float] | None = None
) -> TrajectoryStats:
    """Per-step population mean and variance of the guidance score across chains.

    With a single trajectory the variance fields are NaN rather than zero.
    """
    if len(trajectories) < 1:
        raise DimensionError("trajectory statistics need at least one trajectory")
    lengths = {len(t) for t in trajectories}
    if len(lengths) != 1:
        raise ShapeMismatchError(f"ragged trajectories: step counts {sorted(lengths)}")
    scores = np.stack([_field(t, "guidance_score") for t in trajectories])
    mus = np.stack([_field(t, "predicted_mean") for t in trajectories])
    first = trajectories[0]
    extra = {}
    if terminal_scores is not None:
        ts = np.asarray(terminal_scores, dtype=float)
        extra = dict(terminal_mean=float(ts.mean()), terminal_median=float(np.median(ts)), terminal_deciles=deciles(ts))
    return TrajectoryStats(
        steps=np.array([r.step for r in first]),
        t=np.array([r.t for r in first], dtype=float),
        mean_score=scores.mean(axis=0),
        var_score=scores.var(axis=0) if len(trajectories) > 1 else np.full(scores.shape[1], np.nan),
        mean_mu=mus.mean(axis=0),
        **extra,
    )


def improvement_metric(guided: Sequence[float], unguided: Sequence[float]) -> tuple[float, float]:
    """Mean paired difference and strict win rate of ``guided`` over ``unguided``."""
    g = np.asarray(guided, dtype=float)
    u = np.asarray(unguided, dtype=float)
    if g.shape != u.shape or g.ndim != 1:
        raise ShapeMismatchError(f"paired score arrays differ: {g.shape} vs {u.shape}")
    if g.size == 0:
        raise DimensionError("no pairs to compare")
    return float(np.mean(g - u)), float(np.mean(g > u))
