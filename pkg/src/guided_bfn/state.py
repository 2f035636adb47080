"""Value types shared by every sampler: molecules, pockets, BFN beliefs, schedules.

All types are frozen dataclasses holding read-only numpy arrays, so instances
can be shared between threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, InvalidStateError, ShapeMismatchError

SIMPLEX_TOL = 1e-9
CHANNELS = ("coords", "types")


def _frozen(a, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def check_simplex_rows(p: np.ndarray, name: str = "probs", tol: float = SIMPLEX_TOL) -> None:
    """Raise :class:`InvalidStateError` unless every row of ``p`` is a simplex point."""
    if not np.all(np.isfinite(p)):
        raise InvalidStateError(f"{name} contains non-finite entries")
    if np.any(p < 0.0):
        raise InvalidStateError(f"{name} has negative entries (min {p.min():.3g})")
    err = np.abs(p.sum(axis=-1) - 1.0)
    if np.any(err > tol):
        raise InvalidStateError(f"{name} rows do not sum to 1 (max error {err.max():.3g})")


def is_one_hot(p: np.ndarray) -> bool:
    p = np.asarray(p)
    return bool(np.all((p == 0.0) | (p == 1.0)) and np.all(p.sum(axis=-1) == 1.0))


def one_hot(indices, n_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=int)
    out = np.zeros((indices.shape[0], n_classes))
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


@dataclass(frozen=True)
class HybridMolecule:
    """N typed points: coordinates ``coords`` (N x 3) and type rows ``types`` (N x K)."""

    coords: np.ndarray
    types: np.ndarray

    def __post_init__(self):
        coords = _frozen(self.coords, "coords", 2)
        types = _frozen(self.types, "types", 2)
        if coords.shape[1] != 3:
            raise ShapeMismatchError(f"coords must be N x 3, got {coords.shape}")
        if coords.shape[0] < 1:
            raise DimensionError("a molecule needs at least one atom")
        if types.shape[0] != coords.shape[0]:
            raise ShapeMismatchError(f"{coords.shape[0]} coordinate rows but {types.shape[0]} type rows")
        if types.shape[1] < 2:
            raise DimensionError("need at least two atom classes")
        if not np.all(np.isfinite(coords)):
            raise InvalidStateError("coords contains non-finite entries")
        check_simplex_rows(types, "types")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "types", types)

    @property
    def n_atoms(self) -> int:
        return self.coords.shape[0]

    @property
    def n_classes(self) -> int:
        return self.types.shape[1]

    def class_indices(self) -> np.ndarray:
        return np.argmax(self.types, axis=1)

    def concrete(self) -> "HybridMolecule":
        """Return the molecule with each type row replaced by its argmax one-hot."""
        return HybridMolecule(self.coords, one_hot(self.class_indices(), self.n_classes))


def rotate_about(points: np.ndarray, center: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Rotate rows of ``points`` about ``center``.

    Written as a displacement so the identity rotation returns ``points`` bit for bit.
    """
    points = np.asarray(points, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    return points + (points - center) @ (rotation - np.eye(3)).T


@dataclass(frozen=True)
class PocketContext:
    """Pocket atoms, interaction hotspots and the pocket centroid.

    ``center`` is always recomputed from ``coords``.
    """

    coords: np.ndarray
    types: np.ndarray
    hotspots: np.ndarray

    def __post_init__(self):
        coords = _frozen(self.coords, "pocket coords", 2)
        types = _frozen(self.types, "pocket types", 2)
        hotspots = _frozen(self.hotspots, "hotspots", 2)
        if coords.shape[1] != 3 or hotspots.shape[1] != 3:
            raise ShapeMismatchError("pocket coords and hotspots must have 3 columns")
        if coords.shape[0] < 1:
            raise DimensionError("pocket needs at least one atom")
        if hotspots.shape[0] < 1:
            raise DimensionError("pocket needs at least one hotspot")
        if types.shape[0] != coords.shape[0]:
            raise ShapeMismatchError("pocket types/coords row mismatch")
        if not is_one_hot(types):
            raise InvalidStateError("pocket types must be one-hot rows")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "hotspots", hotspots)

    @property
    def center(self) -> np.ndarray:
        return self.coords.mean(axis=0)

    @property
    def n_classes(self) -> int:
        return self.types.shape[1]

    def centered(self) -> "PocketContext":
        c = self.center
        return PocketContext(self.coords - c, self.types, self.hotspots - c)

    def rotated(self, rotation: np.ndarray) -> "PocketContext":
        """Rotate pocket atoms and hotspots about the pocket center."""
        c = self.center
        return PocketContext(rotate_about(self.coords, c, rotation), self.types, rotate_about(self.hotspots, c, rotation))


@dataclass(frozen=True)
class ContinuousParamState:
    """Gaussian belief over coordinates: mean (N x 3) and one shared precision."""

    mean: np.ndarray
    precision: float

    def __post_init__(self):
        mean = _frozen(self.mean, "mean", 2)
        if not np.all(np.isfinite(mean)):
            raise InvalidStateError("coordinate mean contains non-finite entries")
        rho = float(self.precision)
        if not (np.isfinite(rho) and rho > 0.0):
            raise DomainError(f"precision must be positive and finite, got {rho}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", rho)


@dataclass(frozen=True)
class DiscreteParamState:
    """Categorical belief over atom types: one simplex row per atom."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, "probs", 2)
        check_simplex_rows(probs, "type probabilities")
        object.__setattr__(self, "probs", probs)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class NoisyObservation:
    """Sender draw ``payload`` for one channel at precision ``alpha``."""

    payload: np.ndarray
    channel: str
    alpha: float

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        payload = _frozen(self.payload, "payload", 2)
        if self.channel == "coords" and payload.shape[1] != 3:
            raise ShapeMismatchError(f"coords observation must be N x 3, got {payload.shape}")
        if not np.all(np.isfinite(payload)):
            raise InvalidStateError("observation contains non-finite entries")
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class AccuracySchedule:
    """Per-step sender precisions for both channels over an n-step run."""

    alpha_coords: np.ndarray
    alpha_types: np.ndarray
    rho_0: float
    sigma1: float | None = None
    beta1: float | None = None

    def __post_init__(self):
        ax = _frozen(self.alpha_coords, "alpha_coords", 1)
        av = _frozen(self.alpha_types, "alpha_types", 1)
        if ax.shape != av.shape or ax.size < 1:
            raise DimensionError("alpha_coords and alpha_types must be non-empty and equally long")
        if np.any(ax <= 0) or np.any(av <= 0):
            raise DomainError("all accuracies must be positive")
        if not self.rho_0 > 0:
            raise DomainError(f"rho_0 must be positive, got {self.rho_0}")
        object.__setattr__(self, "alpha_coords", ax)
        object.__setattr__(self, "alpha_types", av)
        object.__setattr__(self, "rho_0", float(self.rho_0))

    @property
    def n_steps(self) -> int:
        return self.alpha_coords.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) / self.n_steps

    @property
    def final_precision(self) -> float:
        return self.rho_0 + float(np.sum(self.alpha_coords))


def new_prior_state(n_atoms: int, n_classes: int, rho_0: float = 1.0) -> tuple[ContinuousParamState, DiscreteParamState]:
    """Zero coordinate means at precision ``rho_0`` and uniform type rows."""
    if n_atoms < 1:
        raise DimensionError(f"n_atoms must be >= 1, got {n_atoms}")
    if n_classes < 2:
        raise DimensionError(f"n_classes must be >= 2, got {n_classes}")
    if not rho_0 > 0:
        raise DomainError(f"rho_0 must be positive, got {rho_0}")
    return (
        ContinuousParamState(np.zeros((n_atoms, 3)), rho_0),
        DiscreteParamState(np.full((n_atoms, n_classes), 1.0 / n_classes)),
    )


def build_schedule(n_steps: int, sigma1: float = 0.03, beta1: float = 4.0, rho_0: float = 1.0) -> AccuracySchedule:
    """Discrete-time accuracy schedule of Graves et al. for both channels.

    Coordinates: ``alpha_i = sigma1**(-2i/n) * (1 - sigma1**(2/n))``, which sums to
    ``sigma1**-2 - 1``. Types: ``alpha_i = beta1 * (2i - 1) / n**2``, which sums to ``beta1``.
    """
    if n_steps < 1:
        raise DimensionError(f"n_steps must be >= 1, got {n_steps}")
    if not 0.0 < sigma1 < 1.0:
        raise DomainError(f"sigma1 must lie in (0, 1), got {sigma1}")
    if not beta1 > 0:
        raise DomainError(f"beta1 must be positive, got {beta1}")
    i = np.arange(1, n_steps + 1, dtype=float)
    alpha_x = sigma1 ** (-2.0 * i / n_steps) * (1.0 - sigma1 ** (2.0 / n_steps))
    alpha_v = beta1 * (2.0 * i - 1.0) / n_steps**2
    return AccuracySchedule(alpha_x, alpha_v, rho_0, sigma1=sigma1, beta1=beta1)


def format_molecule(mol: HybridMolecule) -> str:
    lines = [f"{mol.n_atoms} {mol.n_classes}"]
    for (x, y, z), k in zip(mol.coords, mol.class_indices()):
        lines.append(f"{x:.9g} {y:.9g} {z:.9g} {k}")
    return "\n".join(lines) + "\n"


def write_molecule(mol: HybridMolecule, path) -> None:
    Path(path).write_text(format_molecule(mol), encoding="utf-8")


def read_molecule(path) -> HybridMolecule:
    """Parse a text dump; type rows come back one-hot."""
    rows = Path(path).read_text(encoding="utf-8").split("\n")
    n, k = (int(v) for v in rows[0].split())
    body = [r.split() for r in rows[1 : n + 1]]
    if len(body) != n or any(len(r) != 4 for r in body):
        raise InvalidStateError(f"malformed molecule dump {path}")
    coords = np.array([[float(v) for v in r[:3]] for r in body])
    return HybridMolecule(coords, one_hot([int(r[3]) for r in body], k))
