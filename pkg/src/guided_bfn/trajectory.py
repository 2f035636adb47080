"""Per-step trajectory records and their JSON Lines form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Always written, null when not applicable to the sampler.
BASE_FIELDS = ("step", "t", "rho", "guidance_score", "theta_x_norm", "theta_v_entropy", "rng_counter")
# Written only when the sampler computed them.
GUIDANCE_FIELDS = ("predicted_mean", "aleatoric", "epistemic", "total_variance", "grad_coords_norm", "grad_types_norm")


@dataclass
class TrajectoryRecord:
    step: int
    t: float
    rho: float | None
    theta_x_norm: float
    theta_v_entropy: float
    rng_counter: int
    guidance_score: float | None = None
    predicted_mean: float | None = None
    aleatoric: float | None = None
    epistemic: float | None = None
    total_variance: float | None = None
    grad_coords_norm: float | None = None
    grad_types_norm: float | None = None
    variant: str | None = None
    # in-memory snapshots, never serialized
    theta_x: np.ndarray | None = field(default=None, repr=False, compare=False)
    theta_v: np.ndarray | None = field(default=None, repr=False, compare=False)
    x_hat: np.ndarray | None = field(default=None, repr=False, compare=False)
    v_hat: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_json_dict(self) -> dict:
        out = {name: getattr(self, name) for name in BASE_FIELDS}
        for name in GUIDANCE_FIELDS:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.variant is not None:
            out["variant"] = self.variant
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrajectoryRecord":
        known = set(BASE_FIELDS) | set(GUIDANCE_FIELDS) | {"variant"}
        return cls(**{k: v for k, v in d.items() if k in known})


def mean_entropy(probs: np.ndarray) -> float:
    p = np.asarray(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return float(terms.sum(axis=1).mean())


def dumps_jsonl(records: list[TrajectoryRecord]) -> str:
    return "".join(json.dumps(r.to_json_dict(), sort_keys=True) + "\n" for r in records)


def write_jsonl(records: list[TrajectoryRecord], path) -> None:
    Path(path).write_text(dumps_jsonl(records), encoding="utf-8")


def read_jsonl(path) -> list[TrajectoryRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TrajectoryRecord.from_json_dict(json.loads(line)) for line in lines if line.strip()]
