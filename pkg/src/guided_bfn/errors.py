"""Exception types raised across the package."""

from __future__ import annotations


class GuidedBFNError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(GuidedBFNError, ValueError):
    """A size argument (atom count, class count, step count) is invalid."""


class DomainError(GuidedBFNError, ValueError):
    """A scalar argument lies outside its admissible range."""


class ShapeMismatchError(GuidedBFNError, ValueError):
    """Array shapes of two related arguments disagree."""


class InvalidStateError(GuidedBFNError, ValueError):
    """A value violates a type invariant (simplex rows, finiteness, one-hot)."""


class SamplingError(GuidedBFNError, RuntimeError):
    """A sampler failed part-way through a chain.

    The original exception is chained as ``__cause__``.
    """

    def __init__(self, message: str, step: int, chain: int | None = None):
        self.detail = message
        self.step = step
        self.chain = chain
        where = f"step {step}" if chain is None else f"chain {chain}, step {step}"
        super().__init__(f"{where}: {message}")


class ConfigError(GuidedBFNError, ValueError):
    """Run configuration failed validation; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
