"""Search-space box and observation records shared across modules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class BoxDomain:
    """Axis-aligned compact search space [lower_g, upper_g] per dimension."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"domain needs lower < upper per dimension, got {lo} / {hi}")

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def edge(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> bool:
        p = np.asarray(x, dtype=float)
        return bool(np.all(p >= self.lower - atol) and np.all(p <= self.upper + atol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.edge

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.edge


def unit_box(dimension: int) -> BoxDomain:
    return BoxDomain(np.zeros(dimension), np.ones(dimension))


@dataclass(frozen=True, eq=False)
class Observation:
    """One (possibly noisy) function evaluation."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True, eq=False)
class VirtualSignObservation:
    """Derivative-sign pseudo-datum on the boundary.

    ``sign`` follows the outward-gradient convention: -1 on a lower face,
    +1 on an upper face, so the asserted gradient component points out of
    the box.  No objective evaluation is attached.
    """

    x: np.ndarray
    dim: int
    sign: int

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be -1 or +1, got {self.sign}")
        if not 0 <= self.dim < self.x.shape[0]:
            raise ValueError(f"dim {self.dim} out of range for point of shape {self.x.shape}")

    def validate_on_border(self, domain: BoxDomain) -> None:
        """Check the side/sign invariant against a concrete domain."""
        coord = self.x[self.dim]
        if coord == domain.lower[self.dim]:
            expected = -1
        elif coord == domain.upper[self.dim]:
            expected = 1
        else:
            raise ValueError(f"coordinate {coord} of dim {self.dim} is not on a border")
        if self.sign != expected:
            raise ValueError(f"sign {self.sign} conflicts with border side (expected {expected})")
