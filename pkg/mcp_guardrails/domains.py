"""Bounded covariate domains on which linear functionals have exact extremes."""

import itertools
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from mcp_guardrails.errors import ArgumentError


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[lower_i, upper_i]``.

    A side with ``lower_i == upper_i`` is a fixed coordinate.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise ArgumentError("box bounds must be nonempty and of equal length")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise ArgumentError(f"box lower corner {lower} exceeds upper corner {upper}")
        if not all(np.isfinite(lower + upper)):
            raise ArgumentError("box domains must be bounded")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dimension: int) -> "BoxDomain":
        return cls((0.0,) * dimension, (1.0,) * dimension)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def extremes(self, beta: Sequence[float]) -> tuple[float, float]:
        """``(min, max)`` of ``w @ beta`` over the box, by vertex enumeration."""
        values = self.vertices() @ np.asarray(beta, dtype=float)
        return float(values.min()), float(values.max())

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(np.array(self.lower), np.array(self.upper), size=(size, self.dimension))

    def grid(self, points_per_axis: int) -> np.ndarray:
        axes = [
            np.linspace(lo, hi, points_per_axis if hi > lo else 1)
            for lo, hi in zip(self.lower, self.upper)
        ]
        return np.array(list(itertools.product(*axes)), dtype=float)


@dataclass(frozen=True)
class PointSetDomain:
    """A finite set of covariate vectors, sampled uniformly."""

    points: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        points = tuple(tuple(float(v) for v in p) for p in self.points)
        if not points or len({len(p) for p in points}) != 1:
            raise ArgumentError("a point set needs at least one point and a common dimension")
        object.__setattr__(self, "points", points)

    @property
    def dimension(self) -> int:
        return len(self.points[0])

    def vertices(self) -> np.ndarray:
        return np.array(self.points, dtype=float)

    def extremes(self, beta: Sequence[float]) -> tuple[float, float]:
        values = self.vertices() @ np.asarray(beta, dtype=float)
        return float(values.min()), float(values.max())

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.vertices()[rng.integers(0, len(self.points), size=size)]

    def grid(self, points_per_axis: int = 0) -> np.ndarray:
        return self.vertices()


Domain = Union[BoxDomain, PointSetDomain]
