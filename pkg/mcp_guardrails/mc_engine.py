"""Reproducible randomness, Monte Carlo estimation and quadrature oracles.

Random streams are counter based: a stream is a root seed plus a path of integers, and
the generator for a path is a Philox generator keyed by ``SeedSequence(root, spawn_key=path)``.
Monte Carlo work is cut into fixed-size chunks, chunk ``i`` draws from ``stream.child(i)``,
and chunk moments are merged by a fixed-order pairwise reduction, so results do not depend
on how many threads did the work.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import integrate, stats

from mcp_guardrails.errors import ArgumentError, ConvergenceError, DomainError

logger = logging.getLogger("mcp-guardrails")

DEFAULT_CONFIDENCE = 0.99
DEFAULT_CHUNK_SIZE = 1 << 16
DEFAULT_TOL = 1e-8
MAX_SUBDIVISIONS = 200

Sampler = Callable[[np.random.Generator, int], np.ndarray]
PointsSpec = Union[Sequence[float], Callable[[float], Sequence[float]]]


class EstimationMethod(str, Enum):
    """How an estimate was produced."""

    MONTE_CARLO = "monte-carlo"
    QUADRATURE = "quadrature"
    EXACT = "exact"

    @classmethod
    def values(cls) -> list[str]:
        return [method.value for method in cls]


@dataclass(frozen=True)
class RngStream:
    """A root seed and a path naming one reproducible sub-stream."""

    root_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < 2**64:
            raise ArgumentError(
                f"root seed must be a 64-bit unsigned integer, got {self.root_seed}"
            )
        path = tuple(int(i) for i in self.path)
        if any(i < 0 for i in path):
            raise ArgumentError(f"stream path entries must be nonnegative, got {path}")
        object.__setattr__(self, "root_seed", int(self.root_seed))
        object.__setattr__(self, "path", path)

    def child(self, *indices: int) -> "RngStream":
        """Derive the sub-stream ``path + indices``."""
        return RngStream(self.root_seed, self.path + tuple(indices))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class EstimateWithCI:
    """A point estimate with a symmetric confidence half-width.

    For quadrature the half-width is the a-posteriori error bound.
    """

    mean: float
    half_width: float
    n_samples: int
    method: EstimationMethod = EstimationMethod.MONTE_CARLO

    def __post_init__(self):
        if not self.half_width >= 0:
            raise ArgumentError(f"half_width must be nonnegative, got {self.half_width}")

    @classmethod
    def exact(cls, value: float) -> "EstimateWithCI":
        return cls(float(value), 0.0, 0, EstimationMethod.EXACT)

    @property
    def lower(self) -> float:
        return self.mean - self.half_width

    @property
    def upper(self) -> float:
        return self.mean + self.half_width

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack

    def agrees_with(self, other: "EstimateWithCI", slack: float = 0.0) -> bool:
        """True when the two intervals overlap (within ``slack``)."""
        return abs(self.mean - other.mean) <= self.half_width + other.half_width + slack

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "half_width": self.half_width,
            "n_samples": self.n_samples,
            "method": self.method.value,
        }


def z_value(confidence: float) -> float:
    """Two-sided normal quantile for ``confidence``."""
    if not 0.0 < confidence < 1.0:
        raise ArgumentError(f"confidence must lie in (0, 1), got {confidence}")
    return float(stats.norm.ppf(0.5 + confidence / 2.0))


@dataclass(frozen=True)
class SampleMoments:
    """Count, mean vector and co-moment matrix of a block of vector samples."""

    n: int
    mean: np.ndarray
    comoment: np.ndarray = field(repr=False)

    @classmethod
    def from_block(cls, block: np.ndarray) -> "SampleMoments":
        mean = block.mean(axis=0)
        centered = block - mean
        return cls(block.shape[0], mean, centered.T @ centered)

    def merge(self, other: "SampleMoments") -> "SampleMoments":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        comoment = self.comoment + other.comoment + np.outer(delta, delta) * (self.n * other.n / n)
        return SampleMoments(n, mean, comoment)

    @property
    def dimension(self) -> int:
        return int(self.mean.shape[0])

    @property
    def covariance(self) -> np.ndarray:
        return self.comoment / (self.n - 1)

    def estimate_function(
        self, value: float, gradient: Sequence[float], confidence: float = DEFAULT_CONFIDENCE
    ) -> EstimateWithCI:
        """Delta-method interval for a smooth function of the column means."""
        g = np.asarray(gradient, dtype=float)
        variance = max(float(g @ self.covariance @ g), 0.0)
        half_width = z_value(confidence) * math.sqrt(variance / self.n)
        return EstimateWithCI(float(value), half_width, self.n)

    def estimate_linear(
        self, weights: Sequence[float], confidence: float = DEFAULT_CONFIDENCE
    ) -> EstimateWithCI:
        w = np.asarray(weights, dtype=float)
        return self.estimate_function(float(w @ self.mean), w, confidence)

    def estimate(self, index: int, confidence: float = DEFAULT_CONFIDENCE) -> EstimateWithCI:
        weights = np.zeros(self.dimension)
        weights[index] = 1.0
        return self.estimate_linear(weights, confidence)


def _pairwise_merge(parts: list[SampleMoments]) -> SampleMoments:
    while len(parts) > 1:
        merged = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]


def chunk_sizes(n: int, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[int]:
    if chunk_size < 1:
        raise ArgumentError(f"chunk_size must be positive, got {chunk_size}")
    sizes = [chunk_size] * (n // chunk_size)
    if n % chunk_size:
        sizes.append(n % chunk_size)
    return sizes


def accumulate_moments(
    sampler: Sampler,
    n: int,
    stream: RngStream,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> SampleMoments:
    """Draw ``n`` vector samples and return their merged moments.

    ``sampler(rng, size)`` returns an array of shape ``(size,)`` or ``(size, k)``.
    """
    if n < 2:
        raise ArgumentError(f"Monte Carlo estimation needs n >= 2, got {n}")
    sizes = chunk_sizes(n, chunk_size)

    def run_chunk(index: int) -> SampleMoments:
        rng = stream.child(index).generator()
        block = np.asarray(sampler(rng, sizes[index]), dtype=float)
        if block.ndim == 1:
            block = block[:, None]
        if block.shape[0] != sizes[index]:
            raise ArgumentError(
                f"sampler returned {block.shape[0]} rows for a chunk of {sizes[index]}"
            )
        bad = ~np.isfinite(block)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise DomainError(
                f"non-finite sample {block[row, col]!r} at draw {index * chunk_size + row} "
                f"(column {col})"
            )
        return SampleMoments.from_block(block)

    if workers > 1 and len(sizes) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(run_chunk, range(len(sizes))))
    else:
        parts = [run_chunk(i) for i in range(len(sizes))]
    return _pairwise_merge(parts)


def estimate_mean(
    sampler: Sampler,
    n: int,
    stream: RngStream,
    confidence: float = DEFAULT_CONFIDENCE,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> EstimateWithCI:
    """Sample mean with a CLT confidence interval."""
    moments = accumulate_moments(sampler, n, stream, chunk_size, workers)
    if moments.dimension != 1:
        raise ArgumentError("estimate_mean needs a scalar sampler; use accumulate_moments")
    return moments.estimate(0, confidence)


def _split_points(a: float, b: float, points: Iterable[float]) -> list[float]:
    inner = sorted({float(p) for p in points if math.isfinite(p) and a < p < b})
    return [a, *inner, b]


def _quad_piece(f: Callable[[float], float], a: float, b: float, tol: float, limit: int):
    result = integrate.quad(
        lambda x: float(f(x)), a, b, epsabs=tol, epsrel=tol, limit=limit, full_output=1
    )
    value, abserr, info = result[0], result[1], result[2]
    if len(result) > 3:
        # a flagged piece still counts when its error meets the requested tolerance
        if not (math.isfinite(value) and abserr <= max(tol, tol * abs(value))):
            partial = EstimateWithCI(
                float(value) if math.isfinite(value) else 0.0,
                float(abserr) if math.isfinite(abserr) else math.inf,
                int(info.get("neval", 0)),
                EstimationMethod.QUADRATURE,
            )
            raise ConvergenceError(
                f"quadrature on [{a}, {b}] did not converge: {result[3]}", partial=partial
            )
        logger.debug(f"quad on [{a}, {b}] flagged ({result[3]}) but error {abserr:.3g} accepted")
    return float(value), float(abserr), int(info.get("neval", 0))


def quadrature_1d(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = DEFAULT_TOL,
    points: Sequence[float] = (),
    limit: int = MAX_SUBDIVISIONS,
) -> EstimateWithCI:
    """Adaptive Gauss-Kronrod integral of ``f`` over ``(a, b)``; bounds may be infinite.

    ``points`` are known discontinuities; the interval is split there before
    integrating, which also lets break points coexist with infinite bounds.
    """
    if a == b:
        return EstimateWithCI(0.0, 0.0, 0, EstimationMethod.QUADRATURE)
    if a > b:
        flipped = quadrature_1d(f, b, a, tol, points, limit)
        return EstimateWithCI(-flipped.mean, flipped.half_width, flipped.n_samples, flipped.method)

    total, error, neval = 0.0, 0.0, 0
    edges = _split_points(a, b, points)
    for left, right in zip(edges[:-1], edges[1:]):
        try:
            value, abserr, count = _quad_piece(f, left, right, tol, limit)
        except ConvergenceError as exc:
            partial = exc.partial
            exc.partial = EstimateWithCI(
                total + partial.mean,
                error + partial.half_width,
                neval + partial.n_samples,
                EstimationMethod.QUADRATURE,
            )
            raise
        total += value
        error += abserr
        neval += count
    return EstimateWithCI(total, error, neval, EstimationMethod.QUADRATURE)


def quadrature_2d(
    f: Callable[[float, float], float],
    outer: tuple[float, float],
    inner: tuple[float, float],
    tol: float = DEFAULT_TOL,
    outer_points: Sequence[float] = (),
    inner_points: Optional[PointsSpec] = None,
    limit: int = MAX_SUBDIVISIONS,
) -> EstimateWithCI:
    """Integral of ``f(x, y)`` over ``outer x inner`` by nested adaptive rules.

    ``inner_points`` may depend on the outer coordinate (a callable), which is how
    indicator edges such as ``y = x`` are handed to the inner rule. The error bound is
    the outer rule's error plus the integral of the inner rules' errors.
    """
    c, d = inner
    cache: dict[float, EstimateWithCI] = {}

    def inner_estimate(x: float) -> EstimateWithCI:
        estimate = cache.get(x)
        if estimate is None:
            if callable(inner_points):
                pts = inner_points(x)
            else:
                pts = inner_points or ()
            estimate = quadrature_1d(lambda y: f(x, y), c, d, tol, pts, limit)
            cache[x] = estimate
        return estimate

    value = quadrature_1d(
        lambda x: inner_estimate(x).mean, outer[0], outer[1], tol, outer_points, limit
    )
    try:
        spread = quadrature_1d(
            lambda x: inner_estimate(x).half_width,
            outer[0],
            outer[1],
            max(tol, 1e-6),
            outer_points,
            limit,
        )
        inner_error = abs(spread.mean) + spread.half_width
    except ConvergenceError:
        widest = max((e.half_width for e in cache.values()), default=0.0)
        length = outer[1] - outer[0]
        inner_error = widest * abs(length) if math.isfinite(length) else math.inf
        logger.warning(f"inner error spread did not converge; bounding by {inner_error:.3g}")
    neval = value.n_samples + sum(e.n_samples for e in cache.values())
    return EstimateWithCI(
        value.mean, value.half_width + inner_error, neval, EstimationMethod.QUADRATURE
    )
