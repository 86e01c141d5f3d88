"""Special functions, densities, random streams, and integration primitives.

Everything here is deterministic given its inputs.  Random generation goes
through :class:`RngStream`, a thin counter-based (Philox) stream keyed by
``(seed, stream_id)`` so that parallel and serial runs of a simulation draw
identical numbers regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, betaln, gammaln

from .errors import EstimationError

__all__ = [
    "RngStream",
    "DensityEstimate",
    "log_beta_fn",
    "beta_cdf",
    "beta_logpdf",
    "kde_unit_interval",
    "kde_interval",
    "trapezoid_integral",
]

_MASK64 = (1 << 64) - 1

# Purpose tags used when packing substream ids; keeps derived streams
# collision-free without hashing.  Layout: replicate * 2**20 + purpose * 2**10 + index.
PURPOSE_DATA = 1
PURPOSE_CHAIN = 2
PURPOSE_CONSISTENCY = 3
PURPOSE_DECISION = 4
PURPOSE_PREDICTIVE = 5
PURPOSE_MISC = 6


def pack_stream_id(replicate: int, purpose: int = 0, index: int = 0) -> int:
    """Pack (replicate, purpose, index) into a single 64-bit stream id.

    ``purpose`` and ``index`` must stay below 1024; replicates below 2**43.
    """
    if not (0 <= purpose < 1024 and 0 <= index < 1024 and 0 <= replicate < 1 << 43):
        raise ValueError("stream id component out of range")
    return (replicate << 20) | (purpose << 10) | index


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``.

    Two streams with the same identity produce bitwise-identical draw
    sequences; streams with distinct ``stream_id`` are independent Philox
    streams (the pair forms the 128-bit Philox key).
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        key = (self.stream_id << 64) | self.seed
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, replicate: int, purpose: int = 0, index: int = 0) -> "RngStream":
        """Derive a child stream; only valid from a root stream (stream_id 0)
        or with non-overlapping packed components."""
        return RngStream(self.seed, self.stream_id ^ pack_stream_id(replicate, purpose, index))


@dataclass(frozen=True)
class DensityEstimate:
    """A density tabulated on an ascending grid, normalised to unit mass."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        dens = np.asarray(self.density, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "density", dens)
        if grid.ndim != 1 or grid.shape != dens.shape or grid.size < 2:
            raise ValueError("grid and density must be 1-d arrays of equal length >= 2")
        if not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValueError("density values must be finite and non-negative")


def log_beta_fn(a: float, b: float) -> float:
    """Natural log of the Euler beta function B(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError(f"beta function arguments must be positive, got ({a}, {b})")
    return float(betaln(a, b))


def beta_cdf(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError(f"shape parameters must be positive, got ({a}, {b})")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    return float(betainc(a, b, x))


def beta_logpdf(x, a: float, b: float):
    """Log density of Beta(a, b); vectorized in ``x``."""
    if not (a > 0 and b > 0):
        raise ValueError(f"shape parameters must be positive, got ({a}, {b})")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)
    return out


def _silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    sd = samples.std(ddof=1)
    iqr = np.subtract(*np.percentile(samples, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def kde_interval(
    samples, low: float, high: float, grid_size: int = 512
) -> DensityEstimate:
    """Gaussian kernel density on [low, high] with boundary reflection.

    Bandwidth follows Silverman's rule of thumb.  Mass leaking past either
    boundary is folded back in, and the result is renormalised so the
    trapezoidal integral over the grid is exactly 1.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size < 10:
        raise EstimationError("need at least 10 samples for a density estimate")
    if np.any(samples < low) or np.any(samples > high):
        raise ValueError("samples fall outside the stated support")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    h = _silverman_bandwidth(samples)
    if not np.isfinite(h) or h <= 0:
        raise EstimationError("degenerate sample (zero spread); density is a spike")
    grid = np.linspace(low, high, grid_size)
    # reflect about both boundaries so no kernel mass escapes the support
    pts = np.concatenate([samples, 2 * low - samples, 2 * high - samples])
    z = (grid[:, None] - pts[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (samples.size * h * np.sqrt(2 * np.pi))
    mass = np.trapezoid(dens, grid)
    if mass <= 0:
        raise EstimationError("density estimate has no mass on the grid")
    return DensityEstimate(grid=grid, density=dens / mass)


def kde_unit_interval(samples, grid_size: int = 512) -> DensityEstimate:
    """Reflected Gaussian KDE on the unit interval (propensity-score support)."""
    return kde_interval(samples, 0.0, 1.0, grid_size)


def trapezoid_integral(f: DensityEstimate) -> float:
    """Trapezoidal-rule integral of a tabulated density over its grid."""
    return float(np.trapezoid(f.density, f.grid))


def log_binom_coeff(n, y):
    """Log of the binomial coefficient C(n, y); vectorized."""
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    return gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
