"""Domain types shared across the package.

The population model has two cell types: stem cells (count ``x``) dividing at
rate ``lambda1``, symmetric with probability ``alpha``, and non-stem cells
(count ``y``) dividing at rate ``lambda2``, with de-differentiation
probability ``beta``.  All four division channels are births; nothing dies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

#: Fastest admissible division rate: one doubling per day.
LAMBDA_MAX = math.log(2.0)

#: Lower bound used for latent variances inside the sampler.
V_FLOOR = 1e-8

PARAM_NAMES = ("alpha", "beta", "lambda1", "lambda2")


@dataclass(frozen=True)
class ModelParams:
    """The four inferable parameters (alpha, beta, lambda1, lambda2).

    Probabilities live in [0, 1]; division rates in (0, ln 2].  Construction
    fails loudly for out-of-range values rather than clamping.
    """

    alpha: float
    beta: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha={self.alpha} outside [0, 1]")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta={self.beta} outside [0, 1]")
        for name in ("lambda1", "lambda2"):
            lam = getattr(self, name)
            if not (0.0 < lam <= LAMBDA_MAX):
                raise ValueError(f"{name}={lam} outside (0, ln 2]")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.lambda1, self.lambda2])

    @classmethod
    def from_array(cls, theta) -> "ModelParams":
        a, b, l1, l2 = (float(t) for t in theta)
        return cls(a, b, l1, l2)


class ModelVariant(Enum):
    """The four competing model hypotheses.

    ``FULL`` allows de-differentiation and distinct rates; the other three
    constrain ``beta == 0``, ``lambda1 == lambda2``, or both.
    """

    FULL = "full"
    EQUAL_RATES = "equal-rates"
    HIERARCHY = "hierarchy"
    HIERARCHY_EQUAL = "hierarchy-equal"

    @property
    def fixes_beta(self) -> bool:
        return self in (ModelVariant.HIERARCHY, ModelVariant.HIERARCHY_EQUAL)

    @property
    def ties_rates(self) -> bool:
        return self in (ModelVariant.EQUAL_RATES, ModelVariant.HIERARCHY_EQUAL)

    @property
    def free_parameters(self) -> tuple[str, ...]:
        names = ["alpha"]
        if not self.fixes_beta:
            names.append("beta")
        names.append("lambda1")
        if not self.ties_rates:
            names.append("lambda2")
        return tuple(names)

    @classmethod
    def from_label(cls, label: str) -> "ModelVariant":
        key = label.strip().lower().replace("_", "-")
        for variant in cls:
            if variant.value == key:
                return variant
        raise ValueError(f"unknown model variant {label!r}")


def clamp_to_variant(params: ModelParams, variant: ModelVariant) -> ModelParams:
    """Force ``params`` to satisfy the constraints of ``variant``."""
    beta = 0.0 if variant.fixes_beta else params.beta
    lambda2 = params.lambda1 if variant.ties_rates else params.lambda2
    if beta == params.beta and lambda2 == params.lambda2:
        return params
    return ModelParams(params.alpha, beta, params.lambda1, lambda2)


@dataclass(frozen=True)
class PopulationState:
    """Cell counts of one trajectory at time ``t`` (days)."""

    x: int
    y: int
    t: float = 0.0

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.x + self.y < 1:
            raise ValueError(f"invalid population state x={self.x}, y={self.y}")

    @property
    def total(self) -> int:
        return self.x + self.y

    @property
    def proportion(self) -> float:
        return self.x / (self.x + self.y)


@dataclass(frozen=True)
class Priors:
    """Box support of the flat priors.

    Defaults are Unif(0, 1) for both probabilities and Unif(0, ln 2] for both
    rates; override only deliberately.
    """

    alpha_range: tuple[float, float] = (0.0, 1.0)
    beta_range: tuple[float, float] = (0.0, 1.0)
    lambda_range: tuple[float, float] = (0.0, LAMBDA_MAX)

    def __post_init__(self):
        for name in ("alpha_range", "beta_range", "lambda_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: lower bound must be below upper")
        if self.lambda_range[0] < 0.0:
            raise ValueError("lambda_range must be non-negative")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper bound arrays in (alpha, beta, lambda1, lambda2) order."""
        lo = np.array([self.alpha_range[0], self.beta_range[0],
                       self.lambda_range[0], self.lambda_range[0]])
        hi = np.array([self.alpha_range[1], self.beta_range[1],
                       self.lambda_range[1], self.lambda_range[1]])
        return lo, hi

    def sample_params(self, rng: np.random.Generator,
                      variant: ModelVariant = ModelVariant.FULL) -> ModelParams:
        """Draw parameters from the prior, respecting variant constraints.

        The lower edge of the rate range is excluded (rates must be positive).
        """
        lo, hi = self.bounds()
        theta = rng.uniform(lo, hi)
        while theta[2] <= 0.0 or theta[3] <= 0.0:
            theta = rng.uniform(lo, hi)
        return clamp_to_variant(ModelParams.from_array(theta), variant)


def _readonly_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).copy()
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _check_times(times: np.ndarray):
    if times.size < 2:
        raise ValueError("need at least two time points")
    if not np.all(np.diff(times) > 0.0):
        raise ValueError("times must be strictly increasing")


@dataclass
class SummarySeries:
    """Sample mean/variance of the stem-cell proportion over a time grid.

    ``n`` is the number of underlying trajectories and ``n0`` the initial
    total cell count; neither is recoverable from the series itself.
    """

    times: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    n: int
    n0: float

    def __post_init__(self):
        self.times = _readonly_vector(self.times, "times")
        self.means = _readonly_vector(self.means, "means")
        self.variances = _readonly_vector(self.variances, "variances")
        _check_times(self.times)
        if not (self.means.size == self.variances.size == self.times.size):
            raise ValueError("times, means and variances must have equal length")
        if np.any(self.means < 0.0) or np.any(self.means > 1.0):
            raise ValueError("means must lie in [0, 1]")
        if np.any(self.variances < 0.0):
            raise ValueError("variances must be non-negative")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("n (trajectory count) must be an integer >= 2")
        self.n = int(self.n)
        if self.n0 < 1:
            raise ValueError("n0 (initial cell count) must be >= 1")
        self.n0 = float(self.n0)

    @property
    def k(self) -> int:
        """Number of observation intervals."""
        return self.times.size - 1


@dataclass
class TrajectorySeries:
    """Per-trajectory stem-cell proportions on a shared time grid."""

    times: np.ndarray
    r: np.ndarray
    n0: float

    def __post_init__(self):
        self.times = _readonly_vector(self.times, "times")
        _check_times(self.times)
        r = np.asarray(self.r, dtype=np.float64).copy()
        if r.ndim != 2 or r.shape[1] != self.times.size:
            raise ValueError("r must be (n, len(times))")
        if r.shape[0] < 1:
            raise ValueError("need at least one trajectory")
        if not np.all(np.isfinite(r)) or np.any(r < 0.0) or np.any(r > 1.0):
            raise ValueError("proportions must lie in [0, 1]")
        r.setflags(write=False)
        self.r = r
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        self.n0 = float(self.n0)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def k(self) -> int:
        return self.times.size - 1


@dataclass(frozen=True)
class MomentState:
    """Proportion mean/variance plus total population size at time ``t``."""

    mu: float
    sigma2: float
    nt: float
    t: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError(f"mu={self.mu} outside [0, 1]")
        if self.sigma2 < 0.0:
            raise ValueError(f"sigma2={self.sigma2} negative")
        if not self.nt > 0.0:
            raise ValueError(f"nt={self.nt} not positive")

    def proportion_bound_ok(self, tol: float = 1e-12) -> bool:
        """Whether sigma2 respects the variance bound of a [0, 1] variable.

        The moment dynamics themselves can break this bound near absorbing
        boundaries (the averaged variance equation injects lambda2/(2 N)
        noise even at mu = 0), so it is a diagnostic, not a constructor
        invariant.
        """
        return self.sigma2 <= self.mu * (1.0 - self.mu) + tol
