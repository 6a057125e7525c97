"""Log-density kernels for summary and trajectory data.

One-step conditional densities of the sample mean/variance pair, the
single-trajectory transition density, and the flat log prior.  Support
violations evaluate to ``-inf`` rather than raising, so Metropolis steps can
reject cheaply.

These are the plain-NumPy reference implementations; the sampler uses the
compiled twins in ``_kernels`` and the test suite pins the two routes
together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import gammaln

from .dynamics import improved_euler_step, nt_mean_constraint, \
    nt_mean_constraint_thirds
from .model import ModelParams, ModelVariant, Priors, SummarySeries

if TYPE_CHECKING:  # pragma: no cover
    from .mcmc import AugmentedData

NEG_INF = float("-inf")


@dataclass(frozen=True)
class StepDensityInput:
    """One transition of the summary statistics between grid neighbours."""

    m_prev: float
    v_prev: float
    m_next: float
    v_next: float
    n: int
    n_prev: float
    n_next: float
    dt: float

    def __post_init__(self):
        if self.v_prev < 0.0 or self.v_next < 0.0:
            raise ValueError("variances must be non-negative")
        if self.n < 2:
            raise ValueError("need at least two trajectories")
        if self.n_prev <= 0.0 or self.n_next <= 0.0:
            raise ValueError("population sizes must be positive")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")


def _scaled_chi2_logpdf(v: float, sigma: float, n: int) -> float:
    """Log density of V ~ sigma/(n-1) * ChiSquare(n-1) at v."""
    hn1 = 0.5 * (n - 1.0)
    if v > 0.0:
        return (hn1 * math.log((n - 1.0) / (2.0 * sigma))
                + (hn1 - 1.0) * math.log(v)
                - gammaln(hn1)
                - 0.5 * (n - 1.0) * v / sigma)
    if n > 3:
        return NEG_INF
    if n == 3:
        return hn1 * math.log((n - 1.0) / (2.0 * sigma)) - gammaln(hn1)
    return math.inf


def step_logdensity_summary(inp: StepDensityInput,
                            params: ModelParams) -> float:
    """Log f(m_next, v_next | m_prev, v_prev) for one grid step.

    The previous-step moments are plugged in from the data, the next-step
    moments come from the improved-Euler map, and the mean and variance
    factors are independent: M ~ Normal(A, Sigma/n) and
    V ~ Sigma/(n-1) * ChiSquare(n-1).
    """
    for name in ("m_prev", "v_prev", "m_next", "v_next"):
        if math.isnan(getattr(inp, name)):
            raise ValueError(f"{name} is NaN")
    step = improved_euler_step(inp.m_prev, inp.v_prev, inp.n_prev, inp.n_next,
                               inp.dt, params)
    if not step.valid or not math.isfinite(step.sigma):
        return NEG_INF
    n = inp.n
    ll = (0.5 * math.log(n / (2.0 * math.pi * step.sigma))
          - 0.5 * n * (inp.m_next - step.a) ** 2 / step.sigma)
    return ll + _scaled_chi2_logpdf(inp.v_next, step.sigma, n)


def step_logdensity_trajectory(r_prev: float, r_next: float, dt: float,
                               n_prev: float, n_next: float,
                               params: ModelParams) -> float:
    """Log density of one single-trajectory transition.

    The variance recursion starts from zero at every observed point, so the
    transition is Normal(r_next; A(r_prev), Sigma(r_prev, 0)).
    """
    if not (0.0 <= r_prev <= 1.0 and 0.0 <= r_next <= 1.0):
        raise ValueError("proportions must lie in [0, 1]")
    step = improved_euler_step(r_prev, 0.0, n_prev, n_next, dt, params)
    if not step.valid or not math.isfinite(step.sigma):
        return NEG_INF
    return (-0.5 * math.log(2.0 * math.pi * step.sigma)
            - 0.5 * (r_next - step.a) ** 2 / step.sigma)


def refined_series(data: SummarySeries, aug: "AugmentedData | None"):
    """Interleave observed and latent values on the thirds-refined grid.

    Returns (times, means, variances); with ``aug=None`` the observed grid is
    returned unchanged.
    """
    if aug is None:
        return data.times.copy(), data.means.copy(), data.variances.copy()
    k = data.k
    if len(aug.m_mis) != 2 * k or len(aug.v_mis) != 2 * k:
        raise ValueError("augmentation does not match the observed grid "
                         f"(expected {2 * k} latent values per array)")
    times = np.empty(3 * k + 1)
    means = np.empty(3 * k + 1)
    variances = np.empty(3 * k + 1)
    times[::3] = data.times
    means[::3] = data.means
    variances[::3] = data.variances
    for i in range(k):
        step = (data.times[i + 1] - data.times[i]) / 3.0
        times[3 * i + 1] = data.times[i] + step
        times[3 * i + 2] = data.times[i] + 2.0 * step
        means[3 * i + 1] = aug.m_mis[2 * i]
        means[3 * i + 2] = aug.m_mis[2 * i + 1]
        variances[3 * i + 1] = aug.v_mis[2 * i]
        variances[3 * i + 2] = aug.v_mis[2 * i + 1]
    return times, means, variances


def loglik_summary(data: SummarySeries, aug: "AugmentedData | None",
                   params: ModelParams) -> float:
    """Total log likelihood of a summary series.

    Sums the one-step log densities over consecutive pairs of the (possibly
    thirds-refined) grid; the density of the initial point is treated as
    constant.  Population sizes come from the mean constraint, with the
    partial-trapezoid rule at latent sub-grid points.
    """
    times, means, variances = refined_series(data, aug)
    if aug is None:
        npath = nt_mean_constraint(data.n0, times, means,
                                   params.lambda1, params.lambda2)
    else:
        npath = nt_mean_constraint_thirds(data.n0, data.times, data.means,
                                          aug.m_mis, params.lambda1,
                                          params.lambda2)
    total = 0.0
    for s in range(times.size - 1):
        inp = StepDensityInput(m_prev=means[s], v_prev=variances[s],
                               m_next=means[s + 1], v_next=variances[s + 1],
                               n=data.n, n_prev=npath[s], n_next=npath[s + 1],
                               dt=times[s + 1] - times[s])
        total += step_logdensity_summary(inp, params)
        if total == NEG_INF:
            return NEG_INF
    return total


def log_prior(params: ModelParams, priors: Priors,
              variant: ModelVariant) -> float:
    """Flat prior log density over the variant's free parameters."""
    lo, hi = priors.bounds()
    theta = params.as_array()
    total = 0.0
    for i, name in enumerate(("alpha", "beta", "lambda1", "lambda2")):
        if name == "beta" and variant.fixes_beta:
            continue
        if name == "lambda2" and variant.ties_rates:
            continue
        if not (lo[i] <= theta[i] <= hi[i]):
            return NEG_INF
        if name.startswith("lambda") and theta[i] <= lo[i]:
            return NEG_INF
        total -= math.log(hi[i] - lo[i])
    return total
