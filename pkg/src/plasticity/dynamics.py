"""Deterministic moment dynamics of the stem-cell proportion.

Right-hand sides of the mean/variance system, the improved-Euler
(predictor/corrector) one-step map used by the likelihood, the population-size
constraints that close the system, and a high-accuracy RK4 reference solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .model import ModelParams, MomentState


def mean_rhs(mu: float, params: ModelParams) -> float:
    """d(mean)/dt: quadratic polynomial in the proportion mean.

    (l2 - l1) mu^2 + [l1 a - l2 (1 + b)] mu + l2 b
    """
    a, b = params.alpha, params.beta
    l1, l2 = params.lambda1, params.lambda2
    return ((l2 - l1) * mu + (l1 * a - l2 * (1.0 + b))) * mu + l2 * b


def var_rhs(mu: float, sigma2: float, nt: float, params: ModelParams) -> float:
    """d(variance)/dt at population size ``nt``.

    The 1/(2 nt) terms inject sampling noise; they vanish in the
    infinite-population limit.
    """
    if nt <= 0.0:
        raise ValueError("nt must be positive")
    a, b = params.alpha, params.beta
    l1, l2 = params.lambda1, params.lambda2
    return ((2.0 * (l1 * a - l2 * b) - (l1 + l2)) * sigma2
            + 2.0 * (l2 - l1) * mu * sigma2
            + ((l1 - l2) * mu + l2) / (2.0 * nt))


def equilibrium_mu(params: ModelParams) -> float:
    """Stable root of the mean equation inside [0, 1].

    The mean polynomial satisfies p(0) >= 0 >= p(1), so a root always exists;
    the stable one is where p crosses from positive to negative.
    """
    a = params.lambda2 - params.lambda1
    b = params.lambda1 * params.alpha - params.lambda2 * (1.0 + params.beta)
    c = params.lambda2 * params.beta
    eps = 1e-12

    if abs(a) < 1e-14:
        if abs(b) < 1e-14:
            # only reachable at alpha=1, beta=0 with equal rates: every mu
            # is a fixed point, there is no unique equilibrium
            raise ValueError("mean dynamics are identically zero; "
                             "equilibrium undefined")
        root = -c / b
        if not -eps <= root <= 1.0 + eps:
            raise AssertionError("no equilibrium in [0, 1]")
        return min(max(root, 0.0), 1.0)

    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise AssertionError("no real equilibrium; invalid parameters")
    sq = np.sqrt(disc)
    roots = [r for r in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a))
             if -eps <= r <= 1.0 + eps]
    if not roots:
        raise AssertionError("no equilibrium in [0, 1]")
    # stable: derivative 2 a r + b < 0; fall back to the double root
    stable = [r for r in roots if 2.0 * a * r + b < 0.0]
    root = stable[0] if stable else roots[0]
    return min(max(root, 0.0), 1.0)


def nt_mean_constraint(n0: float, times, means, lambda1: float,
                       lambda2: float) -> np.ndarray:
    """Population size along a grid from the mean-consistency constraint.

    N(t_k) = N0 exp{(l1 - l2) * trapezoid(means, up to t_k) + l2 (t_k - t_0)}.
    """
    times = np.asarray(times, dtype=float)
    means = np.asarray(means, dtype=float)
    if times.shape != means.shape:
        raise ValueError("times and means must have the same length")
    dt = np.diff(times)
    if np.any(dt <= 0.0):
        raise ValueError("times must be strictly increasing")
    trap = np.concatenate(
        ([0.0], np.cumsum(0.5 * (means[:-1] + means[1:]) * dt)))
    return n0 * np.exp((lambda1 - lambda2) * trap
                       + lambda2 * (times - times[0]))


def nt_mean_constraint_thirds(n0: float, times, means, m_mis,
                              lambda1: float, lambda2: float) -> np.ndarray:
    """Population size on the thirds-refined grid.

    Whole observed intervals contribute full trapezoids of the observed
    means; a refined point at t_k + d contributes the single partial
    trapezoid (m_k + m*) d / 2 with its own latent mean m*.  Refined points
    two thirds in use the direct chord from t_k, not two stacked pieces.
    """
    times = np.asarray(times, dtype=float)
    means = np.asarray(means, dtype=float)
    m_mis = np.asarray(m_mis, dtype=float)
    k = times.size - 1
    if m_mis.size != 2 * k:
        raise ValueError("m_mis must hold two latent means per interval")
    n_obs = nt_mean_constraint(n0, times, means, lambda1, lambda2)
    out = np.empty(3 * k + 1)
    out[::3] = n_obs
    dl = lambda1 - lambda2
    trap = np.concatenate(
        ([0.0], np.cumsum(0.5 * (means[:-1] + means[1:]) * np.diff(times))))
    for i in range(k):
        step = (times[i + 1] - times[i]) / 3.0
        for j, frac in ((0, 1.0), (1, 2.0)):
            t_sub = times[i] + frac * step
            m_sub = m_mis[2 * i + j]
            partial = 0.5 * (means[i] + m_sub) * frac * step
            out[3 * i + 1 + j] = n0 * np.exp(
                dl * (trap[i] + partial) + lambda2 * (t_sub - times[0]))
    return out


def nt_var_constraint(mu: float, sigma2: float, params: ModelParams) -> float:
    """Population size from the variance-consistency constraint.

    Diagnostic only: undefined for equal rates and numerically fragile (it
    can go negative); inference always uses the mean constraint.
    """
    l1, l2 = params.lambda1, params.lambda2
    if l1 == l2:
        raise ValueError("variance constraint undefined for lambda1 == lambda2")
    if sigma2 <= 0.0:
        raise ValueError("variance constraint requires sigma2 > 0")
    num = ((2.0 * l1 * params.alpha - 2.0 * l2 * params.beta + l2 - l1) * mu
           + l2 * (2.0 * params.beta - 1.0))
    return num / (2.0 * (l2 - l1) * sigma2)


class StepMoments(NamedTuple):
    """Result of one improved-Euler step: next-step mean and variance."""

    a: float
    sigma: float

    @property
    def valid(self) -> bool:
        """False flags a non-positive variance (step too coarse)."""
        return self.sigma > 0.0


def improved_euler_step(mu: float, sigma2: float, n_tk: float, n_tk1: float,
                        dt: float, params: ModelParams) -> StepMoments:
    """Predictor/corrector step of the moment system over ``dt``.

    The predictor evaluates both right-hand sides at the current state with
    N(t_k); the corrector re-evaluates at the predicted point with N(t_{k+1});
    the returned values are the averages.  A non-positive variance is flagged
    via ``StepMoments.valid``, not raised: the sampler treats it as an
    impossible transition.
    """
    a, sig = _kernels._heun(mu, sigma2, n_tk, n_tk1, dt,
                            params.alpha, params.beta,
                            params.lambda1, params.lambda2)
    return StepMoments(a, sig)


@dataclass(frozen=True)
class StepMap:
    """The one-step transition functionals for a fixed parameter set and step."""

    params: ModelParams
    dt: float

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")

    def __call__(self, mu, sigma2, n_tk, n_tk1) -> StepMoments:
        return improved_euler_step(mu, sigma2, n_tk, n_tk1, self.dt,
                                   self.params)

    def a(self, mu: float) -> float:
        """Next-step mean; depends only on the current mean."""
        # population sizes cancel out of the mean recursion
        return improved_euler_step(mu, 0.0, 1.0, 1.0, self.dt, self.params).a

    def sigma_step(self, mu, sigma2, n_tk, n_tk1) -> float:
        return self(mu, sigma2, n_tk, n_tk1).sigma


@dataclass
class MomentPath:
    """Mean/variance/population arrays along a time grid."""

    times: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    nt: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def state(self, i: int) -> MomentState:
        return MomentState(mu=float(np.clip(self.mu[i], 0.0, 1.0)),
                           sigma2=float(max(self.sigma2[i], 0.0)),
                           nt=float(self.nt[i]), t=float(self.times[i]))


def rk4_solve(params: ModelParams, mu0: float, sigma2_0: float, n0: float,
              grid, max_step: float = 1e-3) -> MomentPath:
    """Reference integration of the moment system on ``grid``.

    Classical fourth-order Runge-Kutta with the population advanced
    concurrently through dN/dt = [(l1 - l2) mu + l2] N; each grid interval is
    subdivided so the internal step never exceeds ``max_step``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    if not (0.0 <= mu0 <= 1.0 and sigma2_0 >= 0.0 and n0 > 0.0):
        raise ValueError("invalid initial state")
    mu, s2, nt = _kernels.rk4_path(params.as_array(), float(mu0),
                                   float(sigma2_0), float(n0), grid,
                                   float(max_step))
    return MomentPath(times=grid.copy(), mu=mu, sigma2=s2, nt=nt)
