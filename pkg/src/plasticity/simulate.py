"""Exact stochastic simulation and synthesis of study datasets.

The simulator realizes the two-type birth process event by event (exponential
waiting times, event drawn proportionally to the four division channels) and
is used both to manufacture benchmark data and as the verification oracle for
the moment equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._parallel import map_ordered
from .dynamics import improved_euler_step
from .model import (ModelParams, PopulationState, Priors, SummarySeries,
                    TrajectorySeries)


def _split_seed(seed: int, *path: int) -> np.uint64:
    """Counter-based derivation of an independent 64-bit stream seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(path))
    return np.uint64(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SimConfig:
    """Settings for one batch of simulated trajectories."""

    n0: int
    mu0: float
    t_end: float
    record_grid: np.ndarray
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if not (0.0 <= self.mu0 <= 1.0):
            raise ValueError("mu0 must lie in [0, 1]")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        grid = np.asarray(self.record_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 1:
            raise ValueError("record_grid must be a non-empty vector")
        if np.any(np.diff(grid) <= 0.0):
            raise ValueError("record_grid must be strictly increasing")
        if grid[0] < 0.0 or grid[-1] > self.t_end:
            raise ValueError("record_grid must lie within [0, t_end]")
        object.__setattr__(self, "record_grid", grid)

    def initial_counts(self) -> tuple[int, int]:
        """Initial (stem, non-stem) counts; stem count rounds half-up."""
        x0 = int(np.floor(self.mu0 * self.n0 + 0.5))
        return x0, self.n0 - x0


def gillespie_propensities(state: PopulationState,
                           params: ModelParams) -> tuple[float, float, float, float]:
    """Rates of the four division channels at the given state.

    Order: stem symmetric (x+1), stem asymmetric (y+1), non-stem symmetric
    (y+1), non-stem asymmetric / de-differentiation (x+1).
    """
    x, y = state.x, state.y
    return (params.lambda1 * params.alpha * x,
            params.lambda1 * (1.0 - params.alpha) * x,
            params.lambda2 * (1.0 - params.beta) * y,
            params.lambda2 * params.beta * y)


def simulate_trajectory(cfg: SimConfig, params: ModelParams,
                        replicate: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One exact trajectory; returns (proportions, totals) on the record grid.

    The recorded value at a grid time is the state holding there (last event
    at or before the grid point).  Each replicate index owns an independent
    RNG stream derived from ``cfg.seed``.
    """
    x0, y0 = cfg.initial_counts()
    seed = _split_seed(cfg.seed, replicate)
    xs, ys = _kernels.gillespie_trajectory(x0, y0, params.alpha, params.beta,
                                           params.lambda1, params.lambda2,
                                           cfg.record_grid, seed)
    totals = xs + ys
    return xs / totals, totals.astype(float)


def simulate_replicates(cfg: SimConfig, params: ModelParams):
    """All replicates of ``cfg`` in parallel; results ordered by replicate."""
    return map_ordered(lambda i: simulate_trajectory(cfg, params, i),
                       range(cfg.replicates))


def synthesize_summary_gillespie(cfg: SimConfig, params: ModelParams,
                                 n: int) -> SummarySeries:
    """Sample mean/variance series over ``n`` exact trajectories."""
    if n < 2:
        raise ValueError("need n >= 2 trajectories for a variance")
    runs = map_ordered(lambda i: simulate_trajectory(cfg, params, i), range(n))
    r = np.stack([prop for prop, _ in runs])
    return SummarySeries(times=cfg.record_grid,
                         means=r.mean(axis=0),
                         variances=r.var(axis=0, ddof=1),
                         n=n, n0=cfg.n0)


def synthesize_trajectories(cfg: SimConfig, params: ModelParams,
                            n: int) -> TrajectorySeries:
    """Per-trajectory proportion matrix over ``n`` exact runs."""
    runs = map_ordered(lambda i: simulate_trajectory(cfg, params, i), range(n))
    r = np.stack([prop for prop, _ in runs])
    return TrajectorySeries(times=cfg.record_grid, r=r, n0=cfg.n0)


def synthesize_summary_conditional(params: ModelParams, m0: float, v0: float,
                                   times, n: int, n0: float,
                                   rng) -> SummarySeries:
    """Sequential synthesis from the one-step conditional distribution.

    At each step the next sample mean is Normal(A, Sigma/n) and the next
    sample variance Sigma/(n-1) ChiSquare(n-1), with (A, Sigma) from the
    improved-Euler map at the previously sampled values.  The population is
    advanced by the discrete mean constraint; the not-yet-sampled mean inside
    Sigma's corrector is stood in for by A.  Sampled means are clipped to
    [0, 1] (the normal law is asymptotic and can leave the support).
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    times = np.asarray(times, dtype=float)
    steps = np.diff(times)
    if times.size < 2 or np.any(steps <= 0.0):
        raise ValueError("times must be strictly increasing")
    if not np.allclose(steps, steps[0]):
        raise ValueError("conditional synthesis requires a uniform grid")
    if v0 < 0.0:
        raise ValueError("v0 must be non-negative")
    k = times.size - 1
    means = np.empty(k + 1)
    variances = np.empty(k + 1)
    means[0] = m0
    variances[0] = v0
    dl = params.lambda1 - params.lambda2
    trap = 0.0
    for i in range(k):
        dt = steps[i]
        n_cur = n0 * np.exp(dl * trap + params.lambda2 * (times[i] - times[0]))
        a_only = improved_euler_step(means[i], variances[i], n_cur, n_cur,
                                     dt, params).a
        n_next = n0 * np.exp(dl * (trap + 0.5 * (means[i] + a_only) * dt)
                             + params.lambda2 * (times[i + 1] - times[0]))
        step = improved_euler_step(means[i], variances[i], n_cur, n_next,
                                   dt, params)
        if not step.valid:
            raise RuntimeError(
                f"non-positive step variance at t={times[i]:g}; the grid is "
                "too coarse for these parameters")
        m_next = rng.normal(step.a, np.sqrt(step.sigma / n))
        means[i + 1] = min(max(m_next, 0.0), 1.0)
        variances[i + 1] = step.sigma / (n - 1) * rng.chisquare(n - 1)
        trap += 0.5 * (means[i] + means[i + 1]) * dt
    return SummarySeries(times=times, means=means, variances=variances,
                         n=n, n0=n0)


#: Initial population sizes swept by study III.
STUDY_III_N0 = (100, 200, 500, 1000, 2000)


@dataclass
class StudyDataset:
    """One synthetic dataset plus its generating ground truth."""

    study: str
    index: int
    params: ModelParams
    m0: float
    v0: float
    n0: float
    data: SummarySeries
    seed: int


def run_simulation_study(study, n_param_sets: int, seed: int,
                         n_trajectories: int = 5, t_end: float = 24.0,
                         n0: int = 1000,
                         n0_values=STUDY_III_N0) -> list[StudyDataset]:
    """Reproducible dataset bundles for the three benchmark studies.

    Study I (or 1): conditional synthesis on the thirds grid, no missing
    data.  Study II: exact simulation observed every second day, so two
    records per interval are latent.  Study III: study II repeated for each
    initial population size in ``n0_values``.
    """
    study = str(study).upper().replace("III", "3").replace("II", "2") \
        .replace("I", "1")
    if study not in ("1", "2", "3"):
        raise ValueError("study must be one of I, II, III (or 1, 2, 3)")
    priors = Priors()
    out: list[StudyDataset] = []

    def _draw_common(rng):
        params = priors.sample_params(rng)
        m0 = rng.uniform(0.0, 1.0)
        return params, m0

    if study == "1":
        grid = np.linspace(0.0, t_end, int(round(t_end / (2.0 / 3.0))) + 1)
        for i in range(n_param_sets):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(seed), spawn_key=(1, i)))
            params, m0 = _draw_common(rng)
            v0 = rng.uniform(0.0, 0.01)
            data = synthesize_summary_conditional(params, m0, v0, grid,
                                                  n_trajectories, n0, rng)
            out.append(StudyDataset("I", i, params, m0, v0, n0, data, seed))
        return out

    grid = np.linspace(0.0, t_end, int(round(t_end / 2.0)) + 1)
    sizes = [n0] if study == "2" else list(n0_values)
    label = "II" if study == "2" else "III"
    counter = 0
    for size in sizes:
        for i in range(n_param_sets):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(seed),
                                       spawn_key=(2, counter)))
            params, m0 = _draw_common(rng)
            cfg_seed = int(rng.integers(0, 2 ** 63 - 1))
            cfg = SimConfig(n0=size, mu0=m0, t_end=t_end, record_grid=grid,
                            replicates=n_trajectories, seed=cfg_seed)
            data = synthesize_summary_gillespie(cfg, params, n_trajectories)
            out.append(StudyDataset(label, i, params, m0, 0.0, size, data,
                                    cfg_seed))
            counter += 1
    return out
