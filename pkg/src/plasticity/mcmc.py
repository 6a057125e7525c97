"""Metropolis-within-Gibbs sampling over parameters and missing data.

Chains sweep the free parameters in a fixed order, then every latent
(mean, variance) pair on the thirds-refined grid in time order.  Proposal
widths are tuned toward 30% acceptance during burn-in only and frozen
afterwards; the first half of every chain is discarded.  Convergence is
judged by the multivariate potential scale reduction factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._parallel import map_ordered
from .likelihood import log_prior, loglik_summary
from .model import (LAMBDA_MAX, PARAM_NAMES, V_FLOOR, ModelParams,
                    ModelVariant, Priors, SummarySeries, TrajectorySeries,
                    clamp_to_variant)

#: Observation spacing (days) above which latent thirds points are imputed.
AUGMENT_ABOVE = 2.0 / 3.0 + 1e-9


@dataclass
class AugmentedData:
    """Latent summary values at the two thirds points of each interval.

    Entries are ordered by time: (k + 1/3, k + 2/3) for k = 0 .. K-1.
    """

    m_mis: np.ndarray
    v_mis: np.ndarray

    def __post_init__(self):
        self.m_mis = np.asarray(self.m_mis, dtype=float).copy()
        self.v_mis = np.asarray(self.v_mis, dtype=float).copy()
        if self.m_mis.shape != self.v_mis.shape or self.m_mis.ndim != 1:
            raise ValueError("m_mis and v_mis must be equal-length vectors")
        if self.m_mis.size % 2 != 0:
            raise ValueError("expected two latent points per interval")
        if np.any(self.m_mis < 0.0) or np.any(self.m_mis > 1.0):
            raise ValueError("latent means must lie in [0, 1]")
        if np.any(self.v_mis < V_FLOOR):
            raise ValueError(f"latent variances must be >= {V_FLOOR}")


def initial_augmentation(data: SummarySeries) -> AugmentedData:
    """Starting latents: interpolated means, neighbour-averaged variances."""
    k = data.k
    m_mis = np.empty(2 * k)
    v_mis = np.empty(2 * k)
    for i in range(k):
        step = (data.times[i + 1] - data.times[i]) / 3.0
        m_mis[2 * i] = np.interp(data.times[i] + step, data.times, data.means)
        m_mis[2 * i + 1] = np.interp(data.times[i] + 2 * step, data.times,
                                     data.means)
        v_avg = 0.5 * (data.variances[i] + data.variances[i + 1])
        v_mis[2 * i] = v_mis[2 * i + 1] = max(v_avg, V_FLOOR)
    return AugmentedData(m_mis=m_mis, v_mis=v_mis)


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings; defaults follow the reference analysis."""

    iterations: int = 50000
    chains: int = 4
    seed: int = 0
    proposal_scales: dict | None = None
    rhat_threshold: float = 1.1
    tune_target: float = 0.3
    tune_rate: float = 0.05
    global_moves: int = 4

    def __post_init__(self):
        if self.iterations < 1000:
            raise ValueError("iterations must be >= 1000")
        if self.chains < 2:
            raise ValueError("need at least two chains")
        if not 0.0 < self.tune_target < 1.0:
            raise ValueError("tune_target must lie in (0, 1)")

    @property
    def burn(self) -> int:
        return self.iterations // 2

    @property
    def kept(self) -> int:
        return self.iterations - self.burn


@dataclass(frozen=True)
class PosteriorSummary:
    """Point and interval estimates plus the convergence statistic."""

    point: dict
    lower: dict
    upper: dict
    rhat: float
    samples_kept: int

    def interval(self, name: str) -> tuple[float, float]:
        return self.lower[name], self.upper[name]


def mpsrf(chains) -> float:
    """Brooks-Gelman multivariate potential scale reduction factor.

    ``chains`` is (m, n, d): m chains of n retained draws of a d-vector.
    R = (n-1)/n + (m+1)/m * largest eigenvalue of W^{-1} B/n, with W the
    average within-chain covariance and B/n the covariance of chain means.
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    m, n, d = arr.shape
    if m < 2:
        raise ValueError("need at least two chains")
    if n < 10:
        raise ValueError("need at least 10 draws per chain")
    means = arr.mean(axis=1)
    b_over_n = np.atleast_2d(np.cov(means.T, ddof=1))
    w = np.zeros((d, d))
    for j in range(m):
        w += np.atleast_2d(np.cov(arr[j].T, ddof=1))
    w /= m
    try:
        chol = np.linalg.cholesky(w)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "within-chain covariance is singular; run longer chains") from exc
    half = np.linalg.solve(chol, b_over_n)
    mat = np.linalg.solve(chol, half.T)
    lam_max = max(float(np.linalg.eigvalsh(mat).max()), 0.0)
    return (n - 1.0) / n + (m + 1.0) / m * lam_max


def summarize(samples, rhat: float = math.nan,
              names=PARAM_NAMES) -> PosteriorSummary:
    """Posterior means and central 95% intervals of retained samples."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 100:
        raise ValueError("need at least 100 retained samples")
    point = {}
    lower = {}
    upper = {}
    for i, name in enumerate(names):
        col = arr[:, i]
        point[name] = float(col.mean())
        lo, hi = np.quantile(col, [0.025, 0.975])
        lower[name] = float(lo)
        upper[name] = float(hi)
    return PosteriorSummary(point=point, lower=lower, upper=upper,
                            rhat=float(rhat), samples_kept=arr.shape[0])


class SummaryArrays(NamedTuple):
    """Refined-grid layout shared by the sampler and the DIC evaluation."""

    times: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    miss_idx: np.ndarray
    left_idx: np.ndarray
    base_trap: np.ndarray


def build_summary_arrays(data: SummarySeries,
                         aug: AugmentedData | None) -> SummaryArrays:
    """Flatten observed + latent values onto one grid for the kernels.

    ``base_trap`` holds the trapezoid sum of observed means over whole
    observed intervals up to each point's governing observed time;
    ``left_idx`` points at that observed grid index (itself for observed
    points, so their partial trapezoid vanishes).
    """
    obs_trap = np.concatenate(
        ([0.0], np.cumsum(0.5 * (data.means[:-1] + data.means[1:])
                          * np.diff(data.times))))
    if aug is None:
        p = data.times.size
        return SummaryArrays(times=data.times.copy(),
                             means=data.means.copy(),
                             variances=data.variances.copy(),
                             miss_idx=np.empty(0, dtype=np.int64),
                             left_idx=np.arange(p, dtype=np.int64),
                             base_trap=obs_trap.copy())
    k = data.k
    p = 3 * k + 1
    times = np.empty(p)
    means = np.empty(p)
    variances = np.empty(p)
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
    idx = np.arange(p, dtype=np.int64)
    left_idx = 3 * (idx // 3)
    base_trap = obs_trap[idx // 3]
    miss_idx = idx[idx % 3 != 0]
    return SummaryArrays(times, means, variances, miss_idx, left_idx,
                         base_trap)


@dataclass
class McmcResult:
    """Chains, diagnostics and posterior summary of one fit."""

    variant: ModelVariant
    samples: np.ndarray          # (chains, kept, 4)
    log_posts: np.ndarray        # (chains, kept)
    free_names: tuple
    summary: PosteriorSummary
    rhat: float
    acceptance: dict
    aug_mean: AugmentedData | None
    max_drift: float
    seed: int

    @property
    def pooled(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])

    @property
    def converged(self) -> bool:
        return math.isfinite(self.rhat) and self.rhat < 1.1

    def point_params(self) -> ModelParams:
        mean = self.pooled.mean(axis=0)
        return ModelParams.from_array(np.clip(
            mean, [0.0, 0.0, 1e-12, 1e-12], [1.0, 1.0, LAMBDA_MAX, LAMBDA_MAX]))


def _free_mask(variant: ModelVariant, fixed: dict | None) -> np.ndarray:
    mask = np.zeros(4, dtype=np.bool_)
    for name in variant.free_parameters:
        mask[PARAM_NAMES.index(name)] = True
    for name in (fixed or {}):
        mask[PARAM_NAMES.index(name)] = False
    return mask


def _chain_start(data_like, variant: ModelVariant, priors: Priors,
                 fixed: dict | None, master_seed: int, chain: int):
    """Over-dispersed start: parameters drawn from the prior per chain."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(master_seed),
                               spawn_key=(chain, 0)))
    params = priors.sample_params(rng, variant)
    theta = params.as_array()
    for name, value in (fixed or {}).items():
        theta[PARAM_NAMES.index(name)] = value
    if variant.ties_rates:
        theta[3] = theta[2]
    kernel_seed = np.uint64(np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(chain, 1)).generate_state(
            1, np.uint64)[0])
    return theta, kernel_seed


def _initial_scales(nsites: int, cfg: ChainConfig, v_init=None) -> np.ndarray:
    scales = np.empty(nsites)
    defaults = {"alpha": 0.1, "beta": 0.1, "lambda1": 0.07, "lambda2": 0.07}
    if cfg.proposal_scales:
        defaults.update(cfg.proposal_scales)
    for i, name in enumerate(PARAM_NAMES):
        scales[i] = defaults[name]
    for j in range(4, nsites):
        scales[j] = 0.05
    if v_init is not None:
        # latent sites alternate (mean, variance) after the four parameters
        for j, v0 in enumerate(v_init):
            scales[5 + 2 * j] = max(v0, 1e-4)
    return scales


def run_chains(data: SummarySeries, variant: ModelVariant, cfg: ChainConfig,
               priors: Priors | None = None, fixed: dict | None = None,
               augment: bool | None = None,
               prior_only: bool = False) -> McmcResult:
    """Draw posterior samples for one summary dataset.

    Latent thirds points are imputed whenever the observation spacing is
    coarser than 2/3 day (override with ``augment``).  ``fixed`` pins named
    parameters at given values (used when division rates are known).
    Non-convergence is reported through the result, never raised.
    """
    priors = priors or Priors()
    if augment is None:
        augment = bool(np.max(np.diff(data.times)) > AUGMENT_ABOVE)
    if prior_only:
        augment = False
    aug0 = initial_augmentation(data) if augment else None
    arrays = build_summary_arrays(data, aug0)
    nmis = arrays.miss_idx.size
    free = _free_mask(variant, fixed)
    lo, hi = priors.bounds()
    logprior_const = _variant_prior_const(priors, variant)
    nsites = 4 + 2 * nmis
    check_every = max(1, 1000 // max(1, nsites))

    def one_chain(chain: int):
        theta, kernel_seed = _chain_start(data, variant, priors, fixed,
                                          cfg.seed, chain)
        m = arrays.means.copy()
        v = arrays.variances.copy()
        v_init = v[arrays.miss_idx] if nmis else None
        scales = _initial_scales(nsites, cfg, v_init)
        samples = np.empty((cfg.kept, 4))
        logposts = np.empty(cfg.kept)
        accepts = np.zeros(nsites + 2)     # trailing: global, joint moves
        proposals = np.zeros(nsites + 2)
        m_mean = np.zeros(nmis)
        v_mean = np.zeros(nmis)
        drift = _kernels.run_summary_chain(
            arrays.times, m, v, arrays.miss_idx, arrays.left_idx,
            arrays.base_trap, theta, free, bool(variant.ties_rates), lo, hi,
            data.n, data.n0, cfg.iterations, cfg.burn, kernel_seed,
            prior_only, V_FLOOR, cfg.tune_target, cfg.tune_rate,
            cfg.global_moves, scales, samples, logposts, accepts, proposals,
            m_mean, v_mean, logprior_const, check_every)
        return samples, logposts, accepts, proposals, m_mean, v_mean, drift

    results = map_ordered(one_chain, range(cfg.chains))
    samples = np.stack([r[0] for r in results])
    log_posts = np.stack([r[1] for r in results])
    free_names = tuple(name for i, name in enumerate(PARAM_NAMES) if free[i])
    free_cols = [PARAM_NAMES.index(name) for name in free_names]
    try:
        rhat = mpsrf(samples[:, :, free_cols])
    except np.linalg.LinAlgError:
        rhat = math.inf
    pooled = samples.reshape(-1, 4)
    summary = summarize(pooled, rhat=rhat)
    acc = {}
    for i, name in enumerate(PARAM_NAMES):
        tot = sum(r[3][i] for r in results)
        acc[name] = sum(r[2][i] for r in results) / tot if tot else math.nan
    if nmis:
        lat_prop = sum(r[3][4:-2].sum() for r in results)
        acc["latent"] = sum(r[2][4:-2].sum() for r in results) / lat_prop
    for slot, label in ((-2, "global"), (-1, "joint")):
        tot = sum(r[3][slot] for r in results)
        acc[label] = (sum(r[2][slot] for r in results) / tot
                      if tot else math.nan)
    aug_mean = None
    if nmis:
        m_mean = np.mean([r[4] for r in results], axis=0)
        v_mean = np.maximum(np.mean([r[5] for r in results], axis=0), V_FLOOR)
        aug_mean = AugmentedData(m_mis=m_mean, v_mis=v_mean)
    return McmcResult(variant=variant, samples=samples, log_posts=log_posts,
                      free_names=free_names, summary=summary, rhat=rhat,
                      acceptance=acc, aug_mean=aug_mean,
                      max_drift=max(r[6] for r in results), seed=cfg.seed)


def _variant_prior_const(priors: Priors, variant: ModelVariant) -> float:
    lo, hi = priors.bounds()
    total = 0.0
    for name in variant.free_parameters:
        i = PARAM_NAMES.index(name)
        total -= math.log(hi[i] - lo[i])
    return total


def run_chains_trajectory(data: TrajectorySeries, variant: ModelVariant,
                          cfg: ChainConfig, priors: Priors | None = None,
                          augment: bool | None = None) -> McmcResult:
    """Posterior sampling from per-trajectory proportion data.

    Same sweep structure as :func:`run_chains` with the single-trajectory
    normal kernel; latent proportions are imputed on the thirds grid when
    observations are coarser than 2/3 day.
    """
    priors = priors or Priors()
    if augment is None:
        augment = bool(np.max(np.diff(data.times)) > AUGMENT_ABOVE)
    k = data.k
    ntraj = data.n
    if augment:
        p = 3 * k + 1
        times = np.empty(p)
        times[::3] = data.times
        for i in range(k):
            step = (data.times[i + 1] - data.times[i]) / 3.0
            times[3 * i + 1] = data.times[i] + step
            times[3 * i + 2] = data.times[i] + 2.0 * step
        idx = np.arange(p, dtype=np.int64)
        left_idx = 3 * (idx // 3)
        miss_idx = idx[idx % 3 != 0]
        r_full = np.empty((ntraj, p))
        r_full[:, ::3] = data.r
        for i in range(ntraj):
            r_full[i, miss_idx] = np.interp(times[miss_idx], data.times,
                                            data.r[i])
        obs_pos = idx // 3
    else:
        p = data.times.size
        times = data.times.copy()
        left_idx = np.arange(p, dtype=np.int64)
        miss_idx = np.empty(0, dtype=np.int64)
        r_full = data.r.copy()
        obs_pos = np.arange(p)
    base_trap = np.empty((ntraj, p))
    for i in range(ntraj):
        obs_trap = np.concatenate(
            ([0.0], np.cumsum(0.5 * (data.r[i, :-1] + data.r[i, 1:])
                              * np.diff(data.times))))
        base_trap[i] = obs_trap[obs_pos]
    nmis = miss_idx.size
    free = _free_mask(variant, None)
    lo, hi = priors.bounds()
    logprior_const = _variant_prior_const(priors, variant)
    nsites = 4 + ntraj * nmis
    check_every = max(1, 1000 // max(1, nsites))

    def one_chain(chain: int):
        theta, kernel_seed = _chain_start(data, variant, priors, None,
                                          cfg.seed, chain)
        r = r_full.copy()
        scales = np.full(nsites, 0.05)
        scales[:4] = _initial_scales(4, cfg)
        samples = np.empty((cfg.kept, 4))
        logposts = np.empty(cfg.kept)
        accepts = np.zeros(nsites + 2)
        proposals = np.zeros(nsites + 2)
        r_mean = np.zeros((ntraj, nmis))
        drift = _kernels.run_trajectory_chain(
            times, r, miss_idx, left_idx, base_trap, theta, free,
            bool(variant.ties_rates), lo, hi, data.n0, cfg.iterations,
            cfg.burn, kernel_seed, cfg.tune_target, cfg.tune_rate,
            cfg.global_moves, scales, samples, logposts, accepts, proposals,
            r_mean, logprior_const, check_every)
        return samples, logposts, accepts, proposals, drift

    results = map_ordered(one_chain, range(cfg.chains))
    samples = np.stack([r[0] for r in results])
    log_posts = np.stack([r[1] for r in results])
    free_names = tuple(name for i, name in enumerate(PARAM_NAMES) if free[i])
    free_cols = [PARAM_NAMES.index(name) for name in free_names]
    try:
        rhat = mpsrf(samples[:, :, free_cols])
    except np.linalg.LinAlgError:
        rhat = math.inf
    summary = summarize(samples.reshape(-1, 4), rhat=rhat)
    acc = {}
    for i, name in enumerate(PARAM_NAMES):
        tot = sum(r[3][i] for r in results)
        acc[name] = sum(r[2][i] for r in results) / tot if tot else math.nan
    return McmcResult(variant=variant, samples=samples, log_posts=log_posts,
                      free_names=free_names, summary=summary, rhat=rhat,
                      acceptance=acc, aug_mean=None,
                      max_drift=max(r[4] for r in results), seed=cfg.seed)


# ---------------------------------------------------------------------------
# Single-site reference updates.  These mirror what the compiled sweep does,
# one move at a time, against the plain NumPy likelihood; the test suite uses
# them to pin the kernel's bookkeeping.

@dataclass
class GibbsState:
    """Current location of one chain, with its cached log posterior."""

    params: ModelParams
    aug: AugmentedData | None
    variant: ModelVariant
    priors: Priors
    scales: dict
    log_post: float

    @classmethod
    def initialize(cls, data: SummarySeries, variant: ModelVariant,
                   params: ModelParams, priors: Priors | None = None,
                   augment: bool | None = None,
                   scales: dict | None = None) -> "GibbsState":
        priors = priors or Priors()
        if augment is None:
            augment = bool(np.max(np.diff(data.times)) > AUGMENT_ABOVE)
        aug = initial_augmentation(data) if augment else None
        params = clamp_to_variant(params, variant)
        base_scales = {"alpha": 0.1, "beta": 0.1, "lambda1": 0.07,
                       "lambda2": 0.07, "m_mis": 0.05, "v_mis": 1e-3}
        base_scales.update(scales or {})
        lp = (loglik_summary(data, aug, params)
              + log_prior(params, priors, variant))
        return cls(params=params, aug=aug, variant=variant, priors=priors,
                   scales=base_scales, log_post=lp)


def reflect(value: float, lo: float, hi: float) -> float:
    """Fold a proposal back into [lo, hi] (single reflection)."""
    if value < lo:
        value = 2.0 * lo - value
    elif value > hi:
        value = 2.0 * hi - value
    return value


def accept_move(new: float, old: float, rng) -> bool:
    """Metropolis rule with -inf handled as certain rejection/escape."""
    if new == -math.inf or math.isnan(new):
        return False
    if old == -math.inf:
        return True
    return math.log(1.0 - rng.uniform()) < new - old


def update_parameter(which: str, state: GibbsState, data: SummarySeries,
                     rng) -> tuple[GibbsState, bool]:
    """Random-walk Metropolis update of one free parameter."""
    if which not in state.variant.free_parameters:
        raise ValueError(f"{which} is constrained under {state.variant}")
    lo, hi = state.priors.bounds()
    i = PARAM_NAMES.index(which)
    theta = state.params.as_array()
    width = state.scales[which]
    prop = reflect(theta[i] + rng.uniform(-width, width), lo[i], hi[i])
    if which.startswith("lambda") and prop <= lo[i]:
        return state, False
    theta[i] = prop
    if which == "lambda1" and state.variant.ties_rates:
        theta[3] = prop
    cand = ModelParams.from_array(theta)
    lp = (loglik_summary(data, state.aug, cand)
          + log_prior(cand, state.priors, state.variant))
    if accept_move(lp, state.log_post, rng):
        return replace(state, params=cand, log_post=lp), True
    return state, False


def update_missing(index: int, kind: str, state: GibbsState,
                   data: SummarySeries, rng) -> tuple[GibbsState, bool]:
    """Metropolis update of one latent mean or variance."""
    if state.aug is None:
        raise ValueError("state carries no augmented data")
    if kind not in ("mean", "variance"):
        raise ValueError("kind must be 'mean' or 'variance'")
    m_mis = state.aug.m_mis.copy()
    v_mis = state.aug.v_mis.copy()
    if kind == "mean":
        width = state.scales["m_mis"]
        m_mis[index] = reflect(m_mis[index] + rng.uniform(-width, width),
                               0.0, 1.0)
    else:
        width = state.scales["v_mis"]
        prop = v_mis[index] + rng.uniform(-width, width)
        if prop < V_FLOOR:
            prop = 2.0 * V_FLOOR - prop
        v_mis[index] = prop
    cand = AugmentedData(m_mis=m_mis, v_mis=v_mis)
    lp = (loglik_summary(data, cand, state.params)
          + log_prior(state.params, state.priors, state.variant))
    if accept_move(lp, state.log_post, rng):
        return replace(state, aug=cand, log_post=lp), True
    return state, False
