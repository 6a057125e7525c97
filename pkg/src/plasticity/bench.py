"""Model selection, least-squares baselines and the evaluation harness.

DIC scores the four model variants on a shared dataset; the NLS baselines
fit the moment equations by derivative-free least squares; ASE/CR aggregate
point-estimate error and interval coverage across replicate fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from ._parallel import map_ordered
from .dynamics import rk4_solve
from .mcmc import (ChainConfig, McmcResult, PosteriorSummary,
                   build_summary_arrays, run_chains)
from .model import (LAMBDA_MAX, PARAM_NAMES, ModelParams, ModelVariant,
                    Priors, SummarySeries)
from .simulate import STUDY_III_N0, run_simulation_study


def deviances(result: McmcResult, data: SummarySeries) -> np.ndarray:
    """-2 log likelihood at every retained sample.

    Missing-data entries are pinned at their posterior means for every
    evaluation, so the deviance is a function of the parameters alone.
    """
    arrays = build_summary_arrays(data, result.aug_mean)
    ll = _kernels.loglik_for_thetas(result.pooled, arrays.times,
                                    arrays.means, arrays.variances,
                                    arrays.left_idx, arrays.base_trap,
                                    data.n, data.n0)
    return -2.0 * ll


def dic_from_deviances(devs: np.ndarray, dev_at_mean: float) -> float:
    """DIC = mean deviance + effective parameter count p_D."""
    d_bar = float(np.mean(devs))
    p_d = d_bar - dev_at_mean
    return d_bar + p_d


def dic(result: McmcResult, data: SummarySeries) -> float:
    """Deviance information criterion of one fit (lower is better)."""
    if result.pooled.shape[0] < 100:
        raise ValueError("need at least 100 retained samples")
    devs = deviances(result, data)
    if not np.all(np.isfinite(devs)):
        raise ValueError("non-finite deviance encountered; the fit does not "
                         "support the data")
    arrays = build_summary_arrays(data, result.aug_mean)
    theta_bar = result.pooled.mean(axis=0)[None, :]
    dev_mean = -2.0 * float(_kernels.loglik_for_thetas(
        theta_bar, arrays.times, arrays.means, arrays.variances,
        arrays.left_idx, arrays.base_trap, data.n, data.n0)[0])
    if not math.isfinite(dev_mean):
        raise ValueError("non-finite deviance at the posterior mean")
    return dic_from_deviances(devs, dev_mean)


@dataclass
class FitResult:
    """One model variant's fit and its selection score."""

    variant: ModelVariant
    summary: PosteriorSummary
    dic: float
    loglik_at_mean: float
    converged: bool
    result: McmcResult


def select_model(data: SummarySeries, cfg: ChainConfig,
                 priors: Priors | None = None) -> list[FitResult]:
    """Fit all four variants and rank them by DIC (ascending).

    Non-converged fits are kept in the report but sort after every converged
    fit regardless of score.
    """
    def fit_variant(variant: ModelVariant) -> FitResult:
        res = run_chains(data, variant, cfg, priors=priors)
        score = dic(res, data)
        converged = math.isfinite(res.rhat) and res.rhat < cfg.rhat_threshold
        arrays = build_summary_arrays(data, res.aug_mean)
        ll_mean = float(_kernels.loglik_for_thetas(
            res.pooled.mean(axis=0)[None, :], arrays.times, arrays.means,
            arrays.variances, arrays.left_idx, arrays.base_trap,
            data.n, data.n0)[0])
        return FitResult(variant=variant, summary=res.summary, dic=score,
                         loglik_at_mean=ll_mean, converged=converged,
                         result=res)

    fits = map_ordered(fit_variant, list(ModelVariant))
    return sorted(fits, key=lambda f: (not f.converged, f.dic))


def _nls_predictions(theta: np.ndarray, data: SummarySeries):
    params = ModelParams.from_array(theta)
    path = rk4_solve(params, float(data.means[0]), float(data.variances[0]),
                     data.n0, data.times)
    return path.mu, np.maximum(path.sigma2, 0.0)


def nls_objective(theta, data: SummarySeries, objective: str) -> float:
    """Sum of squared residuals of the RK4-predicted moment path.

    ``nls1`` compares variances, ``nls2`` standard deviations; both share the
    mean term.
    """
    theta = np.asarray(theta, dtype=float)
    lo = np.array([0.0, 0.0, 1e-9, 1e-9])
    hi = np.array([1.0, 1.0, LAMBDA_MAX, LAMBDA_MAX])
    if np.any(theta < lo) or np.any(theta > hi):
        return math.inf
    mu_hat, s2_hat = _nls_predictions(theta, data)
    obj = float(np.sum((data.means - mu_hat) ** 2))
    if objective == "nls1":
        obj += float(np.sum((data.variances - s2_hat) ** 2))
    elif objective == "nls2":
        obj += float(np.sum((np.sqrt(data.variances)
                             - np.sqrt(s2_hat)) ** 2))
    else:
        raise ValueError("objective must be 'nls1' or 'nls2'")
    return obj


@dataclass
class NlsFit:
    params: ModelParams
    objective: str
    value: float
    starts_improved: int


def nls_fit(data: SummarySeries, objective: str = "nls1",
            multistart: int = 20, seed: int = 0,
            priors: Priors | None = None) -> NlsFit:
    """Nelder-Mead least squares over the prior box from multiple starts.

    The best minimizer is polished with a second tight-tolerance run; if no
    start improves on its own initial value the landscape evaluation failed
    and an error is raised.
    """
    priors = priors or Priors()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed),
                                                       spawn_key=(17,)))
    bounds = [(0.0, 1.0), (0.0, 1.0), (1e-9, LAMBDA_MAX), (1e-9, LAMBDA_MAX)]
    best_x = None
    best_f = math.inf
    improved = 0
    for _ in range(multistart):
        x0 = priors.sample_params(rng).as_array()
        f0 = nls_objective(x0, data, objective)
        res = minimize(nls_objective, x0, args=(data, objective),
                       method="Nelder-Mead", bounds=bounds,
                       options={"maxiter": 1200, "xatol": 1e-6,
                                "fatol": 1e-12})
        if res.fun < f0:
            improved += 1
        if res.fun < best_f:
            best_f = float(res.fun)
            best_x = np.asarray(res.x, dtype=float)
    if best_x is None or improved == 0:
        raise RuntimeError("no Nelder-Mead start improved on its initial "
                           "point; optimization failed")
    polish = minimize(nls_objective, best_x, args=(data, objective),
                      method="Nelder-Mead", bounds=bounds,
                      options={"maxiter": 4000, "xatol": 1e-9,
                               "fatol": 1e-16})
    if polish.fun <= best_f:
        best_f = float(polish.fun)
        best_x = np.asarray(polish.x, dtype=float)
    best_x = np.clip(best_x, [0.0, 0.0, 1e-12, 1e-12],
                     [1.0, 1.0, LAMBDA_MAX, LAMBDA_MAX])
    return NlsFit(params=ModelParams.from_array(best_x), objective=objective,
                  value=best_f, starts_improved=improved)


@dataclass
class BenchRow:
    """Ground truth against one fit's point and interval estimates."""

    true_params: ModelParams
    point: dict
    lower: dict
    upper: dict

    @classmethod
    def from_summary(cls, true_params: ModelParams,
                     summary: PosteriorSummary) -> "BenchRow":
        return cls(true_params=true_params, point=dict(summary.point),
                   lower=dict(summary.lower), upper=dict(summary.upper))

    def squared_error(self, name: str) -> float:
        truth = getattr(self.true_params, name)
        return (self.point[name] - truth) ** 2

    def covered(self, name: str) -> bool:
        truth = getattr(self.true_params, name)
        return self.lower[name] <= truth <= self.upper[name]


def evaluate_ase_cr(rows: list[BenchRow],
                    names=PARAM_NAMES) -> dict[str, tuple[float, float]]:
    """Average squared error and coverage rate per parameter."""
    if not rows:
        raise ValueError("need at least one row")
    out = {}
    for name in names:
        ase = float(np.mean([row.squared_error(name) for row in rows]))
        cr = float(np.mean([row.covered(name) for row in rows]))
        out[name] = (ase, cr)
    return out


@dataclass
class SweepCell:
    n0: float
    param: str
    mode: str
    ase: float
    cr: float


@dataclass
class SweepResult:
    table: list[SweepCell]
    rows: dict           # (n0, mode) -> list[BenchRow]


def run_n0_sweep(n0_values=STUDY_III_N0, replicates: int = 10,
                 cfg: ChainConfig | None = None, seed: int = 0,
                 with_known_lambdas: bool = False,
                 datasets=None) -> SweepResult:
    """ASE/CR across initial population sizes (study III protocol).

    With ``with_known_lambdas`` the division rates are pinned at their true
    values and only (alpha, beta) are sampled.  Pass ``datasets`` (from
    ``run_simulation_study``) to reuse one generated sweep across modes.
    """
    cfg = cfg or ChainConfig()
    if datasets is None:
        datasets = run_simulation_study(3, replicates, seed,
                                        n0_values=n0_values)
    mode = "known-lambda" if with_known_lambdas else "free"
    rows: dict = {}

    def fit_one(ds):
        fixed = None
        if with_known_lambdas:
            fixed = {"lambda1": ds.params.lambda1,
                     "lambda2": ds.params.lambda2}
        res = run_chains(ds.data, ModelVariant.FULL, cfg, fixed=fixed)
        return BenchRow.from_summary(ds.params, res.summary)

    fits = map_ordered(fit_one, datasets)
    for ds, row in zip(datasets, fits):
        rows.setdefault((ds.n0, mode), []).append(row)
    table = []
    for (n0, mode_key), cell_rows in sorted(rows.items()):
        scores = evaluate_ase_cr(cell_rows)
        for name in PARAM_NAMES:
            ase, cr = scores[name]
            table.append(SweepCell(n0=n0, param=name, mode=mode_key,
                                   ase=ase, cr=cr))
    return SweepResult(table=table, rows=rows)
