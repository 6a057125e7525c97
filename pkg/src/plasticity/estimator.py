"""Scikit-learn style estimator facade.

Wraps the Bayesian sampler and the least-squares baseline behind
``fit``/``predict``/``get_params`` so fits compose with the usual ecosystem
tooling (cloning, grid search over sampler settings, pipelines).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bench import nls_fit
from .dynamics import rk4_solve
from .likelihood import loglik_summary
from .mcmc import AUGMENT_ABOVE, ChainConfig, initial_augmentation, run_chains
from .model import ModelVariant, Priors, SummarySeries


def as_summary_series(X, n: int, n0: float) -> SummarySeries:
    """Coerce estimator input into a validated series.

    Accepts a ``SummarySeries`` or an array-like of shape (k+1, 3) holding
    (time, mean, variance) rows; ``n`` and ``n0`` come from the estimator.
    """
    if isinstance(X, SummarySeries):
        return X
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("X must be a SummarySeries or an (k+1, 3) array of "
                         "(time, mean, variance) rows")
    return SummarySeries(times=arr[:, 0], means=arr[:, 1],
                         variances=arr[:, 2], n=n, n0=n0)


class PlasticityEstimator(BaseEstimator):
    """Bayesian fit of the plasticity parameters from summary data.

    Parameters mirror the sampler configuration; fitted state lives in
    trailing-underscore attributes (``params_``, ``summary_``, ``rhat_``).
    """

    def __init__(self, variant="full", iterations=50000, chains=4, seed=0,
                 n=5, n0=1000.0, rhat_threshold=1.1):
        self.variant = variant
        self.iterations = iterations
        self.chains = chains
        self.seed = seed
        self.n = n
        self.n0 = n0
        self.rhat_threshold = rhat_threshold

    def fit(self, X, y=None):
        data = as_summary_series(X, self.n, self.n0)
        cfg = ChainConfig(iterations=self.iterations, chains=self.chains,
                          seed=self.seed, rhat_threshold=self.rhat_threshold)
        result = run_chains(data, ModelVariant.from_label(self.variant), cfg)
        self.data_ = data
        self.result_ = result
        self.summary_ = result.summary
        self.rhat_ = result.rhat
        self.samples_ = result.pooled
        self.params_ = result.point_params()
        return self

    def predict(self, times):
        """Posterior-mean moment path (mu, sigma2) at the requested times."""
        check_is_fitted(self, "params_")
        times = np.asarray(times, dtype=float)
        t0 = self.data_.times[0]
        if np.any(times < t0):
            raise ValueError(f"cannot predict before the first observation "
                             f"at t={t0:g}")
        grid = times if times[0] == t0 else np.concatenate(([t0], times))
        path = rk4_solve(self.params_, float(self.data_.means[0]),
                         float(self.data_.variances[0]), self.data_.n0, grid)
        offset = 0 if times[0] == t0 else 1
        return np.column_stack([path.mu[offset:], path.sigma2[offset:]])

    def score(self, X, y=None):
        """Mean per-step log density under the posterior-mean parameters."""
        check_is_fitted(self, "params_")
        data = as_summary_series(X, self.n, self.n0)
        aug = None
        if np.max(np.diff(data.times)) > AUGMENT_ABOVE:
            aug = initial_augmentation(data)
        steps = (3 if aug is not None else 1) * data.k
        return loglik_summary(data, aug, self.params_) / steps


class PlasticityNLS(BaseEstimator):
    """Least-squares baseline over the same parameter box."""

    def __init__(self, objective="nls1", multistart=20, seed=0,
                 n=5, n0=1000.0):
        self.objective = objective
        self.multistart = multistart
        self.seed = seed
        self.n = n
        self.n0 = n0

    def fit(self, X, y=None):
        data = as_summary_series(X, self.n, self.n0)
        fit = nls_fit(data, objective=self.objective,
                      multistart=self.multistart, seed=self.seed)
        self.data_ = data
        self.params_ = fit.params
        self.objective_value_ = fit.value
        return self

    def predict(self, times):
        check_is_fitted(self, "params_")
        times = np.asarray(times, dtype=float)
        t0 = self.data_.times[0]
        grid = times if times[0] == t0 else np.concatenate(([t0], times))
        path = rk4_solve(self.params_, float(self.data_.means[0]),
                         float(self.data_.variances[0]), self.data_.n0, grid)
        offset = 0 if times[0] == t0 else 1
        return np.column_stack([path.mu[offset:], path.sigma2[offset:]])
