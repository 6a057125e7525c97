import math

import numpy as np
import pytest

from plasticity import (LAMBDA_MAX, ModelParams, ModelVariant, MomentState,
                        PopulationState, Priors, SummarySeries,
                        TrajectorySeries, clamp_to_variant)


def test_clamp_hierarchy_zeroes_beta():
    p = ModelParams(0.9, 0.2, 0.6, 0.5)
    c = clamp_to_variant(p, ModelVariant.HIERARCHY)
    assert (c.alpha, c.beta, c.lambda1, c.lambda2) == (0.9, 0.0, 0.6, 0.5)


def test_clamp_full_is_identity():
    p = ModelParams(0.37, 0.81, 0.11, 0.29)
    assert clamp_to_variant(p, ModelVariant.FULL) == p


def test_clamp_equal_rates_ties_lambdas():
    p = ModelParams(0.9, 0.2, 0.6, 0.5)
    c = clamp_to_variant(p, ModelVariant.EQUAL_RATES)
    assert (c.alpha, c.beta, c.lambda1, c.lambda2) == (0.9, 0.2, 0.6, 0.6)


def test_clamp_is_idempotent():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        p = ModelParams(rng.uniform(), rng.uniform(),
                        rng.uniform(1e-6, LAMBDA_MAX),
                        rng.uniform(1e-6, LAMBDA_MAX))
        for variant in ModelVariant:
            once = clamp_to_variant(p, variant)
            assert clamp_to_variant(once, variant) == once


@pytest.mark.parametrize("kwargs", [
    dict(alpha=1.0001, beta=0.2, lambda1=0.5, lambda2=0.5),
    dict(alpha=-0.01, beta=0.2, lambda1=0.5, lambda2=0.5),
    dict(alpha=0.5, beta=1.5, lambda1=0.5, lambda2=0.5),
    dict(alpha=0.5, beta=0.2, lambda1=math.log(2) + 1e-6, lambda2=0.5),
    dict(alpha=0.5, beta=0.2, lambda1=0.5, lambda2=0.0),
])
def test_params_rejected_outside_bounds(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_lambda_upper_bound_inclusive():
    ModelParams(0.5, 0.5, LAMBDA_MAX, LAMBDA_MAX)


def test_variant_free_parameters():
    assert ModelVariant.FULL.free_parameters == (
        "alpha", "beta", "lambda1", "lambda2")
    assert ModelVariant.EQUAL_RATES.free_parameters == (
        "alpha", "beta", "lambda1")
    assert ModelVariant.HIERARCHY.free_parameters == (
        "alpha", "lambda1", "lambda2")
    assert ModelVariant.HIERARCHY_EQUAL.free_parameters == ("alpha", "lambda1")


def test_variant_labels_round_trip():
    for v in ModelVariant:
        assert ModelVariant.from_label(v.value) is v
    assert ModelVariant.from_label("hierarchy_equal") is \
        ModelVariant.HIERARCHY_EQUAL
    with pytest.raises(ValueError):
        ModelVariant.from_label("both")


def test_population_state_validation():
    s = PopulationState(x=3, y=4, t=1.0)
    assert s.total == 7
    assert s.proportion == pytest.approx(3 / 7)
    with pytest.raises(ValueError):
        PopulationState(x=0, y=0)
    with pytest.raises(ValueError):
        PopulationState(x=-1, y=5)


def test_summary_series_validation():
    good = SummarySeries(times=[0, 2, 4], means=[0.1, 0.2, 0.3],
                         variances=[0.0, 0.001, 0.002], n=5, n0=1000)
    assert good.k == 2
    assert not good.times.flags.writeable
    with pytest.raises(ValueError):
        SummarySeries(times=[0, 2, 2], means=[0.1, 0.2, 0.3],
                      variances=[0, 0, 0], n=5, n0=1000)
    with pytest.raises(ValueError):
        SummarySeries(times=[0, 2, 4], means=[0.1, 1.2, 0.3],
                      variances=[0, 0, 0], n=5, n0=1000)
    with pytest.raises(ValueError):
        SummarySeries(times=[0, 2, 4], means=[0.1, 0.2, 0.3],
                      variances=[0, -1e-9, 0], n=5, n0=1000)
    with pytest.raises(ValueError):
        SummarySeries(times=[0, 2, 4], means=[0.1, 0.2, 0.3],
                      variances=[0, 0, 0], n=1, n0=1000)
    with pytest.raises(ValueError):
        SummarySeries(times=[0, 2, 4], means=[0.1, 0.2, 0.3],
                      variances=[0, 0, 0], n=5, n0=0.5)


def test_trajectory_series_validation():
    ts = TrajectorySeries(times=[0, 1, 2], r=[[0.1, 0.2, 0.3]], n0=100)
    assert ts.n == 1 and ts.k == 2
    with pytest.raises(ValueError):
        TrajectorySeries(times=[0, 1, 2], r=[[0.1, 0.2, 1.3]], n0=100)
    with pytest.raises(ValueError):
        TrajectorySeries(times=[0, 1], r=[[0.1, 0.2, 0.3]], n0=100)


def test_moment_state_bounds():
    s = MomentState(mu=0.3, sigma2=0.01, nt=100.0, t=2.0)
    assert s.proportion_bound_ok()
    # the averaged variance dynamics can breach the proportion bound at the
    # absorbing boundary; the type reports it without rejecting
    edge = MomentState(mu=0.0, sigma2=1e-3, nt=100.0)
    assert not edge.proportion_bound_ok()
    with pytest.raises(ValueError):
        MomentState(mu=1.2, sigma2=0.0, nt=10.0)
    with pytest.raises(ValueError):
        MomentState(mu=0.5, sigma2=-1e-9, nt=10.0)
    with pytest.raises(ValueError):
        MomentState(mu=0.5, sigma2=0.0, nt=0.0)


def test_priors_validation_and_sampling():
    priors = Priors()
    lo, hi = priors.bounds()
    assert lo.tolist() == [0, 0, 0, 0]
    assert hi[2] == pytest.approx(LAMBDA_MAX)
    with pytest.raises(ValueError):
        Priors(alpha_range=(0.5, 0.5))
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = priors.sample_params(rng)
        assert 0 <= p.alpha <= 1 and 0 < p.lambda1 <= LAMBDA_MAX
    tied = priors.sample_params(rng, ModelVariant.HIERARCHY_EQUAL)
    assert tied.beta == 0.0 and tied.lambda1 == tied.lambda2
