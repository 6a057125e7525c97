import numpy as np
import pytest

from plasticity import ModelParams, run_simulation_study


@pytest.fixture(scope="session")
def ref_params():
    return ModelParams(alpha=0.9, beta=0.2, lambda1=0.6, lambda2=0.5)


@pytest.fixture(scope="session")
def sim1_datasets():
    """Criterion-1 bundle: 20 prior-drawn conditional-synthesis datasets."""
    return run_simulation_study(1, 20, seed=7)


@pytest.fixture(scope="session")
def sim2_datasets():
    """Criterion-2 bundle: 20 exact-simulation datasets, thirds missing."""
    return run_simulation_study(2, 20, seed=7)


@pytest.fixture(scope="session")
def sim3_datasets():
    """Criterion-3 bundle: 10 replicates per initial population size."""
    return run_simulation_study(3, 10, seed=5, n0_values=(100, 1000, 2000))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
