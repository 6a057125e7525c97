"""Inference of stem-cell plasticity from temporal cell-proportion data.

A two-type branching process drives the dynamics; inference runs through
moment-equation likelihoods with Metropolis-within-Gibbs sampling, missing
thirds-grid values treated as latent data, and DIC for model selection.
An exact event-driven simulator doubles as data source and test oracle.
"""

__version__ = "0.1.0"

from .bench import (BenchRow, FitResult, dic, evaluate_ase_cr, nls_fit,
                    run_n0_sweep, select_model)
from .dynamics import (MomentPath, StepMap, equilibrium_mu,
                       improved_euler_step, mean_rhs, nt_mean_constraint,
                       nt_mean_constraint_thirds, nt_var_constraint,
                       rk4_solve, var_rhs)
from .estimator import PlasticityEstimator, PlasticityNLS, as_summary_series
from .likelihood import (StepDensityInput, log_prior, loglik_summary,
                         step_logdensity_summary, step_logdensity_trajectory)
from .mcmc import (AugmentedData, ChainConfig, McmcResult, PosteriorSummary,
                   mpsrf, run_chains, run_chains_trajectory, summarize)
from .model import (LAMBDA_MAX, ModelParams, ModelVariant, MomentState,
                    PopulationState, Priors, SummarySeries, TrajectorySeries,
                    clamp_to_variant)
from .simulate import (SimConfig, StudyDataset, gillespie_propensities,
                       run_simulation_study, simulate_trajectory,
                       synthesize_summary_conditional,
                       synthesize_summary_gillespie, synthesize_trajectories)

__all__ = [
    "AugmentedData", "BenchRow", "ChainConfig", "FitResult", "LAMBDA_MAX",
    "McmcResult", "ModelParams", "ModelVariant", "MomentPath", "MomentState",
    "PlasticityEstimator", "PlasticityNLS", "PopulationState",
    "PosteriorSummary", "Priors", "SimConfig", "StepDensityInput", "StepMap",
    "StudyDataset", "SummarySeries", "TrajectorySeries", "as_summary_series",
    "clamp_to_variant", "dic", "equilibrium_mu", "evaluate_ase_cr",
    "gillespie_propensities", "improved_euler_step", "log_prior",
    "loglik_summary", "mean_rhs", "mpsrf", "nls_fit", "nt_mean_constraint",
    "nt_mean_constraint_thirds", "nt_var_constraint", "rk4_solve",
    "run_chains", "run_chains_trajectory", "run_n0_sweep",
    "run_simulation_study", "select_model", "simulate_trajectory",
    "step_logdensity_summary", "step_logdensity_trajectory", "summarize",
    "synthesize_summary_conditional", "synthesize_summary_gillespie",
    "synthesize_trajectories", "var_rhs",
]
