"""Adaptive Bayesian frequency estimation with window-expansion design."""

from .likelihood import ExperimentRecord, LikelihoodModel, likelihood, log_likelihood_of_record
from .simulate import RunConfig, RunTrace, TrueSystem, run_estimation
from .smc import ParticleEnsemble, ResampleConfig, bayes_update, ess, init_prior, maybe_resample, mean_std
from .strategies import StrategyConfig, StrategyKind

__version__ = "0.1.0"
