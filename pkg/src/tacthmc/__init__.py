"""Thermostat-assisted continuously-tempered Hamiltonian Monte Carlo (TACT-HMC)
with noisy and mini-batch gradient oracles, reference SG-MCMC baselines,
diagnostics and a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .baselines import BaselineConfig, BaselineSampler, run_baseline
from .diagnostics import (autocorrelation, effective_sample_size, histogram,
                          thermostat_marginal_test, tv_distance, xi_flatness)
from .dynamics import SamplerConfig, SystemState, TACTHMC, run_chain
from .errors import (ConfigError, DivergenceError, InsufficientDataError, InvalidInputError,
                     StepTooLargeError, TactError, UnsupportedDimensionError,
                     UnsupportedTargetError)
from .models import (ConjugateGaussianModel, ExactOracle, GaussianMixtureTarget,
                     LogisticRegressionModel, MiniBatchOracle, NoiseInjector, NoisyOracle)
from .tempering import BiasTable, TemperingProfile

__all__ = [
    "__version__",
    "BaselineConfig", "BaselineSampler", "run_baseline",
    "autocorrelation", "effective_sample_size", "histogram", "thermostat_marginal_test",
    "tv_distance", "xi_flatness",
    "SamplerConfig", "SystemState", "TACTHMC", "run_chain",
    "ConfigError", "DivergenceError", "InsufficientDataError", "InvalidInputError",
    "StepTooLargeError", "TactError", "UnsupportedDimensionError", "UnsupportedTargetError",
    "ConjugateGaussianModel", "ExactOracle", "GaussianMixtureTarget", "LogisticRegressionModel",
    "MiniBatchOracle", "NoiseInjector", "NoisyOracle",
    "BiasTable", "TemperingProfile",
]
