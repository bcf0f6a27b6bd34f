"""Reference stochastic-gradient samplers on the same oracle interface.

SGLD and SGHMC are written out here. SGNHT is not: it is the ``no_tempering``
TACT-HMC ablation, so it is built by delegation and cannot drift from it.

All baselines use the rescaled variables of :mod:`tacthmc.dynamics`, with
``step_size`` playing the role of ``eta = dt^2 / m``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SampleStore, SamplerConfig, SystemState, TACTHMC, default_theta0
from .errors import DivergenceError, InvalidInputError
from .rng import NormalStream

__all__ = [
    "BASELINE_KINDS",
    "BaselineConfig",
    "BaselineSampler",
    "sgld_step",
    "sghmc_step",
    "sgnht_step",
    "sgnht_sampler_config",
    "run_baseline",
]

BASELINE_KINDS = ("sgld", "sghmc", "sgnht")


@dataclass(frozen=True)
class BaselineConfig:
    """``friction_or_noise_level``: SGHMC friction ``C``; SGNHT initial thermostat
    and injected noise ``c``; ignored by SGLD.
    """

    kind: str = "sghmc"
    step_size: float = 0.01
    friction_or_noise_level: float = 0.1
    seed: int = 0
    thin: int = 1
    thermal_inertia: float = 1.0
    theta0: tuple = None

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise InvalidInputError(f"kind must be one of {BASELINE_KINDS}, got {self.kind!r}")
        if not self.step_size > 0:
            raise InvalidInputError("step_size must be positive")
        if not self.friction_or_noise_level >= 0:
            raise InvalidInputError("friction_or_noise_level must be non-negative")
        if self.kind == "sghmc" and not self.friction_or_noise_level <= 1:
            # friction above 1 per step overshoots the momentum through zero
            raise InvalidInputError("SGHMC friction must lie in [0, 1]")
        if int(self.thin) != self.thin or self.thin < 1:
            raise InvalidInputError("thin must be an integer >= 1")
        if not self.thermal_inertia > 0:
            raise InvalidInputError("thermal_inertia must be positive")


def sgnht_sampler_config(config):
    """The ``no_tempering`` sampler configuration that SGNHT aliases."""
    eps = config.step_size
    c = config.friction_or_noise_level
    return SamplerConfig(
        eta_theta=eps, eta_xi=eps, c_theta=c, c_xi=c,
        gamma_theta=config.thermal_inertia, gamma_xi=config.thermal_inertia,
        K=config.thin, ablation="no_tempering", bias_mode="none",
        resample_momenta=False, theta0=config.theta0, seed=config.seed,
    )


def _check(state, step):
    if not state.is_finite():
        raise DivergenceError(f"non-finite value at step {step}", step=step)


def sgld_step(state, oracle, config, normals):
    """``theta += (eps / 2) f + N(0, eps)``; ``state`` is updated in place."""
    eps = config.step_size
    f = oracle.evaluate(state.theta).force_estimate
    noise = normals.many(state.theta.shape[0])
    state.theta = state.theta + 0.5 * eps * f + math.sqrt(eps) * noise
    state.step += 1
    _check(state, state.step)
    return state


def sghmc_step(state, oracle, config, normals):
    """``r += eps f - C r + N(0, 2 C eps)``; ``theta += r``."""
    eps = config.step_size
    C = config.friction_or_noise_level
    f = oracle.evaluate(state.theta).force_estimate
    noise = normals.many(state.theta.shape[0])
    state.r_theta = state.r_theta + eps * f - C * state.r_theta + math.sqrt(2.0 * C * eps) * noise
    state.theta = state.theta + state.r_theta
    state.step += 1
    _check(state, state.step)
    return state


def sgnht_step(state, oracle, config, sampler=None):
    """One step of the ``no_tempering`` dynamics.

    Pass the same ``sampler`` across calls to keep one RNG stream; a fresh one
    is seeded from ``config.seed`` otherwise.
    """
    if sampler is None:
        sampler = TACTHMC(sgnht_sampler_config(config), oracle, fast_scalar=False)
    return sampler.step(state)


class BaselineSampler:
    """One baseline chain with its own RNG stream seeded from ``config.seed``."""

    def __init__(self, config, oracle):
        self.config = config
        self.oracle = oracle
        self.dim = oracle.dim
        self._delegate = None
        if config.kind == "sgnht":
            self._delegate = TACTHMC(sgnht_sampler_config(config), oracle)
        self.rng = np.random.default_rng(config.seed)
        self.normals = NormalStream(self.rng)
        self._scalar = self.dim == 1 and hasattr(oracle, "evaluate_scalar")

    def initialize(self):
        if self._delegate is not None:
            return self._delegate.initialize()
        c = self.config
        theta = default_theta0(self.oracle) if c.theta0 is None else np.array(c.theta0, dtype=float).reshape(-1)
        if theta.shape[0] != self.dim:
            raise InvalidInputError(f"theta0 has dimension {theta.shape[0]}, expected {self.dim}")
        r = math.sqrt(c.step_size) * self.normals.many(self.dim)
        if c.kind == "sgld":
            r = np.zeros(self.dim)
        return SystemState(theta, 0.0, r, 0.0, 0.0, 0.0, 0)

    def step(self, state):
        kind = self.config.kind
        if kind == "sgnht":
            return self._delegate.step(state)
        if kind == "sgld":
            return sgld_step(state, self.oracle, self.config, self.normals)
        return sghmc_step(state, self.oracle, self.config, self.normals)

    def run(self, n_steps, burn_in=None, trace_stride=0, state=None):
        """Same contract as :meth:`TACTHMC.run`; samples are taken every ``thin`` steps."""
        if self._delegate is not None:
            store = self._delegate.run(n_steps, burn_in, trace_stride, state)
            self.state = self._delegate.state
            return store
        if burn_in is None:
            burn_in = n_steps // 5
        if n_steps > 0 and not 0 <= burn_in < n_steps:
            raise InvalidInputError("need 0 <= burn_in < n_steps")
        store = SampleStore(self.dim, burn_in)
        state = self.initialize() if state is None else state
        self.state = state
        if self._scalar:
            self._run_scalar(state, n_steps, burn_in, trace_stride, store)
            return store
        thin = self.config.thin
        for _ in range(n_steps):
            last = state.copy()
            try:
                self.step(state)
            except DivergenceError as err:
                err.last_state = last
                err.store = store
                raise
            k = state.step
            if trace_stride and k % trace_stride == 0:
                store.traces.append(_trace_row(state, float("nan")))
            if k > burn_in and k % thin == 0:
                store.samples.append(state.theta.copy())
                store.collection_steps.append(k)
        return store

    def _run_scalar(self, state, n_steps, burn_in, trace_stride, store):
        # Float-only loop for D = 1; same draws and arithmetic as the array path.
        c = self.config
        eps = c.step_size
        C = c.friction_or_noise_level
        sgld = c.kind == "sgld"
        half_eps = 0.5 * eps
        sd = math.sqrt(eps) if sgld else math.sqrt(2.0 * C * eps)
        one = self.normals.one
        evaluate = self.oracle.evaluate_scalar
        theta = float(state.theta[0])
        r = float(state.r_theta[0])
        k = state.step
        thin = c.thin
        U = float("nan")
        for _ in range(n_steps):
            prev = (theta, r)
            U, f = evaluate(theta)
            if sgld:
                theta = theta + half_eps * f + sd * one()
            else:
                r = r + eps * f - C * r + sd * one()
                theta = theta + r
            k += 1
            if not math.isfinite(theta + r):
                last = SystemState(np.array([prev[0]]), 0.0, np.array([prev[1]]), 0.0, 0.0, 0.0, k - 1)
                err = DivergenceError(f"non-finite value at step {k}", step=k, last_state=last)
                err.store = store
                raise err
            if trace_stride and k % trace_stride == 0:
                store.traces.append((k, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, U))
            if k > burn_in and k % thin == 0:
                store.samples.append(np.array([theta]))
                store.collection_steps.append(k)
        state.theta = np.array([theta])
        state.r_theta = np.array([r])
        state.step = k


def _trace_row(state, potential):
    return (state.step, 0.0, 1.0, 1.0, state.z_theta, state.z_xi, 0.0, potential)


def run_baseline(config, oracle, n_steps, burn_in=None, trace_stride=0):
    return BaselineSampler(config, oracle).run(n_steps, burn_in, trace_stride)
