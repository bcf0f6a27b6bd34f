"""The TACT-HMC integrator in rescaled variables.

With time step ``dt`` and masses ``m`` the state is carried as
``r = p dt / m`` (momenta), ``z = s dt`` (thermostats), ``eta = dt^2 / m``
(step sizes) and ``gamma = kappa / (m D)`` (thermal inertias). One step is an
explicit Euler update in the fixed order: thermostats, bias lookup, oracle
evaluation, momenta, bias update, ``xi`` with wall reflection, ``theta``.
Samples are collected every ``K`` steps while ``xi`` sits on the plateau,
where the effective temperature is exactly ``T``.
"""

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidInputError, StepTooLargeError, UnsupportedDimensionError
from .rng import NormalStream
from .tempering import BIAS_MODES, BiasTable, TemperingProfile, reflect

__all__ = [
    "ABLATIONS",
    "SamplerConfig",
    "SystemState",
    "FullThermostatState",
    "SampleStore",
    "TACTHMC",
    "initialize",
    "step",
    "step_full_thermostat",
    "collection_predicate",
    "run_chain",
    "extended_hamiltonian",
    "TRACE_FIELDS",
]

ABLATIONS = ("full", "no_thermostat", "no_tempering")
TRACE_FIELDS = ("step", "xi", "lambda", "eff_temp", "z_theta", "z_xi", "r_xi", "U_est")
MAX_FULL_THERMOSTAT_DIM = 3


@dataclass(frozen=True)
class SamplerConfig:
    """Hyperparameters of one TACT-HMC chain.

    The first seven fields are the tuple ``[eta_theta, eta_xi, c_theta, c_xi,
    gamma_theta, gamma_xi, K]``. ``theta0`` overrides the starting position.
    """

    eta_theta: float = 0.0015
    eta_xi: float = 0.0015
    c_theta: float = 0.05
    c_xi: float = 0.05
    gamma_theta: float = 1.0
    gamma_xi: float = 1.0
    K: int = 50
    ablation: str = "full"
    bias_mode: str = "abf_paper"
    J: int = 100
    h_A: float = 0.01
    resample_momenta: bool = True
    theta0: tuple = None
    seed: int = 0

    def __post_init__(self):
        for name in ("eta_theta", "eta_xi", "gamma_theta", "gamma_xi"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("c_theta", "c_xi"):
            if not getattr(self, name) >= 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidInputError("K must be an integer >= 1")
        if self.ablation not in ABLATIONS:
            raise InvalidInputError(f"ablation must be one of {ABLATIONS}")
        if self.bias_mode not in BIAS_MODES + ("none",):
            raise InvalidInputError(f"bias_mode must be one of {BIAS_MODES + ('none',)}")
        if self.bias_mode == "metadynamics" and not self.h_A > 0:
            raise InvalidInputError("h_A must be positive")

    @classmethod
    def from_tuple(cls, values, **kwargs):
        eta_theta, eta_xi, c_theta, c_xi, gamma_theta, gamma_xi, K = values
        return cls(eta_theta, eta_xi, c_theta, c_xi, gamma_theta, gamma_xi, int(K), **kwargs)

    def as_tuple(self):
        return (self.eta_theta, self.eta_xi, self.c_theta, self.c_xi,
                self.gamma_theta, self.gamma_xi, self.K)

    @property
    def tempering(self):
        return self.ablation != "no_tempering"

    @property
    def thermostat(self):
        return self.ablation != "no_thermostat"


@dataclass
class SystemState:
    theta: np.ndarray
    xi: float
    r_theta: np.ndarray
    r_xi: float
    z_theta: float
    z_xi: float
    step: int = 0

    def copy(self):
        return replace(self, theta=self.theta.copy(), r_theta=self.r_theta.copy())

    def is_finite(self):
        total = (self.theta.sum() + self.r_theta.sum() + self.xi + self.r_xi
                 + self.z_theta + self.z_xi)
        return math.isfinite(total)


@dataclass
class FullThermostatState:
    """Matrix thermostat ``Z[i, j]`` (rescaled ``s_theta<i,j>``) for small ``D``."""

    Z: np.ndarray
    gamma: np.ndarray

    @classmethod
    def isotropic(cls, dim, c_theta, gamma_theta):
        if dim > MAX_FULL_THERMOSTAT_DIM:
            raise UnsupportedDimensionError(
                f"full thermostat matrices are limited to D <= {MAX_FULL_THERMOSTAT_DIM}")
        return cls(c_theta * np.eye(dim), np.full((dim, dim), float(gamma_theta)))


@dataclass
class SampleStore:
    dim: int
    burn_in: int = 0
    samples: list = field(default_factory=list)
    collection_steps: list = field(default_factory=list)
    traces: list = field(default_factory=list)

    def sample_array(self):
        if not self.samples:
            return np.empty((0, self.dim))
        return np.vstack(self.samples)

    def trace_array(self, name=None):
        arr = np.array(self.traces, dtype=float).reshape(-1, len(TRACE_FIELDS))
        if name is None:
            return arr
        return arr[:, TRACE_FIELDS.index(name)]

    def post_burn_in_trace(self, name=None):
        arr = self.trace_array()
        arr = arr[arr[:, 0] > self.burn_in]
        return arr if name is None else arr[:, TRACE_FIELDS.index(name)]

    def write_samples_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"theta_{i}" for i in range(self.dim)])
            for k, theta in zip(self.collection_steps, self.samples):
                writer.writerow([k] + [f"{v:.17g}" for v in theta])

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_FIELDS)
            for row in self.traces:
                writer.writerow([int(row[0])] + [f"{v:.17g}" for v in row[1:]])


def default_theta0(oracle):
    """Prior mean for Bayesian models, the origin otherwise."""
    target = getattr(oracle, "target", None)
    prior_mean = getattr(target, "prior_mean", None)
    if prior_mean is not None:
        return np.array(prior_mean, dtype=float)
    return np.zeros(oracle.dim)


class TACTHMC:
    """One TACT-HMC chain: configuration, oracle, bias table and RNG stream.

    ``full_thermostat=True`` replaces the scalar ``z_theta`` by a ``D x D``
    matrix (``D <= 3``); the matrix lives in ``self.full_state``. For ``D = 1``
    oracles offering ``evaluate_scalar`` the chain runs on plain floats unless
    ``fast_scalar=False``; the update arithmetic is the same either way.
    """

    def __init__(self, config, oracle, profile=None, bias_table=None, full_thermostat=False,
                 fast_scalar=True):
        self.config = config
        self.oracle = oracle
        self.profile = profile if profile is not None else TemperingProfile()
        self.dim = oracle.dim
        if bias_table is None and config.tempering and config.bias_mode != "none":
            bias_table = BiasTable(self.profile.W0, config.J, config.bias_mode)
        self.bias_table = bias_table if config.tempering else None
        self.rng = np.random.default_rng(config.seed)
        self.normals = NormalStream(self.rng)
        self.full_state = None
        if full_thermostat:
            self.full_state = FullThermostatState.isotropic(
                self.dim, config.c_theta if config.thermostat else 0.0, config.gamma_theta)
        self._scalar = (fast_scalar and not full_thermostat and self.dim == 1
                        and hasattr(oracle, "evaluate_scalar"))
        c = config
        self._noise_theta = math.sqrt(2.0 * c.c_theta * c.eta_theta)
        self._noise_xi = math.sqrt(2.0 * c.c_xi * c.eta_xi)
        self._sqrt_eta_theta = math.sqrt(c.eta_theta)
        self._sqrt_eta_xi = math.sqrt(c.eta_xi)
        self.last_potential = float("nan")
        # the fused float loop in _run_scalar; off only to cross-check it
        self._fused = True

    def _draw_r_theta(self):
        if self._scalar:
            return self._sqrt_eta_theta * self.normals.one()
        return self._sqrt_eta_theta * self.normals.many(self.dim)

    def _draw_r_xi(self):
        return self._sqrt_eta_xi * self.normals.one() if self.config.tempering else 0.0

    def initialize(self, theta0=None):
        """Fresh state: Gaussian momenta, thermostats at ``(c_theta, c_xi)``, ``xi`` on the plateau."""
        c = self.config
        r_theta = self._sqrt_eta_theta * self.normals.many(self.dim)
        r_xi = self._draw_r_xi()
        if theta0 is None:
            theta0 = c.theta0
        theta = default_theta0(self.oracle) if theta0 is None else np.array(theta0, dtype=float).reshape(-1)
        if theta.shape[0] != self.dim:
            raise InvalidInputError(f"theta0 has dimension {theta.shape[0]}, expected {self.dim}")
        xi = self.rng.uniform(-self.profile.xi0, self.profile.xi0) if c.tempering else 0.0
        zt, zx = (c.c_theta, c.c_xi) if c.thermostat else (0.0, 0.0)
        if not c.tempering:
            zx = 0.0
        return SystemState(theta, float(xi), r_theta, float(r_xi), float(zt), float(zx), 0)

    def _internal(self, state):
        if not self._scalar:
            return state
        return SystemState(float(state.theta[0]), state.xi, float(state.r_theta[0]), state.r_xi,
                           state.z_theta, state.z_xi, state.step)

    def _export(self, s, into=None):
        if not self._scalar:
            return s
        into = into if into is not None else SystemState(None, 0.0, None, 0.0, 0.0, 0.0)
        into.theta = np.array([s.theta])
        into.r_theta = np.array([s.r_theta])
        into.xi, into.r_xi, into.z_theta, into.z_xi, into.step = s.xi, s.r_xi, s.z_theta, s.z_xi, s.step
        return into

    def _advance(self, s):
        c = self.config
        profile = self.profile
        scalar = self._scalar
        normals = self.normals
        tempering = c.tempering
        k = s.step + 1
        xi = s.xi
        r_theta = s.r_theta
        r_xi = s.r_xi
        if tempering:
            lam = profile.coupling(xi)
            dlam = profile.coupling_derivative(xi)
        else:
            lam, dlam = 1.0, 0.0
        lam2 = lam * lam
        dlam2 = dlam * dlam
        full = self.full_state

        if c.thermostat:
            if tempering:
                s.z_xi += dlam2 * (r_xi * r_xi - c.eta_xi) / c.gamma_xi
            if full is not None:
                full.Z = full.Z + lam2 * (np.outer(r_theta, r_theta) - c.eta_theta * np.eye(self.dim)) / full.gamma
                s.z_theta = float(np.trace(full.Z)) / self.dim
            elif scalar:
                s.z_theta += lam2 * (r_theta * r_theta - c.eta_theta) / c.gamma_theta
            else:
                s.z_theta += lam2 * (r_theta @ r_theta / self.dim - c.eta_theta) / c.gamma_theta

        table = self.bias_table
        if table is not None:
            j = table.index(xi)
            dA = table.force_at(j, xi)
        else:
            dA = 0.0
        if scalar:
            U, f = self.oracle.evaluate_scalar(s.theta)
        else:
            out = self.oracle.evaluate(s.theta)
            U, f = out.potential_estimate, out.force_estimate

        if tempering:
            r_xi = (r_xi - dlam * (c.eta_xi * U + self._noise_xi * normals.one())
                    - dlam2 * s.z_xi * r_xi + c.eta_xi * dA)
        noise_theta = normals.one() if scalar else normals.many(self.dim)
        friction = full.Z @ r_theta if full is not None else s.z_theta * r_theta
        r_theta = r_theta + lam * (c.eta_theta * f + self._noise_theta * noise_theta) - lam2 * friction

        if table is not None:
            table.deposit(j, dlam * U, k, c.h_A)
        if tempering:
            if not math.isfinite(xi + r_xi):
                # reflect() would report this as a step-size problem
                raise DivergenceError(f"non-finite value at step {k}", step=k)
            xi, r_xi = reflect(profile, xi + r_xi, r_xi)

        s.theta = s.theta + r_theta
        s.r_theta = r_theta
        s.xi = xi
        s.r_xi = r_xi
        s.step = k
        self.last_potential = U
        if scalar:
            finite = math.isfinite(s.theta + r_theta + xi + r_xi + s.z_theta + s.z_xi + U)
        else:
            finite = math.isfinite(U) and s.is_finite()
        if not finite:
            raise DivergenceError(f"non-finite value at step {k}", step=k)
        return s

    def step(self, state):
        """Advance ``state`` by one step in place and return it."""
        if not self._scalar:
            return self._advance(state)
        s = self._advance(self._internal(state))
        return self._export(s, into=state)

    def collection_predicate(self, state):
        return state.step % self.config.K == 0 and (
            not self.config.tempering or self.profile.on_plateau(state.xi))

    def _resample(self, s):
        s.r_theta = self._draw_r_theta()
        s.r_xi = float(self._draw_r_xi())

    def run(self, n_steps, burn_in=None, trace_stride=0, state=None):
        """Simulate ``n_steps`` steps; collect samples after ``burn_in`` steps.

        ``burn_in`` defaults to 20% of ``n_steps``. ``trace_stride > 0`` records a
        trace row every that many steps. On divergence the raised
        :class:`DivergenceError` carries the last finite state and the partial
        store as ``error.store``. The final state is left in ``self.state``.
        """
        if burn_in is None:
            burn_in = n_steps // 5
        if n_steps > 0 and not 0 <= burn_in < n_steps:
            raise InvalidInputError("need 0 <= burn_in < n_steps")
        store = SampleStore(self.dim, burn_in)
        if state is None:
            state = self.initialize()
        self.state = state
        if n_steps <= 0:
            return store
        s = self._internal(state)
        c = self.config
        profile = self.profile
        tempering = c.tempering
        resample = c.resample_momenta
        K = c.K
        xi0 = profile.xi0
        T = profile.T
        scalar = self._scalar
        samples = store.samples
        traces = store.traces
        advance = self._advance
        if scalar and self._fused:
            self._run_scalar(s, n_steps, burn_in, trace_stride, store)
            self.state = self._export(s, into=state)
            return store
        checkpoint = replace(s) if scalar else s.copy()
        for _ in range(n_steps):
            try:
                advance(s)
            except DivergenceError as err:
                err.last_state = self._export(checkpoint)
                err.store = store
                self.state = err.last_state
                raise
            except StepTooLargeError as err:
                err.store = store
                self.state = self._export(checkpoint)
                raise
            k = s.step
            if trace_stride and k % trace_stride == 0:
                lam = profile.coupling(s.xi) if tempering else 1.0
                traces.append((k, s.xi, lam, T / lam, s.z_theta, s.z_xi, s.r_xi,
                               self.last_potential))
            if k > burn_in and k % K == 0 and (not tempering or abs(s.xi) <= xi0):
                samples.append(np.array([s.theta]) if scalar else s.theta.copy())
                store.collection_steps.append(k)
                if resample:
                    self._resample(s)
            if k % 1000 == 0:
                checkpoint = replace(s) if scalar else s.copy()
        self.state = self._export(s, into=state)
        return store

    def _run_scalar(self, s, n_steps, burn_in, trace_stride, store):
        # _advance and the run loop fused on plain floats for D = 1. Every
        # expression mirrors _advance term for term so both paths agree bitwise.
        c = self.config
        p = self.profile
        tempering, thermostat = c.tempering, c.thermostat
        eta_t, eta_x = c.eta_theta, c.eta_xi
        g_t, g_x = c.gamma_theta, c.gamma_xi
        sd_t, sd_x = self._noise_theta, self._noise_xi
        sq_t, sq_x = self._sqrt_eta_theta, self._sqrt_eta_xi
        xi0, width, npow, W0, T = p.xi0, p.xi1 - p.xi0, p.n, p.W0, p.T
        npow1 = npow - 1
        K, resample, h_A = c.K, c.resample_momenta, c.h_A
        evaluate = self.oracle.evaluate_scalar
        table = self.bias_table
        abf = table is not None and table.mode != "metadynamics"
        per_bin = abf and table.mode == "abf_per_bin"
        if table is not None:
            edges = table._inner_edges
            values, counts = table.values, table.visit_counts
        normals = self.normals
        rng, block = normals.rng, normals.block
        buf, pos = normals._buf, normals._pos
        nbuf = len(buf)
        samples, steps, traces = store.samples, store.collection_steps, store.traces
        isfinite = math.isfinite
        theta, xi, r_t, r_x = s.theta, s.xi, s.r_theta, s.r_xi
        z_t, z_x, k = s.z_theta, s.z_xi, s.step
        U = self.last_potential
        check = (theta, xi, r_t, r_x, z_t, z_x, k)
        try:
            for _ in range(n_steps):
                k += 1
                if tempering:
                    a = abs(xi) - xi0
                    if a <= 0.0:
                        lam, dlam = 1.0, 0.0
                    else:
                        lam = 1.0 / (1.0 + (a / width) ** npow)
                        u = a / width
                        un1 = u ** npow1
                        denom = 1.0 + un1 * u
                        dlam = -npow * un1 / (width * denom * denom)
                        if not xi > 0:
                            dlam = -dlam
                else:
                    lam, dlam = 1.0, 0.0
                lam2 = lam * lam
                dlam2 = dlam * dlam
                if thermostat:
                    if tempering:
                        z_x += dlam2 * (r_x * r_x - eta_x) / g_x
                    z_t += lam2 * (r_t * r_t - eta_t) / g_t
                if table is not None:
                    if not -W0 <= xi <= W0:
                        raise IndexError(f"xi={xi!r} lies outside the well [-{W0}, {W0}]")
                    j = bisect_right(edges, xi)
                    dA = float(values[j]) if abf else table.force_at(j, xi)
                else:
                    dA = 0.0
                U, f = evaluate(theta)
                if tempering:
                    if pos >= nbuf:
                        buf, pos = rng.standard_normal(block).tolist(), 0
                        nbuf = len(buf)
                    n_x = buf[pos]
                    pos += 1
                    r_x = (r_x - dlam * (eta_x * U + sd_x * n_x)
                           - dlam2 * z_x * r_x + eta_x * dA)
                if pos >= nbuf:
                    buf, pos = rng.standard_normal(block).tolist(), 0
                    nbuf = len(buf)
                n_t = buf[pos]
                pos += 1
                r_t = r_t + lam * (eta_t * f + sd_t * n_t) - lam2 * (z_t * r_t)
                if table is not None:
                    if abf:
                        counts[j] += 1
                        m = int(counts[j]) if per_bin else k
                        values[j] += (dlam * U - values[j]) / m
                    else:
                        table.deposit(j, dlam * U, k, h_A)
                if tempering:
                    if not isfinite(xi + r_x):
                        raise DivergenceError(f"non-finite value at step {k}", step=k)
                    moved = xi + r_x
                    if -W0 <= moved <= W0:
                        xi = moved
                    else:
                        xi, r_x = reflect(p, moved, r_x)
                theta = theta + r_t
                if not isfinite(theta + r_t + xi + r_x + z_t + z_x + U):
                    raise DivergenceError(f"non-finite value at step {k}", step=k)
                if trace_stride and k % trace_stride == 0:
                    if tempering:
                        a = abs(xi) - xi0
                        lam = 1.0 if a <= 0.0 else 1.0 / (1.0 + (a / width) ** npow)
                    else:
                        lam = 1.0
                    traces.append((k, xi, lam, T / lam, z_t, z_x, r_x, U))
                if k > burn_in and k % K == 0 and (not tempering or abs(xi) <= xi0):
                    samples.append(np.array([theta]))
                    steps.append(k)
                    if resample:
                        if pos >= nbuf:
                            buf, pos = rng.standard_normal(block).tolist(), 0
                            nbuf = len(buf)
                        r_t = sq_t * buf[pos]
                        pos += 1
                        if tempering:
                            if pos >= nbuf:
                                buf, pos = rng.standard_normal(block).tolist(), 0
                                nbuf = len(buf)
                            r_x = float(sq_x * buf[pos])
                            pos += 1
                        else:
                            r_x = 0.0
                if k % 1000 == 0:
                    check = (theta, xi, r_t, r_x, z_t, z_x, k)
        except (DivergenceError, StepTooLargeError) as err:
            normals._buf, normals._pos = buf, pos
            last = SystemState(*check)
            self.state = self._export(last)
            if isinstance(err, DivergenceError):
                err.last_state = self.state
            err.store = store
            raise
        normals._buf, normals._pos = buf, pos
        s.theta, s.xi, s.r_theta, s.r_xi = theta, xi, r_t, r_x
        s.z_theta, s.z_xi, s.step = z_t, z_x, k
        self.last_potential = U


def initialize(config, oracle, profile=None):
    return TACTHMC(config, oracle, profile).initialize()


def step(state, config, oracle, profile=None, bias_table=None, rng=None):
    """Functional form of :meth:`TACTHMC.step` for a one-off step.

    ``rng`` defaults to a fresh generator seeded from ``config.seed``.
    """
    sampler = TACTHMC(config, oracle, profile, bias_table)
    if rng is not None:
        sampler.rng = rng
        sampler.normals = NormalStream(rng)
    return sampler.step(state)


def step_full_thermostat(state, full_state, config, oracle, profile=None, bias_table=None, rng=None):
    if state.theta.shape[0] > MAX_FULL_THERMOSTAT_DIM:
        raise UnsupportedDimensionError(
            f"full thermostat matrices are limited to D <= {MAX_FULL_THERMOSTAT_DIM}")
    sampler = TACTHMC(config, oracle, profile, bias_table, full_thermostat=True)
    sampler.full_state = full_state
    if rng is not None:
        sampler.rng = rng
        sampler.normals = NormalStream(rng)
    return sampler.step(state), full_state


def collection_predicate(state, config, profile=None):
    profile = profile if profile is not None else TemperingProfile()
    return state.step % config.K == 0 and (
        config.ablation == "no_tempering" or profile.on_plateau(state.xi))


def run_chain(config, oracle, profile=None, n_steps=0, burn_in=None, trace_stride=0,
              bias_table=None):
    sampler = TACTHMC(config, oracle, profile, bias_table)
    return sampler.run(n_steps, burn_in, trace_stride)


def extended_hamiltonian(state, target, profile, config):
    """``lambda(xi) U(theta) + |r_theta|^2 / (2 eta_theta) + r_xi^2 / (2 eta_xi)`` inside the well."""
    lam = profile.coupling(state.xi) if config.tempering else 1.0
    kinetic = state.r_theta @ state.r_theta / (2.0 * config.eta_theta)
    if config.tempering:
        kinetic += state.r_xi ** 2 / (2.0 * config.eta_xi)
    return lam * target.potential(state.theta) + kinetic
