"""Target distributions and the potential/force oracles consumed by the samplers.

Every target exposes ``potential(theta)`` (``U``), ``force(theta)``
(``-grad U``) and ``potential_and_force(theta)``. Potentials use the
unnormalised negative log-density; the additive constant each target drops is
documented on the class. The samplers only ever see an *oracle* object with an
``evaluate(theta) -> OracleOutput`` method and a ``dim`` attribute.
"""

import csv
import math
from dataclasses import dataclass
from itertools import islice

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import InvalidInputError, UnsupportedTargetError
from .rng import NormalStream

__all__ = [
    "GaussianMixtureTarget",
    "ConjugateGaussianModel",
    "LogisticRegressionModel",
    "OracleOutput",
    "NoiseInjector",
    "ExactOracle",
    "NoisyOracle",
    "MiniBatchOracle",
    "NoiseWrappedOracle",
    "exact_potential",
    "exact_force",
    "noisy_oracle",
    "minibatch_oracle",
    "minibatch_schedule",
    "analytic_density",
    "load_dataset_csv",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _as_theta(theta, dim):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != dim:
        raise InvalidInputError(f"theta has dimension {theta.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("theta must be finite")
    return theta


def _as_points(points, dim):
    points = np.asarray(points, dtype=float)
    if points.ndim <= 1 and dim == 1:
        return points.reshape(-1, 1)
    return points.reshape(-1, dim)


@dataclass(frozen=True)
class OracleOutput:
    potential_estimate: float
    force_estimate: np.ndarray
    exact: bool


class GaussianMixtureTarget:
    """Mixture of Gaussians with diagonal covariances.

    The potential is ``-log sum_k w_k prod_d sigma_kd^-1 exp(-q_k/2)``, i.e. the
    normalised density times ``(2 pi)^(D/2)``. For a standard normal this gives
    ``U(theta) = |theta|^2 / 2`` with ``U(0) = 0``.
    """

    def __init__(self, weights, means, variances):
        weights = np.asarray(weights, dtype=float).reshape(-1)
        means = np.asarray(means, dtype=float)
        variances = np.asarray(variances, dtype=float)
        if means.ndim == 1:
            means = means.reshape(-1, 1)
        if variances.ndim == 1:
            variances = variances.reshape(-1, 1)
        if means.shape[0] != weights.shape[0] or variances.shape != means.shape:
            raise InvalidInputError(
                "weights, means and variances must describe the same components "
                "with a consistent dimension"
            )
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError("weights must be strictly positive and sum to 1")
        if np.any(variances <= 0):
            raise InvalidInputError("variances must be strictly positive")
        self.weights = weights
        self.means = means
        self.variances = variances
        self.dim = means.shape[1]
        self._inv_var = 1.0 / variances
        self._log_coef = np.log(weights) - 0.5 * np.log(variances).sum(axis=1)
        if self.dim == 1:
            self._scalar_terms = list(zip(self._log_coef.tolist(), means[:, 0].tolist(),
                                          self._inv_var[:, 0].tolist()))

    @classmethod
    def standard_normal(cls, dim=1):
        return cls([1.0], np.zeros((1, dim)), np.ones((1, dim)))

    @classmethod
    def three_mode(cls, means=(-4.0, 0.0, 6.0), variances=(0.36, 0.64, 0.25),
                   weights=(0.3, 0.4, 0.3)):
        """Default 1D three-mode target; the parameters are invented defaults."""
        return cls(weights, means, variances)

    @classmethod
    def two_mode(cls, separation=8.0, variance=1.0):
        half = 0.5 * separation
        return cls([0.5, 0.5], [-half, half], [variance, variance])

    def __repr__(self):
        return (f"GaussianMixtureTarget(weights={self.weights.tolist()}, "
                f"means={self.means.tolist()}, variances={self.variances.tolist()})")

    def _log_terms(self, points):
        diff = points[:, None, :] - self.means[None, :, :]
        quad = np.einsum("nkd,kd->nk", diff * diff, self._inv_var)
        return self._log_coef[None, :] - 0.5 * quad, diff

    def potential(self, theta):
        return self.potential_and_force(theta)[0]

    def force(self, theta):
        return self.potential_and_force(theta)[1]

    def potential_and_force(self, theta):
        diff = theta - self.means
        log_terms = self._log_coef - 0.5 * (diff * diff * self._inv_var).sum(axis=1)
        top = log_terms.max()
        w = np.exp(log_terms - top)
        total = w.sum()
        potential = -(top + math.log(total))
        force = -(w @ (diff * self._inv_var)) / total
        return potential, force

    def potential_and_force_scalar(self, x):
        """Float-only ``(U, f)`` for ``D = 1``; avoids array overhead in long chains."""
        logs = []
        for log_coef, mu, inv in self._scalar_terms:
            d = x - mu
            logs.append((log_coef - 0.5 * d * d * inv, d * inv))
        top = max(v for v, _ in logs)
        total = 0.0
        acc = 0.0
        for v, g in logs:
            w = math.exp(v - top)
            total += w
            acc += w * g
        return -(top + math.log(total)), -acc / total

    def log_density(self, points):
        log_terms, _ = self._log_terms(_as_points(points, self.dim))
        return logsumexp(log_terms, axis=1) - 0.5 * self.dim * _LOG_2PI

    def density(self, points):
        """Normalised density evaluated row-wise on an ``(N, D)`` array."""
        return np.exp(self.log_density(points))

    def marginal(self, axis):
        return GaussianMixtureTarget(self.weights, self.means[:, axis], self.variances[:, axis])

    def mean(self):
        return self.weights @ self.means

    def variance(self):
        second = self.weights @ (self.variances + self.means ** 2)
        return second - self.mean() ** 2


class _DataModel:
    """Shared potential assembly for models with a prior and i.i.d. data."""

    dim: int
    n_data: int

    def log_prior(self, theta):
        raise NotImplementedError

    def grad_log_prior(self, theta):
        raise NotImplementedError

    def log_likelihoods(self, theta, idx):
        raise NotImplementedError

    def grad_log_likelihoods(self, theta, idx):
        raise NotImplementedError

    def potential_and_force(self, theta, idx=None):
        """Exact (``idx=None``) or mini-batch ``(U, f)`` with the |D|/|S| scaling."""
        if idx is None:
            idx = slice(None)
            scale = 1.0
        else:
            scale = self.n_data / len(idx)
        potential = -self.log_prior(theta) - scale * self.log_likelihoods(theta, idx).sum()
        force = self.grad_log_prior(theta) + scale * self.grad_log_likelihoods(theta, idx).sum(axis=0)
        return float(potential), force

    def potential(self, theta):
        return self.potential_and_force(theta)[0]

    def force(self, theta):
        return self.potential_and_force(theta)[1]

    def potential_and_force_scalar(self, x, idx=None):
        potential, force = self.potential_and_force(np.array([x]), idx)
        return potential, float(force[0])


class ConjugateGaussianModel(_DataModel):
    """Gaussian mean estimation with known isotropic noise.

    Prior ``N(prior_mean, prior_variance I)``; each observation is
    ``N(theta, observation_variance I)``. The per-point log-likelihood drops the
    constant ``-|x_i - xbar|^2 / (2 sigma^2)`` (``xbar`` the data mean), so
    ``U(theta) = |theta - mu0|^2/(2 s0^2) + n |theta - xbar|^2/(2 sigma^2)``.
    Force terms are unaffected; mini-batch potential noise stays small near
    the posterior mode.
    """

    def __init__(self, prior_mean, prior_variance, observation_variance, data):
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data.reshape(-1, 1)
        if data.shape[0] < 1:
            raise InvalidInputError("dataset must contain at least one observation")
        self.data = data
        self.n_data, self.dim = data.shape
        self.prior_mean = np.broadcast_to(np.asarray(prior_mean, dtype=float), (self.dim,)).copy()
        if prior_variance <= 0 or observation_variance <= 0:
            raise InvalidInputError("variances must be strictly positive")
        self.prior_variance = float(prior_variance)
        self.observation_variance = float(observation_variance)
        self._data_mean = data.mean(axis=0)
        self._offset = ((data - self._data_mean) ** 2).sum(axis=1)
        if self.dim == 1:
            # per-point sufficient statistics for the float-only path
            self._x1 = data[:, 0].copy()
            self._q = data[:, 0] ** 2 - self._offset
            self._full = (float(self._x1.sum()), float(self._q.sum()))

    @classmethod
    def synthetic(cls, n_data=200, dim=1, true_theta=0.5, prior_mean=0.0, prior_variance=1.0,
                  observation_variance=1.0, seed=0):
        rng = np.random.default_rng(seed)
        theta = np.broadcast_to(np.asarray(true_theta, dtype=float), (dim,))
        data = theta + math.sqrt(observation_variance) * rng.standard_normal((n_data, dim))
        return cls(prior_mean, prior_variance, observation_variance, data)

    def log_prior(self, theta):
        d = theta - self.prior_mean
        return -0.5 * float(d @ d) / self.prior_variance

    def potential_and_force_scalar(self, x, idx=None):
        if self.dim != 1:
            return super().potential_and_force_scalar(x, idx)
        if idx is None:
            m, (s1, q), scale = self.n_data, self._full, 1.0
        else:
            m = len(idx)
            s1, q = float(self._x1[idx].sum()), float(self._q[idx].sum())
            scale = self.n_data / m
        d = x - float(self.prior_mean[0])
        s0, s2 = self.prior_variance, self.observation_variance
        potential = 0.5 * d * d / s0 + 0.5 * scale * (m * x * x - 2.0 * x * s1 + q) / s2
        force = -d / s0 + scale * (s1 - m * x) / s2
        return potential, force

    def grad_log_prior(self, theta):
        return -(theta - self.prior_mean) / self.prior_variance

    def log_likelihoods(self, theta, idx):
        x = self.data[idx]
        sq = ((x - theta) ** 2).sum(axis=1)
        return -0.5 * (sq - self._offset[idx]) / self.observation_variance

    def grad_log_likelihoods(self, theta, idx):
        return (self.data[idx] - theta) / self.observation_variance

    def posterior(self):
        """Closed-form posterior ``(mean vector, scalar variance)``."""
        precision = 1.0 / self.prior_variance + self.n_data / self.observation_variance
        mean = (self.prior_mean / self.prior_variance
                + self.data.sum(axis=0) / self.observation_variance) / precision
        return mean, 1.0 / precision

    def density(self, points):
        mean, var = self.posterior()
        points = _as_points(points, self.dim)
        quad = ((points - mean) ** 2).sum(axis=1) / var
        return np.exp(-0.5 * quad - 0.5 * self.dim * (_LOG_2PI + math.log(var)))

    def marginal(self, axis):
        mean, var = self.posterior()
        return GaussianMixtureTarget([1.0], [mean[axis]], [var])


class LogisticRegressionModel(_DataModel):
    """Bayesian logistic regression with an intercept.

    ``theta[0]`` is the intercept and ``theta[1:]`` the weights, so ``dim`` is
    one more than the number of features. Prior ``N(0, prior_variance I)``; the
    potential keeps every constant except the Gaussian prior normaliser.
    """

    def __init__(self, features, labels, prior_variance=1.0):
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        labels = np.asarray(labels, dtype=float).reshape(-1)
        if features.shape[0] != labels.shape[0] or features.shape[0] < 1:
            raise InvalidInputError("features and labels must have the same non-zero length")
        if not np.all((labels == 0) | (labels == 1)):
            raise InvalidInputError("labels must be 0 or 1")
        if prior_variance <= 0:
            raise InvalidInputError("prior_variance must be strictly positive")
        self.features = features
        self.labels = labels
        self.prior_variance = float(prior_variance)
        self.n_data = features.shape[0]
        self.dim = features.shape[1] + 1
        self._design = np.hstack([np.ones((self.n_data, 1)), features])

    @classmethod
    def synthetic(cls, n_data=100, n_features=2, prior_variance=1.0, seed=0):
        rng = np.random.default_rng(seed)
        features = rng.standard_normal((n_data, n_features))
        true_theta = rng.standard_normal(n_features + 1)
        logits = true_theta[0] + features @ true_theta[1:]
        labels = (rng.random(n_data) < expit(logits)).astype(float)
        return cls(features, labels, prior_variance)

    def log_prior(self, theta):
        return -0.5 * float(theta @ theta) / self.prior_variance

    def grad_log_prior(self, theta):
        return -theta / self.prior_variance

    def log_likelihoods(self, theta, idx):
        z = self._design[idx] @ theta
        y = self.labels[idx]
        return y * log_expit(z) + (1.0 - y) * log_expit(-z)

    def grad_log_likelihoods(self, theta, idx):
        design = self._design[idx]
        residual = self.labels[idx] - expit(design @ theta)
        return residual[:, None] * design

    def density(self, points):
        raise UnsupportedTargetError("logistic regression has no closed-form posterior density")


class NoiseInjector:
    """Zero-mean Gaussian perturbations of potential and (isotropic) force."""

    def __init__(self, potential_noise_std=0.0, force_noise_std=0.0, seed=None):
        if potential_noise_std < 0 or force_noise_std < 0:
            raise InvalidInputError("noise standard deviations must be non-negative")
        self.potential_noise_std = float(potential_noise_std)
        self.force_noise_std = float(force_noise_std)
        self.rng = np.random.default_rng(seed)
        self._normals = NormalStream(self.rng)

    @property
    def active(self):
        return self.potential_noise_std > 0 or self.force_noise_std > 0

    def perturb(self, potential, force):
        if self.potential_noise_std > 0:
            potential = potential + self.potential_noise_std * self._normals.one()
        if self.force_noise_std > 0:
            force = force + self.force_noise_std * self._normals.many(force.shape[0])
        return potential, force

    def perturb_scalar(self, potential, force):
        if self.potential_noise_std > 0:
            potential = potential + self.potential_noise_std * self._normals.one()
        if self.force_noise_std > 0:
            force = force + self.force_noise_std * self._normals.one()
        return potential, force


def _target_dim(target):
    return target.dim


def exact_potential(target, theta):
    return float(target.potential(_as_theta(theta, _target_dim(target))))


def exact_force(target, theta):
    return target.force(_as_theta(theta, _target_dim(target)))


def noisy_oracle(target, injector, theta):
    theta = _as_theta(theta, _target_dim(target))
    potential, force = injector.perturb(*target.potential_and_force(theta))
    return OracleOutput(float(potential), force, not injector.active)


def minibatch_oracle(model, theta, batch_indices):
    if not isinstance(model, _DataModel):
        raise UnsupportedTargetError("mini-batch estimates need a model with a dataset")
    idx = np.asarray(batch_indices, dtype=int).reshape(-1)
    if idx.size == 0:
        raise InvalidInputError("batch must be non-empty")
    if idx.min() < 0 or idx.max() >= model.n_data:
        raise InvalidInputError("batch indices out of dataset range")
    theta = _as_theta(theta, model.dim)
    potential, force = model.potential_and_force(theta, idx)
    return OracleOutput(potential, force, idx.size == model.n_data and len(set(idx.tolist())) == model.n_data)


def minibatch_schedule(dataset_size, batch_size, epoch_seed, n_epochs=None):
    """Yield index arrays: each epoch is a seeded permutation cut into batches.

    The last batch of an epoch is short when ``batch_size`` does not divide
    ``dataset_size``. Runs forever unless ``n_epochs`` is given.
    """
    if not 1 <= batch_size <= dataset_size:
        raise InvalidInputError("need 1 <= batch_size <= dataset_size")

    def gen():
        rng = np.random.default_rng(epoch_seed)
        epoch = 0
        while n_epochs is None or epoch < n_epochs:
            perm = rng.permutation(dataset_size)
            for start in range(0, dataset_size, batch_size):
                yield perm[start:start + batch_size]
            epoch += 1

    return gen()


def analytic_density(target, theta):
    if not isinstance(target, (GaussianMixtureTarget, ConjugateGaussianModel)):
        raise UnsupportedTargetError(f"{type(target).__name__} has no analytic density")
    theta = _as_theta(theta, target.dim)
    return float(target.density(theta.reshape(1, -1))[0])


class ExactOracle:
    def __init__(self, target):
        self.target = target
        self.dim = target.dim

    def evaluate(self, theta):
        potential, force = self.target.potential_and_force(theta)
        return OracleOutput(potential, force, True)

    def evaluate_scalar(self, x):
        return self.target.potential_and_force_scalar(x)


class NoisyOracle:
    """Exact target evaluation plus injected Gaussian noise unknown to the sampler."""

    def __init__(self, target, injector):
        self.target = target
        self.injector = injector
        self.dim = target.dim

    def evaluate(self, theta):
        potential, force = self.injector.perturb(*self.target.potential_and_force(theta))
        return OracleOutput(potential, force, not self.injector.active)

    def evaluate_scalar(self, x):
        return self.injector.perturb_scalar(*self.target.potential_and_force_scalar(x))


class MiniBatchOracle:
    """Cycles through a seeded epoch schedule, one batch per evaluation."""

    def __init__(self, model, batch_size, seed=None):
        self.target = model
        self.dim = model.dim
        self.batch_size = int(batch_size)
        self._schedule = minibatch_schedule(model.n_data, self.batch_size, seed)
        self.full_batch = self.batch_size == model.n_data

    def next_batch(self):
        return next(self._schedule)

    def evaluate(self, theta):
        if self.full_batch:
            potential, force = self.target.potential_and_force(theta)
            return OracleOutput(potential, force, True)
        potential, force = self.target.potential_and_force(theta, self.next_batch())
        return OracleOutput(potential, force, False)

    def evaluate_scalar(self, x):
        return self.target.potential_and_force_scalar(x, None if self.full_batch else self.next_batch())


def load_dataset_csv(path, limit=None):
    """Read a ``x0,x1,...[,label]`` CSV; returns ``(features, labels or None)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        has_label = header[-1] == "label"
        n_feat = len(header) - int(has_label)
        if header[:n_feat] != [f"x{i}" for i in range(n_feat)]:
            raise InvalidInputError(f"unexpected CSV header {header!r} in {path}")
        rows = [[float(v) for v in row] for row in islice(reader, limit) if row]
    if not rows:
        raise InvalidInputError(f"{path} contains no observations")
    arr = np.asarray(rows, dtype=float)
    if has_label:
        return arr[:, :n_feat], arr[:, n_feat]
    return arr, None


class NoiseWrappedOracle:
    """Injected noise on top of another oracle (e.g. mini-batch plus extra noise)."""

    def __init__(self, oracle, injector):
        self.base = oracle
        self.target = oracle.target
        self.injector = injector
        self.dim = oracle.dim

    def evaluate(self, theta):
        out = self.base.evaluate(theta)
        potential, force = self.injector.perturb(out.potential_estimate, out.force_estimate)
        return OracleOutput(potential, force, out.exact and not self.injector.active)

    def evaluate_scalar(self, x):
        return self.injector.perturb_scalar(*self.base.evaluate_scalar(x))
