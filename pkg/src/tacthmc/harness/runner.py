"""Experiment orchestration: build oracles from a spec, run chains, persist CSVs.

Every chain derives its seeds from ``(run.seed, chain index)`` alone, so chain
``i`` produces the same output whether 1 or 100 chains are run, and in any
worker-pool size. The manifest is written last; its presence marks a complete
output directory.
"""

import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .. import __version__
from ..baselines import BaselineConfig, BaselineSampler
from ..diagnostics import (Report, autocorrelation, histogram, temperature_trace, tv_distance,
                           xi_flatness)
from ..dynamics import TRACE_FIELDS, SamplerConfig, SampleStore, TACTHMC
from ..errors import DivergenceError, InvalidInputError, StepTooLargeError
from ..models import (ConjugateGaussianModel, ExactOracle, GaussianMixtureTarget,
                      LogisticRegressionModel, MiniBatchOracle, NoiseInjector, NoiseWrappedOracle,
                      NoisyOracle, load_dataset_csv)
from ..rng import chain_seed, stream_seed
from ..tempering import BiasTable, TemperingProfile
from .config import format_value, serialize_config

__all__ = [
    "RunManifest",
    "ChainResult",
    "build_target",
    "build_oracle",
    "build_sampler",
    "chain_seeds",
    "run_chain_job",
    "run_experiment",
    "compute_report",
    "mixture_basins",
    "run_ablation",
    "tune_baseline",
    "run_comparison",
    "diagnose_directory",
    "ABLATION_VARIANTS",
]

ABLATION_VARIANTS = (("full", "tact"), ("no_thermostat", "ablation_no_thermostat"),
                     ("no_tempering", "ablation_no_tempering"))
_ABLATION_OF = {"tact": "full", "ablation_no_thermostat": "no_thermostat",
                "ablation_no_tempering": "no_tempering"}

STREAM_DYNAMICS, STREAM_NOISE, STREAM_BATCH = 0, 1, 2


@dataclass
class RunManifest:
    config_text: str
    output_dir: str
    chain_seeds: list
    files: list
    wall_clock: float
    code_version: str = __version__
    divergences: list = field(default_factory=list)
    report: Report = None

    @property
    def status(self):
        return "diverged" if self.divergences else "ok"

    def to_text(self):
        lines = [
            "[manifest]",
            f"code_version = {self.code_version!r}",
            f"status = {self.status!r}",
            f"chain_seeds = {format_value(self.chain_seeds)}",
            f"files = {format_value(self.files)}",
            f"wall_clock_seconds = {self.wall_clock:.6f}",
            f"divergences = {format_value(self.divergences)}",
        ]
        if self.report is not None:
            lines.append(f"report_passed = {format_value(self.report.passed)}")
        return "\n".join(lines) + "\n\n" + self.config_text

    def write(self, path):
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(self.to_text())
        os.replace(tmp, path)


@dataclass
class ChainResult:
    index: int
    seed: int
    samples: np.ndarray
    steps: np.ndarray
    traces: np.ndarray
    burn_in: int
    bias_values: np.ndarray = None
    bias_visits: np.ndarray = None
    divergence: str = None


# ---------------------------------------------------------------- construction

def build_target(model):
    """Target or Bayesian model described by a ``[model]`` section."""
    kind = model.target
    if kind == "three_mode":
        return GaussianMixtureTarget.three_mode()
    if kind == "two_mode":
        return GaussianMixtureTarget.two_mode(model.separation)
    if kind == "standard_normal":
        return GaussianMixtureTarget.standard_normal(model.dim)
    if kind == "mixture":
        means = np.asarray(model.means, dtype=float)
        if means.ndim == 1:
            means = means.reshape(-1, 1)
        variances = np.asarray(model.variances, dtype=float)
        if variances.ndim == 1:
            variances = np.repeat(variances.reshape(-1, 1), means.shape[1], axis=1)
        return GaussianMixtureTarget(model.weights, means, variances)
    if kind == "conjugate":
        if model.dataset is not None:
            data, _ = load_dataset_csv(model.dataset)
            return ConjugateGaussianModel(np.full(data.shape[1], model.prior_mean),
                                          model.prior_variance, model.observation_variance, data)
        return ConjugateGaussianModel.synthetic(
            n_data=model.n_data, dim=model.dim, true_theta=model.true_theta,
            prior_mean=model.prior_mean, prior_variance=model.prior_variance,
            observation_variance=model.observation_variance, seed=model.data_seed)
    if kind == "logistic":
        if model.dataset is not None:
            x, y = load_dataset_csv(model.dataset)
            if y is None:
                raise InvalidInputError(f"{model.dataset} needs a 'label' column for logistic regression")
            return LogisticRegressionModel(x, y, model.prior_variance)
        return LogisticRegressionModel.synthetic(model.n_data, model.n_features,
                                                 model.prior_variance, model.data_seed)
    raise InvalidInputError(f"unknown target {kind!r}")


def build_oracle(model, target, seed):
    """Exact, mini-batch and/or noise-injected oracle with ``seed``'s sub-streams."""
    noise = NoiseInjector(model.potential_noise_std, model.force_noise_std,
                          seed=stream_seed(seed, STREAM_NOISE))
    if model.batch_size:
        base = MiniBatchOracle(target, model.batch_size, seed=stream_seed(seed, STREAM_BATCH))
        return NoiseWrappedOracle(base, noise) if noise.active else base
    return NoisyOracle(target, noise) if noise.active else ExactOracle(target)


def profile_of(sampler):
    return TemperingProfile(sampler.xi0, sampler.xi1, sampler.n, sampler.W0, sampler.T)


def sampler_config(sampler, seed):
    return SamplerConfig.from_tuple(
        sampler.tuple, ablation=_ABLATION_OF[sampler.method], bias_mode=sampler.bias_mode,
        J=sampler.J, h_A=sampler.h_A, resample_momenta=sampler.resample_momenta,
        theta0=None if sampler.theta0 is None else tuple(sampler.theta0), seed=seed)


def baseline_config(sampler, seed):
    """Baselines read step size, friction / noise level, inertia and thinning from the tuple."""
    t = sampler.tuple
    return BaselineConfig(kind=sampler.method, step_size=float(t[0]), friction_or_noise_level=float(t[2]),
                          seed=seed, thin=int(t[6]), thermal_inertia=float(t[4]),
                          theta0=None if sampler.theta0 is None else tuple(sampler.theta0))


def build_sampler(spec, oracle, seed, bias_table=None):
    s = spec.sampler
    dyn_seed = stream_seed(seed, STREAM_DYNAMICS)
    if s.method in ("sgld", "sghmc", "sgnht"):
        return BaselineSampler(baseline_config(s, dyn_seed), oracle)
    return TACTHMC(sampler_config(s, dyn_seed), oracle, profile_of(s), bias_table=bias_table)


def chain_seeds(spec):
    return [chain_seed(spec.run.seed, i) for i in range(spec.run.n_chains)]


def burn_in_of(spec):
    return spec.run.n_steps // 5 if spec.run.burn_in is None else spec.run.burn_in


# ---------------------------------------------------------------- running

def _warm_table(spec):
    path = spec.run.warm_start
    if path is None or spec.sampler.method not in ("tact", "ablation_no_thermostat"):
        return None
    return BiasTable.from_csv(path, mode=spec.sampler.bias_mode, W0=spec.sampler.W0)


def run_chain_job(spec, index, output_dir=None, target=None):
    """Run chain ``index``; write its CSVs into ``output_dir`` when given."""
    seed = chain_seed(spec.run.seed, index)
    target = build_target(spec.model) if target is None else target
    oracle = build_oracle(spec.model, target, seed)
    sampler = build_sampler(spec, oracle, seed, bias_table=_warm_table(spec))
    burn_in = burn_in_of(spec)
    divergence = None
    try:
        store = sampler.run(spec.run.n_steps, burn_in, spec.run.trace_stride)
    except (DivergenceError, StepTooLargeError) as err:
        store = getattr(err, "store", None) or SampleStore(oracle.dim, burn_in)
        divergence = f"chain {index}: {err} (step {getattr(err, 'step', None)})"
    if output_dir is not None:
        store.write_samples_csv(os.path.join(output_dir, f"chain_{index}_samples.csv"))
        store.write_trace_csv(os.path.join(output_dir, f"chain_{index}_trace.csv"))
    table = getattr(sampler, "bias_table", None)
    return ChainResult(
        index=index, seed=seed, samples=store.sample_array(),
        steps=np.asarray(store.collection_steps, dtype=np.int64),
        traces=store.trace_array(), burn_in=burn_in,
        bias_values=None if table is None else table.values.copy(),
        bias_visits=None if table is None else table.visit_counts.copy(),
        divergence=divergence,
    )


def _job(args):
    spec, index, output_dir = args
    return run_chain_job(spec, index, output_dir)


def _run_chains(spec, output_dir, workers):
    n = spec.run.n_chains
    workers = workers if workers else (os.cpu_count() or 1)
    jobs = [(spec, i, output_dir) for i in range(n)]
    if workers <= 1 or n == 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
            results = list(pool.map(_job, jobs))
    return sorted(results, key=lambda r: r.index)


def _write_bias_table(spec, results, path):
    """Pooled table: visits summed over chains; values averaged (visit-weighted for ABF)."""
    s = spec.sampler
    table = BiasTable(s.W0, s.J, s.bias_mode if s.bias_mode != "none" else "abf_paper")
    tables = [r for r in results if r.bias_values is not None]
    if tables:
        visits = np.sum([r.bias_visits for r in tables], axis=0)
        if s.bias_mode == "metadynamics":
            values = np.mean([r.bias_values for r in tables], axis=0)
        else:
            weighted = np.sum([r.bias_values * r.bias_visits for r in tables], axis=0)
            values = np.divide(weighted, visits, out=np.zeros_like(weighted), where=visits > 0)
        table.values[:] = values
        table.visit_counts[:] = visits
    table.to_csv(path)


def run_experiment(spec, output_dir=None, workers=None):
    """Run all chains of ``spec`` and write the output directory; returns the manifest."""
    output_dir = spec.run.output_dir if output_dir is None else output_dir
    workers = spec.run.workers if workers is None else workers
    os.makedirs(output_dir, exist_ok=True)
    manifest_path = os.path.join(output_dir, "manifest.txt")
    if os.path.exists(manifest_path):
        os.remove(manifest_path)  # stale marker from an earlier run
    start = time.perf_counter()
    results = _run_chains(spec, output_dir, workers)
    files = []
    for r in results:
        files += [f"chain_{r.index}_samples.csv", f"chain_{r.index}_trace.csv"]
    _write_bias_table(spec, results, os.path.join(output_dir, "bias_table.csv"))
    report = compute_report(spec, results)
    report.to_csv(os.path.join(output_dir, "report.csv"))
    files += ["bias_table.csv", "report.csv"]
    manifest = RunManifest(
        config_text=serialize_config(spec), output_dir=output_dir,
        chain_seeds=[r.seed for r in results], files=files,
        wall_clock=time.perf_counter() - start,
        divergences=[r.divergence for r in results if r.divergence],
        report=report,
    )
    manifest.write(manifest_path)
    return manifest


# ---------------------------------------------------------------- diagnostics

def mixture_basins(target):
    """Cut points between the modes of a 1D mixture: density minima between sorted means."""
    means = np.sort(np.unique(target.means[:, 0]))
    cuts = []
    for a, b in zip(means[:-1], means[1:]):
        res = optimize.minimize_scalar(lambda x: float(target.density(np.array([x]))[0]),
                                       bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-10})
        cuts.append(float(res.x))
    return means, np.array(cuts)


def basin_masses(samples, target):
    means, cuts = mixture_basins(target)
    idx = np.searchsorted(cuts, np.asarray(samples, dtype=float).reshape(-1))
    counts = np.bincount(idx, minlength=means.size)
    return means, counts / max(1, idx.size)


def histogram_range(spec, target):
    d = spec.diagnostics
    if d.lo is not None and d.hi is not None:
        return d.lo, d.hi
    if isinstance(target, GaussianMixtureTarget):
        sd = np.sqrt(target.variances[:, 0])
        lo = float(np.min(target.means[:, 0] - 6 * sd))
        hi = float(np.max(target.means[:, 0] + 6 * sd))
    else:
        mean, var = target.posterior()
        sd = math.sqrt(var)
        lo, hi = float(mean[0] - 6 * sd), float(mean[0] + 6 * sd)
    return (d.lo if d.lo is not None else lo), (d.hi if d.hi is not None else hi)


def _start_point(spec, target):
    if spec.sampler.theta0 is not None:
        return float(spec.sampler.theta0[0])
    prior = getattr(target, "prior_mean", None)
    return float(prior[0]) if prior is not None else 0.0


def compute_report(spec, results, target=None):
    """Diagnostics of a finished run, gated by the ``[diagnostics]`` thresholds."""
    d = spec.diagnostics
    target = build_target(spec.model) if target is None else target
    rep = Report()
    samples = [r.samples for r in results if r.samples.size]
    pooled = np.vstack(samples) if samples else np.empty((0, target.dim))
    rep.add("n_samples", pooled.shape[0])
    rep.add("n_divergences", sum(1 for r in results if r.divergence), "<=", 0)
    analytic = isinstance(target, (GaussianMixtureTarget, ConjugateGaussianModel))
    if pooled.shape[0] == 0:
        rep.add("tv_distance", 1.0, *(("<=", d.tv_max) if d.tv_max is not None else ()))
    elif analytic:
        lo, hi = histogram_range(spec, target)
        edges = np.linspace(lo, hi, d.bins + 1)
        hist = histogram(pooled[:, 0], edges)
        tv = tv_distance(hist, target.marginal(0).density)
        rep.add("tv_distance", tv, *(("<=", d.tv_max) if d.tv_max is not None else ()))
    if pooled.shape[0] and isinstance(target, GaussianMixtureTarget) and target.dim == 1:
        means, masses = basin_masses(pooled[:, 0], target)
        for m, w in zip(means, masses):
            rep.add(f"basin_mass_{m:g}", w)
        rep.add("min_basin_mass", masses.min())
        far = int(np.argmax(np.abs(means - _start_point(spec, target))))
        rep.add("far_mode_mass", masses[far])
    if pooled.shape[0] and analytic:
        if isinstance(target, ConjugateGaussianModel):
            mean, var = target.posterior()
            var = np.full(target.dim, var)
        else:
            mean, var = target.mean(), target.variance()
        err = float(np.max(np.abs(pooled.mean(axis=0) - mean)))
        verr = float(np.max(np.abs(pooled.var(axis=0) - var) / var))
        rep.add("mean_abs_error", err, *(("<=", d.mean_atol) if d.mean_atol is not None else ()))
        rep.add("variance_rel_error", verr, *(("<=", d.variance_rtol) if d.variance_rtol is not None else ()))
    ess = 0.0
    for r in results:
        x = r.samples[:, 0] if r.samples.size else np.empty(0)
        if x.size > 2 and np.ptp(x) > 0:
            ess += autocorrelation(x, min(d.max_lag, x.size - 1)).ess
    rep.add("ess", ess)
    if d.ess_min is not None:
        rep.add("ess_ge_min", ess, ">=", d.ess_min)
    if d.ess_max is not None:
        rep.add("ess_le_max", ess, "<=", d.ess_max)
    traces = [r.traces[r.traces[:, 0] > r.burn_in] for r in results if r.traces.size]
    tempering = spec.sampler.method in ("tact", "ablation_no_thermostat")
    traces = [t for t in traces if t.shape[0]]
    if traces:
        tr = np.vstack(traces)
        col = TRACE_FIELDS.index
        rep.add("z_theta_mean", tr[:, col("z_theta")].mean())
        if tempering:
            profile = profile_of(spec.sampler)
            xi = tr[:, col("xi")]
            rep.add("z_xi_mean", tr[:, col("z_xi")].mean())
            rep.add("plateau_efficiency", profile.efficiency)
            _, unity = temperature_trace(xi, profile)
            if d.unity_min is not None:
                rep.add("unity_fraction_ge_min", unity, ">=", d.unity_min)
            if d.unity_max is not None:
                rep.add("unity_fraction_le_max", unity, "<=", d.unity_max)
            rep.add("unity_fraction", unity)
            flat = xi_flatness(xi, profile.W0, spec.sampler.J)
            rep.add("xi_flatness", flat, *(("<=", d.flatness_max) if d.flatness_max is not None else ()))
    return rep


def _read_csv_array(path):
    with open(path) as fh:
        header = fh.readline()
        rows = [line for line in fh if line.strip()]
    width = len(header.strip().split(","))
    if not rows:
        return np.empty((0, width))
    return np.loadtxt(rows, delimiter=",", ndmin=2)


def diagnose_directory(output_dir, spec=None):
    """Recompute the report of an output directory from its CSVs and manifest."""
    from .config import parse_config

    if spec is None:
        spec = parse_config(os.path.join(output_dir, "manifest.txt"))
    burn_in = burn_in_of(spec)
    results = []
    for i in range(spec.run.n_chains):
        samples = _read_csv_array(os.path.join(output_dir, f"chain_{i}_samples.csv"))
        traces = _read_csv_array(os.path.join(output_dir, f"chain_{i}_trace.csv"))
        results.append(ChainResult(i, chain_seed(spec.run.seed, i), samples[:, 1:],
                                   samples[:, 0].astype(np.int64), traces, burn_in))
    return compute_report(spec, results)


# ---------------------------------------------------------------- ablation / comparison

def run_ablation(spec, output_dir=None, workers=None):
    """The three sampler variants on one target; returns ``(manifests, summary report)``."""
    output_dir = spec.run.output_dir if output_dir is None else output_dir
    os.makedirs(output_dir, exist_ok=True)
    manifests = {}
    for name, method in ABLATION_VARIANTS:
        sub = spec.replace(**{"sampler.method": method,
                              "run.output_dir": os.path.join(output_dir, name)})
        manifests[name] = run_experiment(sub, workers=workers)
    summary = _ablation_summary(spec, manifests)
    summary.to_csv(os.path.join(output_dir, "report.csv"))
    return manifests, summary


def _metric(report, name):
    for metric, value, _, _ in report.rows:
        if metric == name:
            return value
    return None


def _ablation_summary(spec, manifests):
    d = spec.diagnostics
    rep = Report()
    for name, m in manifests.items():
        rep.add(f"tv_{name}", _metric(m.report, "tv_distance"))
    tv_full = _metric(manifests["full"].report, "tv_distance")
    tv_nt = _metric(manifests["no_thermostat"].report, "tv_distance")
    ratio = tv_nt / tv_full if tv_full > 0 else math.inf
    rep.add("tv_ratio_no_thermostat", ratio, ">=", d.tv_ratio_min)
    far = _metric(manifests["no_tempering"].report, "far_mode_mass")
    if far is not None:
        rep.add("far_mode_mass_no_tempering", far, "<=", d.far_mode_max)
    basin = _metric(manifests["full"].report, "min_basin_mass")
    if basin is not None:
        rep.add("min_basin_mass_full", basin, ">=", d.basin_min)
    rep.add("n_divergences", sum(len(m.divergences) for m in manifests.values()), "<=", 0)
    return rep


def baseline_grid(kind, tune):
    """Grid points as ``(step_size, friction)`` pairs in lexical order."""
    if kind == "sgld":
        return [(float(e), 0.0) for e in tune.step_sizes]
    return [(float(e), float(c)) for e, c in itertools.product(tune.step_sizes, tune.frictions)]


def tune_baseline(spec, grid, kind=None, scores=None):
    """Pick the grid point whose run has minimal TV to the analytic target.

    ``grid`` holds ``(step_size, friction)`` pairs or :class:`BaselineConfig`
    objects. Ties go to the earliest point. Diverging points are skipped; when
    every point diverges the error lists them all. ``scores``, if given, is
    extended with ``(step_size, friction, tv)`` per finished point.
    """
    grid = list(grid)
    if not grid:
        raise InvalidInputError("tuning grid is empty")
    kind = kind or spec.sampler.method
    n_steps = spec.tune.n_steps or spec.run.n_steps
    target = build_target(spec.model)
    best, best_tv, failures = None, math.inf, []
    scores = [] if scores is None else scores
    for point in grid:
        if isinstance(point, BaselineConfig):
            step_size, friction = point.step_size, point.friction_or_noise_level
        else:
            step_size, friction = point
        t = list(spec.sampler.tuple)
        t[0], t[2] = step_size, friction
        sub = spec.replace(**{"sampler.method": kind, "sampler.tuple": t,
                              "run.n_steps": n_steps, "run.n_chains": 1, "run.burn_in": None})
        try:
            sub.validate()
        except Exception as err:
            failures.append(f"(step_size={step_size!r}, friction={friction!r}): {err}")
            continue
        res = run_chain_job(sub, 0, target=target)
        if res.divergence:
            failures.append(f"(step_size={step_size!r}, friction={friction!r}): {res.divergence}")
            continue
        tv = _metric(compute_report(sub, [res], target), "tv_distance")
        scores.append((step_size, friction, tv))
        if tv < best_tv:
            best, best_tv = (sub, step_size, friction), tv
    if best is None:
        raise DivergenceError("every grid point diverged:\n  " + "\n  ".join(failures))
    sub = best[0]
    return baseline_config(sub.sampler, stream_seed(chain_seed(spec.run.seed, 0), STREAM_DYNAMICS))


def run_comparison(spec, output_dir=None, workers=None):
    """TACT-HMC plus each tuned baseline at the full budget; writes ``tuning.csv``."""
    output_dir = spec.run.output_dir if output_dir is None else output_dir
    os.makedirs(output_dir, exist_ok=True)
    manifests = {"tact": run_experiment(
        spec.replace(**{"sampler.method": "tact", "run.output_dir": os.path.join(output_dir, "tact")}),
        workers=workers)}
    tuning_rows = []
    for kind in spec.tune.baselines:
        scores = []
        cfg = tune_baseline(spec, baseline_grid(kind, spec.tune), kind, scores)
        for step_size, friction, tv in scores:
            tuning_rows.append((kind, step_size, friction, tv, step_size == cfg.step_size
                                and friction == cfg.friction_or_noise_level))
        t = list(spec.sampler.tuple)
        t[0], t[2] = cfg.step_size, cfg.friction_or_noise_level
        sub = spec.replace(**{"sampler.method": kind, "sampler.tuple": t,
                              "run.output_dir": os.path.join(output_dir, kind)})
        manifests[kind] = run_experiment(sub, workers=workers)
    with open(os.path.join(output_dir, "tuning.csv"), "w") as fh:
        fh.write("method,step_size,friction,tv,selected\n")
        for kind, e, c, tv, sel in tuning_rows:
            fh.write(f"{kind},{e:.17g},{c:.17g},{tv:.17g},{str(sel).lower()}\n")
    rep = Report()
    for name, m in manifests.items():
        rep.add(f"tv_{name}", _metric(m.report, "tv_distance"))
    rep.add("n_divergences", sum(len(m.divergences) for m in manifests.values()), "<=", 0)
    rep.to_csv(os.path.join(output_dir, "report.csv"))
    return manifests, rep
