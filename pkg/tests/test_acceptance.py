"""End-to-end acceptance checks, one test and one PASS/FAIL line per criterion.

The long runs are module fixtures shared between criteria. Run alone with
``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import signal, stats

import test_diagnostics
import test_models
import test_tempering
from tacthmc.diagnostics import autocorrelation, effective_sample_size, thermostat_marginal_test
from tacthmc.dynamics import TRACE_FIELDS
from tacthmc.harness.config import parse_config
from tacthmc.harness.runner import build_oracle, build_target, run_chain_job, run_experiment
from tacthmc.models import MiniBatchOracle
from tacthmc.tempering import TemperingProfile, plateau_efficiency

pytestmark = pytest.mark.slow

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def cfg(name, out, *overrides):
    return parse_config(os.path.join(CONFIGS, name), [f"run.output_dir={str(out)!r}", *overrides])


def metric(report, name):
    for m, value, _, _ in report.rows:
        if m == name:
            return value
    raise KeyError(name)


def load_samples(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 1]


@pytest.fixture(scope="module")
def mixture_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mixture")
    spec = cfg("mixture.cfg", out)
    start = time.perf_counter()
    manifest = run_experiment(spec, workers=1)
    elapsed = time.perf_counter() - start
    return spec, manifest, elapsed, load_samples(out / "chain_0_samples.csv")


@pytest.fixture(scope="module")
def ablation_runs(tmp_path_factory, mixture_run):
    spec = mixture_run[0]
    runs = {}
    for name in ("no_thermostat", "no_tempering"):
        out = tmp_path_factory.mktemp(name)
        sub = spec.replace(**{"sampler.method": f"ablation_{name}", "run.output_dir": str(out)})
        runs[name] = run_experiment(sub, workers=1)
    return runs


def exact_bin_masses(target, edges):
    # mixture CDF differences; independent of the quadrature in binned_mass
    w, mu, sd = target.weights, target.means[:, 0], np.sqrt(target.variances[:, 0])
    cdf = (w[None, :] * stats.norm.cdf((edges[:, None] - mu[None, :]) / sd[None, :])).sum(axis=1)
    return np.diff(cdf), 1.0 - (cdf[-1] - cdf[0])


def test_criterion_1_multimodal_recovery(mixture_run, acceptance_log):
    spec, manifest, elapsed, x = mixture_run
    tv = metric(manifest.report, "tv_distance")
    target = build_target(spec.model)
    edges = np.linspace(*_range(target), spec.diagnostics.bins + 1)
    counts, _ = np.histogram(x, edges)
    inside = counts / x.size
    outside = 1.0 - inside.sum()
    q, q_out = exact_bin_masses(target, edges)
    tv_direct = 0.5 * (np.abs(inside - q).sum() + abs(outside - q_out))
    ok = x.size >= 100_000 and tv <= 0.05 and tv_direct <= 0.05 and elapsed < 300
    acceptance_log(1, "mixture TV <= 0.05 from 1e5 samples in < 5 min", ok,
                   f"n={x.size} tv={tv:.4f} tv_direct={tv_direct:.4f} wall={elapsed:.0f}s")
    assert ok


def _range(target):
    sd = np.sqrt(target.variances[:, 0])
    return float(np.min(target.means[:, 0] - 6 * sd)), float(np.max(target.means[:, 0] + 6 * sd))


def test_criterion_2_ablation_separation(mixture_run, ablation_runs, acceptance_log):
    full = mixture_run[1].report
    tv_full = metric(full, "tv_distance")
    tv_nt = metric(ablation_runs["no_thermostat"].report, "tv_distance")
    far = metric(ablation_runs["no_tempering"].report, "far_mode_mass")
    basin = metric(full, "min_basin_mass")
    ok = tv_nt >= 2 * tv_full and far < 0.05 and basin >= 0.2
    acceptance_log(2, "ablations separate from the full sampler", ok,
                   f"tv_full={tv_full:.4f} tv_no_thermostat={tv_nt:.4f} "
                   f"far_mass_no_tempering={far:.4f} min_basin_full={basin:.3f} "
                   f"no_thermostat_samples={metric(ablation_runs['no_thermostat'].report, 'n_samples'):.0f}")
    assert ok


def test_criterion_3_thermostat_marginals(tmp_path, acceptance_log):
    spec = cfg("thermostat.cfg", tmp_path / "main")
    oracle_spec = spec.replace(**{"run.n_steps": 10 * spec.run.n_steps, "run.seed": spec.run.seed + 1})
    main, ref = run_chain_job(spec, 0), run_chain_job(oracle_spec, 0)
    assert main.divergence is None and ref.divergence is None
    ok, parts = True, []
    for name in ("z_theta", "z_xi"):
        col = TRACE_FIELDS.index(name)
        ref_mean = ref.traces[ref.traces[:, 0] > ref.burn_in, col].mean()
        z = main.traces[main.traces[:, 0] > main.burn_in, col]
        rep = thermostat_marginal_test(z, expected_mean=ref_mean, alpha=0.01, mean_rtol=0.1)
        ok &= rep.passed
        parts.append(f"{name}: mean={rep.mean:.4f} ref={ref_mean:.4f} "
                     f"rel_err={rep.mean_rel_error:.3f} ks_p={rep.ks_pvalue:.3f}")
    acceptance_log(3, "thermostat traces Gaussian, means within 10% of 10x run", ok, "; ".join(parts))
    assert ok


def test_criterion_4_conjugate_posterior(tmp_path, acceptance_log):
    spec = cfg("conjugate.cfg", tmp_path / "cj")
    oracle = build_oracle(spec.model, build_target(spec.model), 0)
    assert isinstance(oracle, MiniBatchOracle) and oracle.batch_size == 20
    assert oracle.target.n_data == 200
    manifest = run_experiment(spec, workers=1)
    x = load_samples(tmp_path / "cj" / "chain_0_samples.csv")
    mean, var = build_target(spec.model).posterior()
    err = abs(x.mean() - mean[0])
    verr = abs(x.var() - var) / var
    ok = manifest.status == "ok" and err <= 0.02 and verr <= 0.05
    assert metric(manifest.report, "mean_abs_error") == pytest.approx(err, rel=1e-9)
    acceptance_log(4, "conjugate posterior mean within 0.02, variance within 5%", ok,
                   f"n={x.size} mean_err={err:.5f} var_rel_err={verr:.4f}")
    assert ok


def test_criterion_5_tempering_mechanics(mixture_run, acceptance_log):
    report = mixture_run[1].report
    eff = plateau_efficiency(TemperingProfile(1 / 3, 1.0, 3, 5 / 3, 1.0))
    unity = metric(report, "unity_fraction")
    flat = metric(report, "xi_flatness")
    ok = eff == 0.20 and 0.15 <= unity <= 0.25 and flat <= 0.1
    acceptance_log(5, "efficiency 0.20, unity fraction in [0.15, 0.25], xi flatness <= 0.1", ok,
                   f"efficiency={eff!r} unity={unity:.4f} flatness={flat:.4f}")
    assert ok


def ar1(phi, n, seed):
    # x[0] drawn from the stationary law; x[i] = phi x[i-1] + e[i]
    e = np.random.default_rng(seed).standard_normal(n)
    e[0] /= math.sqrt(1 - phi * phi)
    return signal.lfilter([1.0], [1.0, -phi], e)


def test_criterion_6_ess(mixture_run, acceptance_log):
    spec, manifest, _, x = mixture_run
    ess = metric(manifest.report, "ess")
    acf = autocorrelation(x, min(spec.diagnostics.max_lag, x.size - 1))
    ess_direct = effective_sample_size(acf, x.size)
    errs = []
    for phi, seed in ((0.5, 11), (0.9, 12)):
        n = 10_000_000
        z = ar1(phi, n, seed)
        exact = n * (1 - phi) / (1 + phi)
        errs.append(abs(autocorrelation(z, 2000).ess - exact) / exact)
    ok = 5_000 <= ess <= 50_000 and ess_direct == pytest.approx(ess, rel=1e-9) and max(errs) <= 0.02
    acceptance_log(6, "mixture ESS in [5e3, 5e4]; AR(1) ESS within 2%", ok,
                   f"n={x.size} ess={ess:.0f} ar1_rel_err={max(errs):.4f}")
    assert ok


PROPERTIES = [
    test_models.test_property_mixture_gradient_matches_fd,
    test_models.test_property_2d_mixture_gradient_matches_fd,
    test_models.test_property_conjugate_gradient_matches_fd,
    test_models.test_property_logistic_gradient_matches_fd,
    test_models.test_property_conjugate_minibatch_unbiased,
    test_models.test_property_logistic_minibatch_unbiased,
    test_tempering.test_property_coupling_even_derivative_odd,
    test_tempering.test_property_derivative_matches_fd,
    test_tempering.test_property_reflection_keeps_speed_and_well,
    test_tempering.test_property_reflection_symmetric,
    test_tempering.test_property_per_bin_values_are_running_means,
    test_tempering.test_property_metadynamics_sum_identity,
    test_diagnostics.test_property_tv_symmetric_and_triangle,
]


def test_criterion_7_property_suites(acceptance_log):
    failed = []
    for prop in PROPERTIES:
        if prop._hypothesis_internal_use_settings.max_examples < 100:
            failed.append(f"{prop.__name__} (fewer than 100 examples)")
            continue
        try:
            prop()
        except Exception as err:  # noqa: BLE001 - report every failing suite
            failed.append(f"{prop.__name__}: {type(err).__name__}")
    ok = not failed
    acceptance_log(7, "property suites with >= 100 cases each", ok,
                   f"{len(PROPERTIES) - len(failed)}/{len(PROPERTIES)} passed"
                   + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok


def _csvs(path):
    return {f: (path / f).read_bytes() for f in sorted(os.listdir(path)) if f.endswith(".csv")}


def test_criterion_8_determinism(tmp_path, acceptance_log):
    cases = {
        "mixture": cfg("mixture.cfg", tmp_path / "mix", "run.n_steps=300000", "run.burn_in=50000",
                       "run.n_chains=2"),
        "thermostat": cfg("thermostat.cfg", tmp_path / "thermo"),
        "conjugate": cfg("conjugate.cfg", tmp_path / "cj", "run.n_steps=100000", "run.trace_stride=100"),
        "sghmc": cfg("mixture.cfg", tmp_path / "sghmc", "sampler.method='sghmc'",
                     "sampler.tuple=[0.01, 0.01, 0.1, 0.1, 1, 1, 1]", "run.n_steps=100000",
                     "run.burn_in=10000"),
    }
    mismatched = []
    for name, spec in cases.items():
        run_experiment(spec, workers=1)
        first = tmp_path / os.path.basename(spec.run.output_dir)
        replay = parse_config(first / "manifest.txt", [f"run.output_dir={str(tmp_path / (name + '_rerun'))!r}"])
        run_experiment(replay, workers=1)
        if _csvs(first) != _csvs(tmp_path / f"{name}_rerun"):
            mismatched.append(name)
    ok = not mismatched
    acceptance_log(8, "manifest reruns give bit-identical CSVs", ok,
                   f"{len(cases) - len(mismatched)}/{len(cases)} runs identical"
                   + (f"; differing: {', '.join(mismatched)}" if mismatched else ""))
    assert ok
