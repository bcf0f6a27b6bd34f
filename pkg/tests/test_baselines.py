import numpy as np
import pytest

from tacthmc.baselines import (
    BaselineConfig,
    BaselineSampler,
    run_baseline,
    sghmc_step,
    sgld_step,
    sgnht_sampler_config,
    sgnht_step,
)
from tacthmc.dynamics import SystemState, TACTHMC
from tacthmc.errors import DivergenceError, InvalidInputError
from tacthmc.models import ExactOracle, GaussianMixtureTarget, NoiseInjector, NoisyOracle
from tacthmc.rng import NormalStream

NORMAL = GaussianMixtureTarget.standard_normal()


class ZeroForce:
    dim = 1

    def evaluate(self, theta):
        from tacthmc.models import OracleOutput
        return OracleOutput(0.0, np.zeros(1), True)


def _state(theta=0.7, r=0.0):
    return SystemState(np.array([theta]), 0.0, np.array([r]), 0.0, 0.0, 0.0, 0)


def _samples(config, oracle, n):
    return run_baseline(config, oracle, n).sample_array()[:, 0]


@pytest.mark.parametrize("kwargs", [dict(kind="sgd"), dict(step_size=0.0),
                                    dict(friction_or_noise_level=-0.1),
                                    dict(kind="sghmc", friction_or_noise_level=1.5), dict(thin=0)])
def test_invalid_baseline_configs(kwargs):
    with pytest.raises(InvalidInputError):
        BaselineConfig(**kwargs)


def test_sgld_without_force_tends_to_identity():
    normals = NormalStream(np.random.default_rng(0))
    moves = []
    for eps in (1e-2, 1e-4, 1e-8):
        s = sgld_step(_state(), ZeroForce(), BaselineConfig(kind="sgld", step_size=eps), normals)
        moves.append(abs(s.theta[0] - 0.7))
    assert moves[2] < 1e-3
    assert moves[2] < moves[0]


def test_sgld_step_formula():
    rng = np.random.default_rng(3)
    expected_noise = np.random.default_rng(3).standard_normal(4096)[0]
    s = sgld_step(_state(theta=2.0), ExactOracle(NORMAL), BaselineConfig(kind="sgld", step_size=0.01),
                  NormalStream(rng))
    assert s.theta[0] == pytest.approx(2.0 + 0.005 * -2.0 + 0.1 * expected_noise, rel=1e-15)


def test_sghmc_zero_friction_is_naive_hmc():
    s = sghmc_step(_state(theta=1.0, r=0.05), ExactOracle(NORMAL),
                   BaselineConfig(kind="sghmc", step_size=0.01, friction_or_noise_level=0.0),
                   NormalStream(np.random.default_rng(0)))
    assert s.r_theta[0] == pytest.approx(0.05 - 0.01, rel=1e-15)
    assert s.theta[0] == pytest.approx(1.0 + s.r_theta[0], rel=1e-15)


@pytest.mark.parametrize("kind", ["sgld", "sghmc", "sgnht"])
def test_seeded_runs_reproducible(kind):
    cfg = BaselineConfig(kind=kind, step_size=0.01, friction_or_noise_level=0.1, seed=5)
    a = _samples(cfg, ExactOracle(NORMAL), 5000)
    b = _samples(cfg, ExactOracle(NORMAL), 5000)
    c = _samples(BaselineConfig(kind=kind, step_size=0.01, friction_or_noise_level=0.1, seed=6),
                 ExactOracle(NORMAL), 5000)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


@pytest.mark.parametrize("kind", ["sgld", "sghmc"])
def test_scalar_and_array_paths_agree(kind):
    cfg = BaselineConfig(kind=kind, step_size=0.01, friction_or_noise_level=0.1, seed=2)
    fast = BaselineSampler(cfg, ExactOracle(NORMAL))
    slow = BaselineSampler(cfg, ExactOracle(NORMAL))
    slow._scalar = False
    a = fast.run(3000).sample_array()
    b = slow.run(3000).sample_array()
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_sgnht_is_bit_identical_to_no_tempering_ablation():
    cfg = BaselineConfig(kind="sgnht", step_size=0.01, friction_or_noise_level=0.05, seed=9)
    oracle = NoisyOracle(GaussianMixtureTarget.three_mode(), NoiseInjector(0.0, 1.0, seed=3))
    a = run_baseline(cfg, oracle, 20_000, trace_stride=10)
    oracle = NoisyOracle(GaussianMixtureTarget.three_mode(), NoiseInjector(0.0, 1.0, seed=3))
    b = TACTHMC(sgnht_sampler_config(cfg), oracle).run(20_000, trace_stride=10)
    assert sgnht_sampler_config(cfg).ablation == "no_tempering"
    assert a.sample_array().tobytes() == b.sample_array().tobytes()
    assert a.trace_array().tobytes() == b.trace_array().tobytes()


def test_sgnht_step_matches_sampler_step():
    cfg = BaselineConfig(kind="sgnht", step_size=0.01, friction_or_noise_level=0.05, seed=1)
    s1 = _state(theta=0.5, r=0.02)
    s1 = sgnht_step(s1, ExactOracle(NORMAL), cfg)
    ref = TACTHMC(sgnht_sampler_config(cfg), ExactOracle(NORMAL), fast_scalar=False)
    s2 = ref.step(_state(theta=0.5, r=0.02))
    assert s1.theta[0] == s2.theta[0] and s1.z_theta == s2.z_theta


def test_sghmc_divergence_raises():
    steep = GaussianMixtureTarget([1.0], [0.0], [1e-4])
    cfg = BaselineConfig(kind="sghmc", step_size=1.0, friction_or_noise_level=0.0)
    with pytest.raises(DivergenceError):
        run_baseline(cfg, ExactOracle(steep), 10_000)


@pytest.mark.slow
def test_sgld_recovers_normal_variance():
    x = _samples(BaselineConfig(kind="sgld", step_size=0.01, seed=1), ExactOracle(NORMAL), 1_000_000)
    assert abs(x.var() - 1.0) <= 0.05
    assert abs(x.mean()) < 0.05


@pytest.mark.slow
def test_sghmc_recovers_normal_variance():
    cfg = BaselineConfig(kind="sghmc", step_size=0.01, friction_or_noise_level=0.1, seed=1)
    x = _samples(cfg, ExactOracle(NORMAL), 1_000_000)
    assert abs(x.var() - 1.0) <= 0.05
    assert abs(x.mean()) < 0.05


@pytest.mark.slow
def test_sgnht_recovers_normal_variance_under_injected_noise():
    cfg = BaselineConfig(kind="sgnht", step_size=0.001, friction_or_noise_level=0.01, seed=1)
    x = _samples(cfg, NoisyOracle(NORMAL, NoiseInjector(0.0, 1.0, seed=2)), 2_000_000)
    assert abs(x.var() - 1.0) <= 0.03


@pytest.mark.slow
def test_sgnht_thermostat_mean_tracks_injected_noise():
    # stationary z is c plus the injected force-noise heat eta sigma^2 / 2; at unit
    # inertia z swings by about 0.15 and the mean drifts below that
    eps, c, sigma = 0.02, 0.05, 1.0
    cfg = BaselineConfig(kind="sgnht", step_size=eps, friction_or_noise_level=c, seed=3,
                         thermal_inertia=4.0)
    store = run_baseline(cfg, NoisyOracle(NORMAL, NoiseInjector(0.0, sigma, seed=4)), 1_000_000,
                         trace_stride=10)
    z = store.post_burn_in_trace("z_theta")
    assert z.mean() == pytest.approx(c + eps * sigma**2 / 2, rel=0.1)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["sgld", "sghmc", "sgnht"])
def test_baselines_stay_in_starting_basin(kind):
    target = GaussianMixtureTarget.two_mode(separation=12.0)
    cfg = BaselineConfig(kind=kind, step_size=0.03, friction_or_noise_level=0.05, seed=1,
                         theta0=(6.0,))
    x = _samples(cfg, ExactOracle(target), 2_000_000)
    assert np.mean(x < 0) < 0.05
