import numpy as np
import pytest

from latentbridge.bridge import interpolate, interpolate_mean_var
from latentbridge.errors import DomainError, OrderError, SingularityError
from latentbridge.sampler import SamplerConfig, SamplerMode, ode_step, sample_trajectory, sde_step
from latentbridge.schedule import NoiseSchedule

BB = NoiseSchedule.brownian(1.0)
SCHEDULES = [BB, NoiseSchedule.gmax_linear()]


def oracle(z0):
    return lambda z, s, z1: np.broadcast_to(z0, np.shape(z)).copy()


@pytest.mark.parametrize("sched", SCHEDULES)
def test_sde_identity_when_t_equals_s(sched, rng):
    z = rng.standard_normal(5)
    assert np.array_equal(sde_step(z, 0.6, 0.6, rng.standard_normal(5), sched, rng), z)


@pytest.mark.parametrize("sched", SCHEDULES)
def test_ode_identity_when_t_equals_s(sched, rng):
    z = rng.standard_normal(5)
    out = ode_step(z, 0.6, 0.6, rng.standard_normal(5), rng.standard_normal(5), sched)
    assert np.array_equal(out, z)


@pytest.mark.parametrize("sched", SCHEDULES)
@pytest.mark.parametrize("s", [1.0, 0.7, 0.2])
def test_terminal_step_returns_prediction(sched, s, rng):
    z_s, z0h, z1 = rng.standard_normal((3, 6))
    assert np.array_equal(sde_step(z_s, s, 0.0, z0h, sched, rng), z0h)
    assert np.array_equal(ode_step(z_s, s, 0.0, z0h, z1, sched), z0h)


def test_order_errors(rng):
    z = rng.standard_normal(2)
    with pytest.raises(OrderError):
        sde_step(z, 0.3, 0.5, z, BB, rng)
    with pytest.raises(OrderError):
        ode_step(z, 0.3, 0.5, z, z, BB)


def test_sde_singular_at_s0(rng):
    z = rng.standard_normal(2)
    with pytest.raises(SingularityError):
        sde_step(z, 0.0, 0.0, z, BB, rng)


def test_ode_singular_near_one():
    z = np.zeros(2)
    with pytest.raises(SingularityError):
        ode_step(z, 1.0 - 1e-14, 0.5, z, z, BB)


def test_ode_limit_example():
    out = ode_step(np.array([1.0]), 1.0, 0.5, np.array([0.0]), np.array([1.0]), BB)
    assert out[0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("sched", SCHEDULES)
def test_ode_limit_consistency(sched, rng):
    s = 1.0 - 1e-6
    for _ in range(20):
        z0h, z1 = rng.standard_normal((2, 4))
        t = rng.uniform(0.05, 0.95)
        mean_s, _ = interpolate_mean_var(z0h, z1, s, sched)
        lim = ode_step(z1, 1.0, t, z0h, z1, sched)
        near = ode_step(mean_s, s, t, z0h, z1, sched)
        assert np.max(np.abs(lim - near)) / np.max(np.abs(lim)) < 1e-4


def test_ode_is_deterministic(rng):
    z, z0h, z1 = rng.standard_normal((3, 4))
    state = np.random.get_state()
    a = ode_step(z, 0.8, 0.3, z0h, z1, BB)
    b = ode_step(z, 0.8, 0.3, z0h, z1, BB)
    assert np.array_equal(a, b)
    assert np.array_equal(np.random.get_state()[1], state[1])


def test_sde_marginal_from_one_to_half():
    n = 100_000
    rng = np.random.default_rng(0)
    z = np.ones((n, 1))
    out = sde_step(z, 1.0, 0.5, np.zeros((n, 1)), BB, rng)
    assert abs(out.mean() - 0.5) < 0.01
    assert abs(out.var() - 0.25) < 0.01


def test_sde_marginal_preservation_random_pairs():
    rng = np.random.default_rng(1)
    n = 100_000
    for sched in SCHEDULES:
        for _ in range(10):
            s, t = np.sort(rng.uniform(0.05, 1.0, 2))[::-1]
            z0, z1 = np.zeros((n, 1)), np.ones((n, 1))
            z_s = interpolate(z0, z1, s, sched, rng)
            z_t = sde_step(z_s, s, t, z0, sched, rng)
            mean, var = interpolate_mean_var(z0[:1], z1[:1], t, sched)
            se_mean = np.sqrt(var / n)
            se_var = var * np.sqrt(2.0 / (n - 1))
            assert abs(z_t.mean() - mean[0, 0]) < 4 * se_mean
            assert abs(z_t.var(ddof=1) - var) < 4 * se_var


@pytest.mark.parametrize("mode", [SamplerMode.SDE, SamplerMode.ODE])
def test_one_step_perfect_oracle_exact(mode, rng):
    z0, z1 = rng.standard_normal((2, 8, 4))
    out, traj = sample_trajectory(oracle(z0), z1, SamplerConfig(mode, 1), NoiseSchedule.gmax_linear(), rng)
    assert np.max(np.abs(out - z0)) <= 1e-12
    assert len(traj) == 2 and np.array_equal(traj[0], z1)


def test_four_step_sde_oracle_collapses():
    n = 100_000
    rng = np.random.default_rng(2)
    out, traj = sample_trajectory(oracle(np.zeros((n, 1))), np.ones((n, 1)), SamplerConfig("sde", 4), BB, rng)
    assert len(traj) == 5
    assert abs(out.mean()) < 0.01 and out.var() < 0.01


def test_config_validation():
    with pytest.raises(DomainError):
        SamplerConfig(n_steps=0)
    with pytest.raises(ValueError):
        SamplerConfig(mode="euler")
    assert np.array_equal(SamplerConfig(n_steps=4).times(), [1.0, 0.75, 0.5, 0.25, 0.0])
    assert SamplerConfig().n_steps == 4
