"""First-order exponential-integrator samplers for the reverse bridge.

Both steppers move a state from time ``s`` to an earlier time ``t <= s``
given an estimate ``z0_hat`` of the clean latent. ``t == s`` is accepted and
is an exact identity; ``t > s`` is an error.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OrderError, SingularityError
from .schedule import NoiseSchedule

ODE_SINGULAR_VAR = 1e-12


class SamplerMode(str, enum.Enum):
    SDE = "sde"
    ODE = "ode"


@dataclass(frozen=True)
class SamplerConfig:
    mode: SamplerMode = SamplerMode.SDE
    n_steps: int = 4
    t_min: float = 0.0
    grid: str = "uniform_t"

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplerMode(self.mode))
        if self.n_steps < 1:
            raise DomainError("n_steps must be >= 1")
        if not 0.0 <= self.t_min < 1.0:
            raise DomainError("t_min must lie in [0, 1)")
        if self.grid != "uniform_t":
            raise DomainError(f"unknown time grid {self.grid!r}")

    def times(self) -> np.ndarray:
        """Decreasing grid 1 = t_0 > ... > t_N = t_min."""
        return np.linspace(1.0, self.t_min, self.n_steps + 1)


def _check_times(s: float, t: float) -> None:
    if not (0.0 <= t <= 1.0 and 0.0 <= s <= 1.0):
        raise DomainError("times must lie in [0, 1]")
    if t > s:
        raise OrderError(f"reverse step needs t <= s, got s={s}, t={t}")


def sde_step(z_s, s: float, t: float, z0_hat, sched: NoiseSchedule, rng) -> np.ndarray:
    _check_times(s, t)
    var_s = float(sched.sigma2(s))
    if var_s <= 0.0:
        raise SingularityError(f"sigma^2(s) = 0 at s={s}")
    var_t = float(sched.sigma2(t))
    a_s, a_t = float(sched.alpha(s)), float(sched.alpha(t))
    ratio = var_t / var_s
    c_state = a_t * var_t / (a_s * var_s)
    c_pred = a_t * (1.0 - ratio)
    c_noise = a_t * np.sqrt(var_t) * np.sqrt(max(1.0 - ratio, 0.0))
    z_s = np.asarray(z_s, dtype=float)
    eps = np.random.default_rng(rng).standard_normal(z_s.shape)
    return c_state * z_s + c_pred * np.asarray(z0_hat, dtype=float) + c_noise * eps


def ode_step(z_s, s: float, t: float, z0_hat, z1, sched: NoiseSchedule) -> np.ndarray:
    _check_times(s, t)
    z_s = np.asarray(z_s, dtype=float)
    z0_hat = np.asarray(z0_hat, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    s1 = sched.sigma2_1
    sig_t = float(np.sqrt(sched.sigma2(t)))
    sb_t = float(np.sqrt(sched.sigma_bar2(t)))
    a_t = float(sched.alpha(t))
    a_1 = float(sched.alpha(1.0))
    var_t = float(sched.sigma2(t))
    varb_t = float(sched.sigma_bar2(t))
    if t == s:
        return z_s.copy()
    if s == 1.0:
        # sigma_bar_s -> 0 limit with z_s = z1: the noise-free bridge mean
        w0 = a_t * varb_t / s1
        w1 = float(sched.alpha_bar(t)) * var_t / s1
        return w0 * z0_hat + w1 * z1
    var_s = float(sched.sigma2(s))
    varb_s = float(sched.sigma_bar2(s))
    if var_s <= 0.0:
        raise SingularityError(f"sigma^2(s) = 0 at s={s}")
    if varb_s < ODE_SINGULAR_VAR:
        raise SingularityError(
            f"sigma_bar^2(s) = {varb_s:.3g} is numerically zero at s={s}; "
            "start from s=1 (limit form) or from s <= 1 - t_min"
        )
    sig_s, sb_s = np.sqrt(var_s), np.sqrt(varb_s)
    a_s = float(sched.alpha(s))
    c_state = (a_t / a_s) * (sig_t / sig_s) * (sb_t / sb_s)
    c_pred = a_t * (varb_t - sb_s * sig_t * sb_t / sig_s) / s1
    c_cond = a_t * (var_t - sig_s * sig_t * sb_t / sb_s) / (s1 * a_1)
    return c_state * z_s + c_pred * z0_hat + c_cond * z1


def sample_trajectory(predictor, z1, cfg: SamplerConfig, sched: NoiseSchedule, rng=None):
    """Integrate from s=1 (state z1) down to ``cfg.t_min``.

    ``predictor(z_s, s, z1)`` returns the z0 estimate. Works for a single
    latent or a batch. Returns ``(final_state, trajectory)`` where the
    trajectory holds all ``n_steps + 1`` states including the start.
    """
    rng = np.random.default_rng(rng)
    z1 = np.asarray(z1, dtype=float)
    z = z1.copy()
    traj = [z]
    times = cfg.times()
    for s, t in zip(times[:-1], times[1:]):
        s, t = float(s), float(t)
        z0_hat = predictor(z, s, z1)
        if cfg.mode is SamplerMode.SDE:
            z = sde_step(z, s, t, z0_hat, sched, rng)
        else:
            z = ode_step(z, s, t, z0_hat, z1, sched)
        traj.append(z)
    return z, traj
