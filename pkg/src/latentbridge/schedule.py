"""Tractable-bridge noise schedules.

Both provided kinds have zero drift (f = 0), so alpha = alpha_bar = 1 and the
variance functions reduce to plain integrals of g^2:

    sigma2(t)     = int_0^t g^2(tau) dtau
    sigma_bar2(t) = int_t^1 g^2(tau) dtau

BrownianBridge uses a constant g = g0; GmaxLinear interpolates g^2 linearly
from g0 (at t=0) to g1 (at t=1).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


class ScheduleKind(str, enum.Enum):
    BROWNIAN_BRIDGE = "brownian_bridge"
    GMAX_LINEAR = "gmax_linear"


@dataclass(frozen=True)
class NoiseSchedule:
    kind: ScheduleKind = ScheduleKind.BROWNIAN_BRIDGE
    g0: float = 1.0
    g1: float = 20.0
    t_min: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.g0 < 0 or self.g1 < 0:
            raise DomainError("diffusion levels must be nonnegative")
        if not 0.0 < self.t_min <= 0.1:
            raise DomainError(f"t_min must lie in (0, 0.1], got {self.t_min}")

    @classmethod
    def brownian(cls, g0: float = 1.0, t_min: float = 1e-4) -> "NoiseSchedule":
        return cls(ScheduleKind.BROWNIAN_BRIDGE, g0=g0, g1=g0, t_min=t_min)

    @classmethod
    def gmax_linear(cls, g0: float = 0.01, g1: float = 20.0, t_min: float = 1e-4) -> "NoiseSchedule":
        return cls(ScheduleKind.GMAX_LINEAR, g0=g0, g1=g1, t_min=t_min)

    # -- closed forms (vectorised over t) ---------------------------------

    def g2(self, t):
        """Squared diffusion coefficient g^2(t)."""
        t = np.asarray(t, dtype=float)
        if self.kind is ScheduleKind.BROWNIAN_BRIDGE:
            return np.full_like(t, self.g0 * self.g0)
        return self.g0 + t * (self.g1 - self.g0)

    def sigma2(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is ScheduleKind.BROWNIAN_BRIDGE:
            return self.g0 * self.g0 * t
        return self.g0 * t + 0.5 * (self.g1 - self.g0) * t * t

    def sigma_bar2(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is ScheduleKind.BROWNIAN_BRIDGE:
            return self.g0 * self.g0 * (1.0 - t)
        return self.sigma2_1 - self.sigma2(t)

    @property
    def sigma2_1(self) -> float:
        """Total bridge variance sigma2(1)."""
        if self.kind is ScheduleKind.BROWNIAN_BRIDGE:
            return self.g0 * self.g0
        return self.g0 + 0.5 * (self.g1 - self.g0)

    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    alpha_bar = alpha


@dataclass(frozen=True)
class SchedulePoint:
    t: float
    alpha: float
    alpha_bar: float
    sigma2: float
    sigma_bar2: float


def _check_t(t) -> None:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"time must lie in [0, 1], got {t}")


def eval_schedule(sched: NoiseSchedule, t: float) -> SchedulePoint:
    _check_t(t)
    t = float(t)
    return SchedulePoint(
        t=t,
        alpha=1.0,
        alpha_bar=1.0,
        sigma2=float(sched.sigma2(t)),
        sigma_bar2=float(sched.sigma_bar2(t)),
    )


def verify_schedule(sched: NoiseSchedule, n_grid: int = 100_000) -> float:
    """Max deviation of the closed forms from trapezoid quadrature of g^2.

    The forward integral is accumulated from t=0 and the backward one from
    t=1, so each side is checked independently of the other.
    """
    if n_grid < 100:
        raise DomainError("n_grid must be at least 100")
    t = np.linspace(0.0, 1.0, n_grid)
    g2 = sched.g2(t)
    dt = np.diff(t)
    steps = 0.5 * (g2[1:] + g2[:-1]) * dt
    fwd = np.concatenate([[0.0], np.cumsum(steps)])
    bwd = np.concatenate([np.cumsum(steps[::-1])[::-1], [0.0]])
    err_fwd = np.max(np.abs(fwd - sched.sigma2(t)))
    err_bwd = np.max(np.abs(bwd - sched.sigma_bar2(t)))
    return float(max(err_fwd, err_bwd))
