"""Gaussian bridge marginals and the z0-prediction training loss.

Latents are plain float arrays: a single latent has shape ``(d,)`` and a
batch ``(B, d)``. Times may be scalars or ``(B,)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScheduleError, DimensionError, DomainError
from .schedule import NoiseSchedule, ScheduleKind
from .toynet.net import ToyNet

N_TIME_FREQS = 16


def _col(t, like: np.ndarray):
    """Broadcast ``t`` against the leading (batch) axes of ``like``."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (like.ndim - t.ndim))


def _check_pair(z0, z1):
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    if z0.shape != z1.shape:
        raise DimensionError(f"z0 shape {z0.shape} != z1 shape {z1.shape}")
    return z0, z1


def mean_weights(t, sched: NoiseSchedule):
    """Weights ``(w0, w1)`` of z0 and z1 in the bridge mean at time t."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise DomainError("time must lie in [0, 1]")
    s1 = sched.sigma2_1
    if s1 == 0.0:
        # g0 -> 0 limit of the Brownian bridge: the ratios do not depend on g0
        if sched.kind is ScheduleKind.BROWNIAN_BRIDGE:
            return 1.0 - t, t
        raise DegenerateScheduleError("schedule has zero total variance")
    return sched.alpha(t) * sched.sigma_bar2(t) / s1, sched.alpha_bar(t) * sched.sigma2(t) / s1


def bridge_variance(t, sched: NoiseSchedule):
    t = np.asarray(t, dtype=float)
    s1 = sched.sigma2_1
    if s1 == 0.0:
        if sched.kind is ScheduleKind.BROWNIAN_BRIDGE:
            return np.zeros_like(t)
        raise DegenerateScheduleError("schedule has zero total variance")
    a = sched.alpha(t)
    return a * a * sched.sigma_bar2(t) * sched.sigma2(t) / s1


def interpolate_mean_var(z0, z1, t, sched: NoiseSchedule):
    """Mean and isotropic variance of the bridge marginal p_t."""
    z0, z1 = _check_pair(z0, z1)
    w0, w1 = mean_weights(t, sched)
    mean = _col(w0, z0) * z0 + _col(w1, z0) * z1
    return mean, bridge_variance(t, sched)


def interpolate(z0, z1, t, sched: NoiseSchedule, rng) -> np.ndarray:
    """Draw z_t ~ p_t. Exactly z0 at t=0 and z1 at t=1."""
    mean, var = interpolate_mean_var(z0, z1, t, sched)
    rng = np.random.default_rng(rng)
    eps = rng.standard_normal(mean.shape)
    return mean + _col(np.sqrt(var), mean) * eps


def sample_training_time(rng, t_min: float, size=None):
    if not 0.0 < t_min < 1.0:
        raise DomainError("t_min must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    return rng.uniform(t_min, 1.0, size=size)


# -- predictor --------------------------------------------------------------

def time_embedding(t, n_freqs: int = N_TIME_FREQS) -> np.ndarray:
    """Sinusoidal features ``[sin(w_k t), cos(w_k t)]``, shape ``(B, 2*n_freqs)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = np.pi * np.geomspace(0.25, 32.0, n_freqs)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class BridgePredictor:
    """z0-predictor: a ToyNet fed ``concat(z_t, emb(t), z1)``.

    With ``skip`` (the default) the net output is a correction added to z_t,
    so an untrained predictor already returns z1 at t = 1 and is exact as
    t -> 0. ``skip=False`` returns the raw net output.
    """

    def __init__(self, net: ToyNet, latent_dim: int, n_freqs: int = N_TIME_FREQS, skip: bool = True):
        if net.dims[0] != 2 * latent_dim + 2 * n_freqs or net.dims[-1] != latent_dim:
            raise DimensionError("predictor net does not match latent_dim/n_freqs")
        self.net = net
        self.latent_dim = latent_dim
        self.n_freqs = n_freqs
        self.skip = skip

    @classmethod
    def init(cls, latent_dim: int, hidden=(128, 128), rng=None, n_freqs: int = N_TIME_FREQS):
        dims = [2 * latent_dim + 2 * n_freqs, *hidden, latent_dim]
        return cls(ToyNet.init(dims, "tanh", rng), latent_dim, n_freqs)

    def copy(self) -> "BridgePredictor":
        return BridgePredictor(self.net.copy(), self.latent_dim, self.n_freqs, self.skip)

    def features(self, zt, t, z1) -> np.ndarray:
        zt = np.atleast_2d(np.asarray(zt, dtype=float))
        z1 = np.atleast_2d(np.asarray(z1, dtype=float))
        if zt.shape != z1.shape or zt.shape[1] != self.latent_dim:
            raise DimensionError("z_t / z1 do not match the predictor latent dim")
        t = np.broadcast_to(np.asarray(t, dtype=float), (zt.shape[0],))
        return np.concatenate([zt, time_embedding(t, self.n_freqs), z1], axis=1)

    def __call__(self, zt, t, z1) -> np.ndarray:
        single = np.asarray(zt).ndim == 1
        out, _ = self.forward_cached(zt, t, z1)
        return out[0] if single else out

    def forward_cached(self, zt, t, z1):
        """``(z0_hat, net_cache)``; d z0_hat / d net_output is the identity."""
        feat = self.features(zt, t, z1)
        out, cache = self.net.forward_cached(feat)
        if self.skip:
            out = out + feat[:, :self.latent_dim]
        return out, cache


@dataclass
class BridgeBatch:
    z0: np.ndarray
    z1: np.ndarray
    t: np.ndarray
    zt: np.ndarray

    def __post_init__(self):
        n = len(self.z0)
        if not (len(self.z1) == len(self.t) == len(self.zt) == n):
            raise DimensionError("bridge batch fields have unequal lengths")
        if n == 0:
            raise DimensionError("empty bridge batch")

    @classmethod
    def draw(cls, z0, z1, sched: NoiseSchedule, rng) -> "BridgeBatch":
        """Sample t ~ U(t_min, 1) per item and z_t from the bridge marginal."""
        z0, z1 = _check_pair(np.atleast_2d(z0), np.atleast_2d(z1))
        rng = np.random.default_rng(rng)
        t = sample_training_time(rng, sched.t_min, size=len(z0))
        zt = interpolate(z0, z1, t, sched, rng)
        return cls(z0, z1, t, zt)


def bridge_loss(predictor, batch: BridgeBatch, return_output: bool = False):
    """Mean over the batch of ||z0_hat(z_t, t, z1) - z0||^2.

    Returns ``(loss, grads)`` with grads aligned to ``predictor.net.params``;
    with ``return_output`` also the predictions and the grad w.r.t. them.
    """
    z0 = np.atleast_2d(batch.z0)
    out, cache = predictor.forward_cached(batch.zt, batch.t, batch.z1)
    if out.shape != z0.shape:
        raise DimensionError("predictor output does not match z0")
    diff = out - z0
    n = len(z0)
    loss = float(np.sum(diff * diff) / n)
    g_out = 2.0 * diff / n
    _, grads = predictor.net.backward(cache, g_out)
    if return_output:
        return loss, grads, out, cache
    return loss, grads
