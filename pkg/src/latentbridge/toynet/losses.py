"""Differentiable training losses with hand-derived gradients.

Each function takes a batch of estimates ``y`` (``(B, n)`` waveforms or
``(B, d)`` latents) and returns ``(value, dvalue/dy)``. Batch reductions are
means, so values are comparable across batch sizes.
"""
from __future__ import annotations

import numpy as np

from ..dsp.spectral import magnitude, stft, stft_adjoint
from .net import ToyNet, record_branch

TOY_RESOLUTIONS = (64, 128, 256)
NMSE_EPS = 1e-8
# magnitude floor for training losses; far above the metric's so that
# log-magnitude terms stay smooth in near-silent bins
LOSS_MAG_EPS = 1e-2


def _mag_grad_to_signal(g_mag: np.ndarray, spec: np.ndarray, mag: np.ndarray, n: int, win: int) -> np.ndarray:
    return stft_adjoint(g_mag * spec / mag, n, win)


def mrstft_loss(y: np.ndarray, x: np.ndarray, resolutions=TOY_RESOLUTIONS):
    """Batch mean of the multi-resolution STFT distance (see ``dsp.spectral``)."""
    y = np.atleast_2d(y)
    x = np.atleast_2d(x)
    b, n = y.shape
    total = 0.0
    grad = np.zeros_like(y)
    for win in resolutions:
        sy = stft(y, win)
        my, mx = magnitude(sy, LOSS_MAG_EPS), magnitude(stft(x, win), LOSS_MAG_EPS)
        diff = my - mx
        num = np.sqrt(np.sum(diff ** 2, axis=(-2, -1)))
        den = np.sqrt(0.5 * (np.sum(my ** 2, axis=(-2, -1)) + np.sum(mx ** 2, axis=(-2, -1))))
        sc = num / den
        ldiff = np.log(my) - np.log(mx)
        record_branch(ldiff > 0.0)
        count = my.shape[-2] * my.shape[-1]
        lm = np.mean(np.abs(ldiff), axis=(-2, -1))
        total += float(np.mean(sc + lm))
        safe_num = np.maximum(num, 1e-300)[:, None, None]
        g_sc = diff / (safe_num * den[:, None, None]) - (num / (2.0 * den ** 3))[:, None, None] * my
        g_lm = np.sign(ldiff) / (my * count)
        grad += _mag_grad_to_signal((g_sc + g_lm) / b, sy, my, n, win)
    return total, grad


def nmse_loss(y: np.ndarray, x: np.ndarray):
    """Batch mean of ||y - x||^2 / ||x||^2 (waveform anchor for phase)."""
    y = np.atleast_2d(y)
    x = np.atleast_2d(x)
    b = y.shape[0]
    den = np.sum(x * x, axis=1) + NMSE_EPS
    diff = y - x
    val = np.sum(diff * diff, axis=1) / den
    return float(np.mean(val)), 2.0 * diff / (den[:, None] * b)


def reconstruction_loss(y, x, resolutions=TOY_RESOLUTIONS, wave_weight: float = 1.0):
    v1, g1 = mrstft_loss(y, x, resolutions)
    if wave_weight == 0.0:
        return v1, g1
    v2, g2 = nmse_loss(y, x)
    return v1 + wave_weight * v2, g1 + wave_weight * g2


def mse_loss(a: np.ndarray, b: np.ndarray):
    """Mean over all elements of (a - b)^2."""
    diff = np.asarray(a, dtype=float) - b
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def cosine_loss(a: np.ndarray, b: np.ndarray, eps: float = 1e-8):
    """Batch mean of 1 - cos(a_i, b_i)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    na = np.sqrt(np.sum(a * a, axis=1)) + eps
    nb = np.sqrt(np.sum(b * b, axis=1)) + eps
    dot = np.sum(a * b, axis=1)
    cos = dot / (na * nb)
    # d cos / d a = b / (na nb) - cos * a / (na (na - eps))
    g = b / (na * nb)[:, None] - (cos / (na * (na - eps) + 1e-300))[:, None] * a
    return float(np.mean(1.0 - cos)), -g / a.shape[0]


def kl_loss(mu: np.ndarray, logvar: np.ndarray):
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I))."""
    b = mu.shape[0]
    ev = np.exp(logvar)
    val = 0.5 * np.sum(mu * mu + ev - logvar - 1.0, axis=1)
    return float(np.mean(val)), mu / b, 0.5 * (ev - 1.0) / b


# -- discriminator -------------------------------------------------------------

DISC_FEATURE_SCALE = 0.2


class SpectralDiscriminator:
    """Small MLP on the log-magnitude spectrum of a whole frame (LSGAN)."""

    def __init__(self, net: ToyNet, frame: int):
        self.net = net
        self.frame = frame

    @classmethod
    def init(cls, frame: int, hidden=(64, 32), rng=None):
        dims = [frame // 2 + 1, *hidden, 1]
        return cls(ToyNet.init(dims, "tanh", rng), frame)

    def copy(self):
        return SpectralDiscriminator(self.net.copy(), self.frame)

    def _features(self, y):
        spec = stft(y, self.frame, self.frame)[:, 0, :]
        mag = magnitude(spec, LOSS_MAG_EPS)
        return DISC_FEATURE_SCALE * np.log(mag), spec, mag

    def _feature_grad_to_signal(self, g_feat, spec, mag):
        g_mag = DISC_FEATURE_SCALE * g_feat / mag
        return stft_adjoint((g_mag * spec / mag)[:, None, :], self.frame, self.frame, self.frame)

    def score(self, y) -> np.ndarray:
        feat, _, _ = self._features(np.atleast_2d(y))
        return self.net.forward(feat)[:, 0]

    def generator_terms(self, fake, real, w_adv: float = 1.0, w_fm: float = 1.0):
        """Adversarial and feature-matching losses for the generator.

        Returns ``(adv, fm, grad_fake)`` with the gradient of
        ``w_adv * adv + w_fm * fm``.
        """
        fake = np.atleast_2d(fake)
        b = fake.shape[0]
        feat, spec, mag = self._features(fake)
        out, cache = self.net.forward_cached(feat)
        _, real_cache = self.net.forward_cached(self._features(np.atleast_2d(real))[0])
        adv = float(np.mean((out - 1.0) ** 2))
        g_out = w_adv * 2.0 * (out - 1.0) / b
        n_h = len(cache["hidden"])
        fm = 0.0
        h_grads = []
        for hf, hr in zip(cache["hidden"], real_cache["hidden"]):
            d = hf - hr
            record_branch(d > 0.0)
            fm += float(np.mean(np.abs(d))) / n_h
            h_grads.append(w_fm * np.sign(d) / (d.size * n_h))
        g_feat, _ = self.net.backward(cache, g_out, h_grads)
        return adv, fm, self._feature_grad_to_signal(g_feat, spec, mag)

    def loss_and_grads(self, fake, real):
        """LSGAN discriminator loss mean(D(real)-1)^2 + mean D(fake)^2."""
        fr, _, _ = self._features(np.atleast_2d(fake))
        rr, _, _ = self._features(np.atleast_2d(real))
        of, cf = self.net.forward_cached(fr)
        orr, cr = self.net.forward_cached(rr)
        loss = float(np.mean((orr - 1.0) ** 2) + np.mean(of ** 2))
        _, gf = self.net.backward(cf, 2.0 * of / len(of))
        _, gr = self.net.backward(cr, 2.0 * (orr - 1.0) / len(orr))
        return loss, [a + b for a, b in zip(gf, gr)]


# -- perceptual proxies ----------------------------------------------------------

PESQ_PROXY_WIN = 64
UTMOS_PROXY_WIN = 128
UTMOS_PROXY_BANDS = 8
PROXY_TAU = 1.0


def pesq_proxy_loss(y, x):
    """tanh of the mean squared log-magnitude distance, per item."""
    y = np.atleast_2d(y)
    x = np.atleast_2d(x)
    b, n = y.shape
    sy = stft(y, PESQ_PROXY_WIN)
    my, mx = magnitude(sy, LOSS_MAG_EPS), magnitude(stft(x, PESQ_PROXY_WIN), LOSS_MAG_EPS)
    ld = np.log(my) - np.log(mx)
    count = ld.shape[-2] * ld.shape[-1]
    d = np.sum(ld * ld, axis=(-2, -1)) / count
    val = np.tanh(d / PROXY_TAU)
    g_d = (1.0 - val ** 2) / PROXY_TAU / b
    g_mag = g_d[:, None, None] * 2.0 * ld / (count * my)
    return float(np.mean(val)), _mag_grad_to_signal(g_mag, sy, my, n, PESQ_PROXY_WIN)


def _band_edges(n_bins: int, n_bands: int) -> np.ndarray:
    return np.linspace(0, n_bins, n_bands + 1).round().astype(int)


def utmos_proxy_loss(y, x):
    """1 - exp(-d) of the band-pooled log-power distance, per item."""
    y = np.atleast_2d(y)
    x = np.atleast_2d(x)
    b, n = y.shape
    sy = stft(y, UTMOS_PROXY_WIN)
    sx = stft(x, UTMOS_PROXY_WIN)
    edges = _band_edges(sy.shape[-1], UTMOS_PROXY_BANDS)
    # the per-bin magnitude floor summed over the band; a tiny floor lets
    # near-silent bands dominate and saturates the score at 1
    floor = LOSS_MAG_EPS * np.diff(edges).astype(float)
    py = np.stack([np.sum(np.abs(sy[..., lo:hi]) ** 2, axis=-1) for lo, hi in zip(edges[:-1], edges[1:])], -1)
    px = np.stack([np.sum(np.abs(sx[..., lo:hi]) ** 2, axis=-1) for lo, hi in zip(edges[:-1], edges[1:])], -1)
    ld = np.log(py + floor) - np.log(px + floor)
    count = ld.shape[-2] * ld.shape[-1]
    d = np.sum(ld * ld, axis=(-2, -1)) / count
    val = 1.0 - np.exp(-d / PROXY_TAU)
    g_d = np.exp(-d / PROXY_TAU) / PROXY_TAU / b
    g_p = g_d[:, None, None] * 2.0 * ld / (count * (py + floor))
    g_spec = np.zeros_like(sy)
    for j, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        g_spec[..., lo:hi] = 2.0 * sy[..., lo:hi] * g_p[..., j:j + 1]
    return float(np.mean(val)), stft_adjoint(g_spec, n, UTMOS_PROXY_WIN)


def perceptual_loss(y, x, w_pesq: float = 1.0, w_utmos: float = 10.0):
    vp, gp = pesq_proxy_loss(y, x)
    vu, gu = utmos_proxy_loss(y, x)
    return w_pesq * vp + w_utmos * vu, w_pesq * gp + w_utmos * gu, (vp, vu)


def perceptual_score(y, x) -> float:
    """Proxy quality in [0, 1]; higher is better (mean of the two proxy scores)."""
    vp, _ = pesq_proxy_loss(y, x)
    vu, _ = utmos_proxy_loss(y, x)
    return 1.0 - 0.5 * (vp + vu)
