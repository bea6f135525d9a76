"""Gaussian fits, 2-Wasserstein distances and signal metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp.buffer import as_array
from .dsp.spectral import hann
from .errors import DimensionError, DomainError

SNR_CAP_DB = 300.0
COV_SHRINKAGE = 1e-6
LSD_WIN = 2048
LSD_HOP = 512
LSD_FLOOR = 1e-8


@dataclass
class GaussianFit:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.size


def fit_gaussian(samples) -> GaussianFit:
    """Sample mean and unbiased (1/(n-1)) covariance, symmetrised."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 1:
        raise DomainError(f"need at least {d + 1} samples for a {d}-dim fit, got {n}")
    mu = x.mean(axis=0)
    xc = x - mu
    sigma = xc.T @ xc / (n - 1)
    return GaussianFit(mu, 0.5 * (sigma + sigma.T))


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clamped to zero."""
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def w2_gaussian(a: GaussianFit, b: GaussianFit, shrinkage: float = 0.0) -> float:
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    sa, sb = a.sigma, b.sigma
    if shrinkage:
        eye = np.eye(a.dim)
        sa, sb = sa + shrinkage * eye, sb + shrinkage * eye
    root_a = psd_sqrt(sa)
    cross = psd_sqrt(root_a @ sb @ root_a)
    dm = a.mu - b.mu
    w2sq = float(dm @ dm + np.trace(sa) + np.trace(sb) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(w2sq, 0.0)))


def w2_matrix(groups: dict, shrinkage: float | None = None):
    """Pairwise W2 between Gaussian fits of labelled latent groups.

    Off-diagonal entries are W2 distances; the diagonal is sqrt(tr Sigma),
    the distance from each fit to a point mass at its mean. Shrinkage
    (``Sigma + shrinkage * I``) applies to the off-diagonal square roots and
    defaults to 1e-6 when any group has fewer samples than 10x its dimension.

    Returns ``(labels, matrix)``.
    """
    if len(groups) < 2:
        raise DomainError("need at least two groups")
    labels = list(groups)
    fits = {k: fit_gaussian(groups[k]) for k in labels}
    if shrinkage is None:
        few = any(len(np.atleast_2d(groups[k])) < 10 * fits[k].dim for k in labels)
        shrinkage = COV_SHRINKAGE if few else 0.0
    m = np.zeros((len(labels), len(labels)))
    for i, ki in enumerate(labels):
        m[i, i] = np.sqrt(max(np.trace(fits[ki].sigma), 0.0))
        for j in range(i + 1, len(labels)):
            m[i, j] = m[j, i] = w2_gaussian(fits[ki], fits[labels[j]], shrinkage)
    return labels, m


def off_diagonal_mean(m: np.ndarray) -> float:
    mask = ~np.eye(len(m), dtype=bool)
    return float(m[mask].mean())


def snr_db(reference, estimate) -> float:
    ref = as_array(reference)
    est = as_array(estimate)
    if ref.shape != est.shape:
        raise DimensionError("reference and estimate lengths differ")
    p_ref = float(np.sum(ref * ref))
    if p_ref == 0.0:
        raise DomainError("reference signal is silent")
    p_err = float(np.sum((ref - est) ** 2))
    if p_err == 0.0:
        return SNR_CAP_DB
    return float(min(10.0 * np.log10(p_ref / p_err), SNR_CAP_DB))


def _circular_log_spec(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = x.size
    n_fr = max(1, int(np.ceil(n / hop)))
    reps = int(np.ceil((n_fr * hop + win) / max(n, 1))) + 1
    ext = np.tile(x, reps)
    idx = (np.arange(n_fr) * hop)[:, None] + np.arange(win)[None, :]
    mag = np.abs(np.fft.rfft(ext[idx] * hann(win), axis=-1))
    return np.log10(np.maximum(mag, LSD_FLOOR))


def lsd(reference, estimate, win: int = LSD_WIN, hop: int = LSD_HOP) -> float:
    """Frame-mean of the RMS (over bins) log10-magnitude difference.

    Frames wrap around the end of the signal, so a circular shift of both
    inputs by a multiple of ``hop`` only permutes frames.
    """
    ref = as_array(reference)
    est = as_array(estimate)
    if ref.shape != est.shape:
        raise DimensionError("reference and estimate lengths differ")
    if ref.size == 0:
        raise DomainError("empty signals")
    d = _circular_log_spec(ref, win, hop) - _circular_log_spec(est, win, hop)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=-1))))
