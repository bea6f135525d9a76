"""Short-time Fourier transform, its adjoint, and the multi-resolution STFT distance."""
from __future__ import annotations

import numpy as np
from scipy import signal

from ..errors import DimensionError
from .buffer import AudioBuffer

DEFAULT_RESOLUTIONS = (512, 1024, 2048)
MAG_EPS = 1e-12  # added to |X|^2 before the square root


def hann(win: int) -> np.ndarray:
    return signal.get_window("hann", win)


def n_frames(n: int, win: int, hop: int) -> int:
    return 1 + (max(n, win) - win) // hop


def stft(x: np.ndarray, win: int, hop: int | None = None) -> np.ndarray:
    """Hann-windowed STFT over the last axis, no centring.

    Signals shorter than the window are zero-padded to one full frame.
    Returns ``(..., n_frames, win // 2 + 1)`` complex.
    """
    hop = hop or win // 4
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n < win:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, win - n)]
        x = np.pad(x, pad)
    frames = np.lib.stride_tricks.sliding_window_view(x, win, axis=-1)[..., ::hop, :]
    return np.fft.rfft(frames * hann(win), axis=-1)


def stft_adjoint(g: np.ndarray, n: int, win: int, hop: int | None = None) -> np.ndarray:
    """Gradient of a real loss w.r.t. the signal, given its gradient w.r.t. the STFT.

    ``g = dL/dRe(X) + 1j * dL/dIm(X)`` with the layout returned by ``stft``.
    """
    hop = hop or win // 4
    g = np.asarray(g)
    scaled = g.copy()
    scaled[..., 1:win // 2] *= 0.5
    if win % 2:
        scaled[..., win // 2] *= 0.5
    frames = np.fft.irfft(scaled, n=win, axis=-1) * win * hann(win)
    n_pad = max(n, win)
    out = np.zeros(g.shape[:-2] + (n_pad,))
    for f in range(g.shape[-2]):
        out[..., f * hop:f * hop + win] += frames[..., f, :]
    return out[..., :n]


def magnitude(spec: np.ndarray, eps: float = MAG_EPS) -> np.ndarray:
    return np.sqrt(spec.real ** 2 + spec.imag ** 2 + eps)


def stft_terms(a: np.ndarray, b: np.ndarray, win: int):
    """Spectral-convergence and log-magnitude L1 terms for one resolution.

    Spectral convergence is normalised by the RMS of both Frobenius norms so
    the distance is symmetric in its arguments. Works over leading batch axes.
    """
    ma = magnitude(stft(a, win))
    mb = magnitude(stft(b, win))
    axes = (-2, -1)
    num = np.sqrt(np.sum((ma - mb) ** 2, axis=axes))
    den = np.sqrt(0.5 * (np.sum(ma ** 2, axis=axes) + np.sum(mb ** 2, axis=axes)))
    sc = num / den
    lm = np.mean(np.abs(np.log(ma) - np.log(mb)), axis=axes)
    return sc, lm


def mrstft_array(a: np.ndarray, b: np.ndarray, resolutions=DEFAULT_RESOLUTIONS) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    total = 0.0
    for win in resolutions:
        sc, lm = stft_terms(a, b, int(win))
        total = total + sc + lm
    return total


def mrstft_distance(a: AudioBuffer, b: AudioBuffer, resolutions=DEFAULT_RESOLUTIONS) -> float:
    if a.sample_rate != b.sample_rate:
        raise DimensionError("sample rates differ")
    if len(a) != len(b):
        raise DimensionError(f"length mismatch: {len(a)} vs {len(b)}")
    return float(mrstft_array(a.samples, b.samples, resolutions))
