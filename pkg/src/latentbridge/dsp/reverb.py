"""Synthetic room impulse responses and convolution reverb."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from ..errors import DomainError
from .buffer import AudioBuffer

DECAY_60DB = 3.0 * np.log(10.0)  # 6.908: amplitude decay exponent for -60 dB


@dataclass
class Rir:
    taps: np.ndarray
    sample_rate: int
    rt60_s: float


def synth_rir(rt60_s: float, fs_hz: int, rng=None) -> Rir:
    """Exponentially decaying Gaussian noise behind a unit direct-path tap.

    The tail is scaled so its expected energy equals the direct path
    (0 dB direct-to-reverberant ratio).
    """
    if not 0.1 <= rt60_s <= 2.0:
        raise DomainError(f"rt60 must lie in [0.1, 2.0] s, got {rt60_s}")
    rng = np.random.default_rng(rng)
    n = int(np.ceil(rt60_s * fs_hz)) + 1
    k = np.arange(n)
    env = np.exp(-DECAY_60DB * k / (rt60_s * fs_hz))
    tail_energy = np.sum(env[1:] ** 2)
    taps = rng.standard_normal(n) * env / np.sqrt(tail_energy)
    taps[0] = 1.0
    return Rir(taps, int(fs_hz), float(rt60_s))


def measure_rt60(taps: np.ndarray, fs_hz: float, lo_db: float = -5.0, hi_db: float = -25.0) -> float:
    """Schroeder backward integration with a T20 line fit, extrapolated to -60 dB."""
    e = np.cumsum((np.asarray(taps, dtype=float) ** 2)[::-1])[::-1]
    edc = 10.0 * np.log10(e / e[0] + 1e-300)
    idx = np.where((edc <= lo_db) & (edc >= hi_db))[0]
    if idx.size < 2:
        raise ValueError("decay curve too short for a T20 fit")
    slope, _ = np.polyfit(idx / fs_hz, edc[idx], 1)
    return float(-60.0 / slope)


def convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Overlap-add convolution truncated to ``len(x)``."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.copy()
    return signal.oaconvolve(x, np.asarray(h, dtype=float), mode="full")[: x.size]


def convolve_rir(x: AudioBuffer, rir: Rir) -> AudioBuffer:
    if x.sample_rate != rir.sample_rate:
        raise DomainError(f"rate mismatch: audio {x.sample_rate} Hz, RIR {rir.sample_rate} Hz")
    return x.with_samples(convolve(x.samples, rir.taps))
