from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy import signal

from ..errors import DomainError
from .buffer import AudioBuffer
from .filters import FilterFamily, design_lowpass, sosfilt

MAX_RATIO_TERM = 1024
ANTI_ALIAS_ORDER = 8
ANTI_ALIAS_FRACTION = 0.9


def rational_ratio(src_hz: int, dst_hz: int) -> tuple[int, int]:
    frac = Fraction(int(dst_hz), int(src_hz))
    up, down = frac.numerator, frac.denominator
    if up > MAX_RATIO_TERM or down > MAX_RATIO_TERM:
        raise DomainError(f"resampling ratio {up}/{down} exceeds {MAX_RATIO_TERM} after reduction")
    return up, down


def resample_array(x: np.ndarray, src_hz: int, dst_hz: int, family=FilterFamily.BUTTERWORTH) -> np.ndarray:
    """IIR anti-alias lowpass plus polyphase rate change.

    The lowpass sits at 0.9 x the lower Nyquist and runs at the higher of
    the two rates: before decimation when going down, after interpolation
    when going up.
    """
    x = np.asarray(x, dtype=float)
    if src_hz == dst_hz:
        return x.copy()
    up, down = rational_ratio(src_hz, dst_hz)
    cutoff = ANTI_ALIAS_FRACTION * min(src_hz, dst_hz) / 2.0
    if dst_hz < src_hz:
        lp = design_lowpass(family, ANTI_ALIAS_ORDER, cutoff, src_hz)
        return signal.resample_poly(sosfilt(lp.sos, x), up, down)
    lp = design_lowpass(family, ANTI_ALIAS_ORDER, cutoff, dst_hz)
    return sosfilt(lp.sos, signal.resample_poly(x, up, down))


def resample(x: AudioBuffer, target_hz: int, family=FilterFamily.BUTTERWORTH) -> AudioBuffer:
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise DomainError("target rate must be positive")
    return AudioBuffer(resample_array(x.samples, x.sample_rate, target_hz, family), target_hz)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Crop or zero-pad to exactly n samples."""
    if x.size >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - x.size)])
