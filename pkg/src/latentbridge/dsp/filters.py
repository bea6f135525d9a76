"""IIR lowpass design, biquad filtering and the peaking (bell) EQ."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import signal

from ..errors import DomainError
from .buffer import AudioBuffer

CHEBYSHEV_RIPPLE_DB = 1.0


class FilterFamily(str, enum.Enum):
    BESSEL = "bessel"
    CHEBYSHEV1 = "chebyshev1"
    BUTTERWORTH = "butterworth"


FAMILIES = tuple(FilterFamily)


@dataclass
class IirFilter:
    family: FilterFamily | None
    order: int
    cutoff_hz: float
    fs_hz: float
    sos: np.ndarray

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(sec[3:]) for sec in self.sos]) if len(self.sos) else np.array([])

    def is_stable(self) -> bool:
        p = self.poles()
        return bool(np.all(np.abs(p) < 1.0))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        _, h = signal.sosfreqz(self.sos, worN=np.asarray(freqs_hz, dtype=float), fs=self.fs_hz)
        return h


def identity_filter(fs_hz: float = 48000.0) -> IirFilter:
    return IirFilter(None, 0, fs_hz / 2, fs_hz, np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]]))


def _bessel_matched_z(order: int, cutoff_hz: float, fs_hz: float) -> np.ndarray:
    # analog prototype normalised to -3 dB at 1 rad/s, poles mapped by z = exp(sT);
    # the zeros at s = inf go to z = -1 and the gain is set for unity at DC
    _, p, _ = signal.besselap(order, norm="mag")
    p = p * (2.0 * np.pi * cutoff_hz)
    pz = np.exp(p / fs_hz)
    zz = -np.ones(order)
    k = np.real(np.prod(1.0 - pz) / np.prod(1.0 - zz))
    return signal.zpk2sos(zz, pz, k)


def design_lowpass(family, order: int, cutoff_hz: float, fs_hz: float) -> IirFilter:
    family = FilterFamily(family)
    if not 0.0 < cutoff_hz < fs_hz / 2.0:
        raise DomainError(f"cutoff {cutoff_hz} Hz must lie in (0, {fs_hz / 2}) Hz")
    if not 2 <= order <= 12:
        raise DomainError(f"order must lie in [2, 12], got {order}")
    if family is FilterFamily.BUTTERWORTH:
        sos = signal.butter(order, cutoff_hz, btype="low", fs=fs_hz, output="sos")
    elif family is FilterFamily.CHEBYSHEV1:
        sos = signal.cheby1(order, CHEBYSHEV_RIPPLE_DB, cutoff_hz, btype="low", fs=fs_hz, output="sos")
        # centre the [-ripple, 0] dB passband on 0 dB
        sos[0, :3] *= 10.0 ** (CHEBYSHEV_RIPPLE_DB / 40.0)
    else:
        sos = _bessel_matched_z(order, cutoff_hz, fs_hz)
    filt = IirFilter(family, order, float(cutoff_hz), float(fs_hz), np.asarray(sos, dtype=float))
    if not filt.is_stable():
        raise ArithmeticError(f"unstable {family.value} design (order {order}, fc {cutoff_hz})")
    return filt


def sosfilt(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cascaded transposed direct-form-II biquads."""
    return signal.sosfilt(sos, np.asarray(x, dtype=float))


def apply_iir(x: AudioBuffer, filt: IirFilter) -> AudioBuffer:
    return x.with_samples(sosfilt(filt.sos, x.samples))


def peaking_sos(f0_hz: float, gain_db: float, q: float, fs_hz: float) -> np.ndarray:
    """RBJ-cookbook peaking EQ as one normalised biquad section."""
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * f0_hz / fs_hz
    alpha = np.sin(w0) / (2.0 * q)
    cw = np.cos(w0)
    b = np.array([1.0 + alpha * a, -2.0 * cw, 1.0 - alpha * a])
    den = np.array([1.0 + alpha / a, -2.0 * cw, 1.0 - alpha / a])
    return np.concatenate([b / den[0], den / den[0]])[None, :]


def bell_eq(x: AudioBuffer, f0_hz: float, gain_db: float, q: float) -> AudioBuffer:
    if not 0.0 < f0_hz < x.sample_rate / 2.0:
        raise DomainError(f"bell centre {f0_hz} Hz must lie below Nyquist ({x.sample_rate / 2} Hz)")
    if q <= 0:
        raise DomainError("q must be positive")
    if gain_db == 0.0:
        return x.copy()
    return x.with_samples(sosfilt(peaking_sos(f0_hz, gain_db, q, x.sample_rate), x.samples))
