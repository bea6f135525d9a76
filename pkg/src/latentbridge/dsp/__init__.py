from .buffer import AudioBuffer, rms
from .filters import (
    FAMILIES,
    FilterFamily,
    IirFilter,
    apply_iir,
    bell_eq,
    design_lowpass,
    identity_filter,
)
from .resample import resample, resample_array
from .reverb import Rir, convolve_rir, measure_rt60, synth_rir
from .spectral import DEFAULT_RESOLUTIONS, mrstft_distance, stft, stft_adjoint

__all__ = [
    "AudioBuffer",
    "DEFAULT_RESOLUTIONS",
    "FAMILIES",
    "FilterFamily",
    "IirFilter",
    "Rir",
    "apply_iir",
    "bell_eq",
    "convolve_rir",
    "design_lowpass",
    "identity_filter",
    "measure_rt60",
    "mrstft_distance",
    "resample",
    "resample_array",
    "rms",
    "stft",
    "stft_adjoint",
    "synth_rir",
]
