"""Synthetic desk-scale speech corpus paired with degraded versions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from ..degrade import AppliedOps, DegradationSpec, degrade
from ..dsp.buffer import AudioBuffer

TOY_RATE = 8000
FRAME = 256
SPLIT_CODES = {"train": 0, "heldout": 1}


F0_HZ = 200.0
N_PARTIALS = 4


def synth_speech(rng, duration_s: float = 1.0, fs: int = TOY_RATE) -> np.ndarray:
    """Harmonic "voice" on a fixed 200 Hz fundamental plus a quiet band-passed noise floor.

    Each of the four partials gets its own random phase, level and
    syllable-rate (2-4 Hz) envelope, so 256-sample frames sit close to an
    8-dimensional subspace. Peak-normalised to 0.5.
    """
    rng = np.random.default_rng(rng)
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    x = np.zeros(n)
    for k in range(1, N_PARTIALS + 1):
        env = 0.55 + 0.45 * np.sin(2.0 * np.pi * rng.uniform(2.0, 4.0) * t + rng.uniform(0, 2 * np.pi))
        level = rng.uniform(0.3, 1.0) / k ** 0.5
        x += level * env * np.sin(2.0 * np.pi * k * F0_HZ * t + rng.uniform(0, 2 * np.pi))
    sos = signal.butter(4, [300.0, 2500.0], btype="band", fs=fs, output="sos")
    floor = signal.sosfilt(sos, rng.standard_normal(n))
    x += 0.03 * np.std(x) / (np.std(floor) + 1e-12) * floor
    return 0.5 * x / np.max(np.abs(x))


def toy_degradation_spec() -> DegradationSpec:
    """Degradation settings for the 8 kHz toy corpus.

    Noise always fires, so every pair has a finite SNR. Reverb and band
    limiting are off: on a steady harmonic they rotate each partial's phase
    by an unknown per-signal amount, which a 256-sample frame cannot undo,
    so waveform SNR would measure the corpus rather than the model.
    Clip, EQ and the noise SNR range keep their full-band defaults.
    """
    return DegradationSpec(p_noise=1.0, p_rev=0.0, p_bw=0.0)


def signal_seed(base_seed: int, split: str, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), SPLIT_CODES[split], int(index)])


def frames_of(x: np.ndarray, frame: int = FRAME) -> np.ndarray:
    n = (x.size // frame) * frame
    return x[:n].reshape(-1, frame)


@dataclass
class ToyCorpus:
    clean: list
    degraded: list
    ops: list = field(default_factory=list)
    sample_rate: int = TOY_RATE
    frame: int = FRAME

    def __post_init__(self):
        if len(self.clean) != len(self.degraded):
            raise ValueError("clean/degraded counts differ")
        for c, d in zip(self.clean, self.degraded):
            if c.size != d.size:
                raise ValueError("paired signals must have equal length")

    def __len__(self) -> int:
        return len(self.clean)

    def clean_frames(self) -> np.ndarray:
        return np.concatenate([frames_of(x, self.frame) for x in self.clean])

    def paired_frames(self):
        """``(x0_frames, x1_frames)`` aligned row for row."""
        x0 = np.concatenate([frames_of(x, self.frame) for x in self.clean])
        x1 = np.concatenate([frames_of(x, self.frame) for x in self.degraded])
        return x0, x1


def make_toy_corpus(n_signals: int, seed: int = 0, split: str = "train",
                    spec: DegradationSpec | None = None, duration_s: float = 1.0) -> ToyCorpus:
    """Generate ``n_signals`` clean/degraded pairs.

    Each signal draws from its own ``SeedSequence([seed, split, index])``, so
    the train and held-out splits never share a stream.
    """
    spec = spec or toy_degradation_spec()
    clean, degraded, ops = [], [], []
    for i in range(n_signals):
        ss = signal_seed(seed, split, i)
        speech_ss, deg_ss = ss.spawn(2)
        x0 = synth_speech(np.random.default_rng(speech_ss), duration_s)
        lq, applied = degrade(AudioBuffer(x0, TOY_RATE), spec, np.random.default_rng(deg_ss))
        clean.append(x0)
        degraded.append(lq.samples)
        ops.append(applied)
    return ToyCorpus(clean, degraded, ops)


def single_operator_groups(clean: list, seed: int = 0, fs: int = TOY_RATE) -> dict:
    """Degrade the same clean signals with one operator type at a time.

    Used to compare latent distributions per degradation type.
    """
    specs = {
        "noise": DegradationSpec.disabled(p_noise=1.0),
        "reverb": DegradationSpec.disabled(p_rev=1.0),
        "bandwidth": DegradationSpec.disabled(p_bw=1.0, bw_targets_hz=(2000,)),
        "clip": DegradationSpec.disabled(p_clip=1.0, clip_range=(0.06, 0.3)),
    }
    groups = {}
    for k, (name, spec) in enumerate(specs.items()):
        outs = []
        for i, x in enumerate(clean):
            rng = np.random.default_rng([seed, 7, k, i])
            outs.append(degrade(AudioBuffer(x, fs), spec, rng)[0].samples)
        groups[name] = outs
    return groups


__all__ = ["AppliedOps", "FRAME", "TOY_RATE", "ToyCorpus", "frames_of", "make_toy_corpus",
           "single_operator_groups", "synth_speech", "toy_degradation_spec"]
