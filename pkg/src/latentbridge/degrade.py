"""Stochastic speech degradation: bw o clip o rev o noise o rev o eq.

The composition is read right to left, so EQ is applied first and bandwidth
limitation last. Every random choice is drawn up front by ``sample_ops`` and
recorded in an ``AppliedOps``; ``apply_ops`` then replays those parameters
deterministically, which is also how ``degrade`` itself produces its output.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dsp.buffer import AudioBuffer, rms
from .dsp.filters import FAMILIES, FilterFamily, peaking_sos, sosfilt
from .dsp.resample import fit_length, resample_array
from .dsp.reverb import convolve, synth_rir
from .errors import DomainError

OP_ORDER = ("eq", "rev", "noise", "rev", "clip", "bw")
EQ_WINDOW_S = 1.0
EQ_XFADE_S = 0.032
EQ_MAX_F0_FRACTION = 0.45  # of the sample rate, keeps bells below Nyquist at low rates


@dataclass
class DegradationSpec:
    p_bw: float = 0.5
    bw_targets_hz: tuple = (2000, 4000, 8000, 12000, 16000, 24000, 32000)
    p_clip: float = 0.25
    clip_range: tuple = (0.06, 0.9)
    p_rev: float = 0.5
    p_noise: float = 0.9
    snr_range_db: tuple = (-5.0, 20.0)
    p_eq: float = 0.5
    eq_count_range: tuple = (1, 3)
    eq_f0_range: tuple = (10.0, 12000.0)
    eq_gain_range: tuple = (-5.0, 5.0)
    eq_q_range: tuple = (0.5, 2.0)
    rir_rt60_range: tuple = (0.1, 1.2)
    noise_source: str = "white"  # "white" or a directory of WAV files

    def __post_init__(self):
        for name in ("p_bw", "p_clip", "p_rev", "p_noise", "p_eq"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {p}")
        for name in ("clip_range", "snr_range_db", "eq_count_range", "eq_f0_range",
                     "eq_gain_range", "eq_q_range", "rir_rt60_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise DomainError(f"{name} must be a finite nonempty interval, got {(lo, hi)}")
        if not self.bw_targets_hz:
            raise DomainError("bw_targets_hz is empty")
        if not 0.0 < self.clip_range[0] <= self.clip_range[1] <= 1.0:
            raise DomainError("clip ratios must lie in (0, 1]")

    @classmethod
    def disabled(cls, **overrides) -> "DegradationSpec":
        """All operators off unless re-enabled through ``overrides``."""
        base = dict(p_bw=0.0, p_clip=0.0, p_rev=0.0, p_noise=0.0, p_eq=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown degradation keys {sorted(unknown)}; valid: {sorted(known)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class AppliedOps:
    """Ordered record of the operators that fired and their exact parameters."""

    ops: list = field(default_factory=list)

    def names(self) -> list:
        return [op["op"] for op in self.ops]

    def count(self, name: str) -> int:
        return sum(op["op"] == name for op in self.ops)

    def __len__(self) -> int:
        return len(self.ops)

    def to_json(self) -> str:
        return json.dumps({"ops": self.ops}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AppliedOps":
        return cls(json.loads(text)["ops"])


# -- individual operators ---------------------------------------------------

def op_clip(x: AudioBuffer, ratio: float) -> AudioBuffer:
    if not 0.0 < ratio <= 1.0:
        raise DomainError(f"clip ratio must lie in (0, 1], got {ratio}")
    peak = float(np.max(np.abs(x.samples))) if len(x) else 0.0
    if peak == 0.0:
        return x.copy()
    thr = ratio * peak
    return x.with_samples(np.clip(x.samples, -thr, thr))


def noise_gain(clean_rms: float, noise_rms: float, snr_db: float) -> float:
    return clean_rms / (noise_rms * 10.0 ** (snr_db / 20.0))


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float, rng=None, offset: int | None = None) -> AudioBuffer:
    """clean + g * noise with g chosen so the mixture has the requested SNR.

    Noise shorter than the clean signal is looped; longer noise is cropped
    at ``offset`` (drawn from ``rng`` when not given).
    """
    if clean.sample_rate != noise.sample_rate:
        raise DomainError("clean and noise sample rates differ")
    n = len(clean)
    nz = noise.samples
    if nz.size == 0:
        raise DomainError("noise is empty")
    if nz.size < n:
        nz = np.tile(nz, int(np.ceil(n / nz.size)))
    if nz.size > n:
        if offset is None:
            offset = int(np.random.default_rng(rng).integers(0, nz.size - n + 1))
        nz = nz[offset:offset + n]
    c_rms, n_rms = rms(clean), rms(nz)
    if c_rms == 0.0:
        raise DomainError("clean signal is silent; SNR undefined")
    if n_rms == 0.0:
        raise DomainError("noise is silent")
    return clean.with_samples(clean.samples + noise_gain(c_rms, n_rms, snr_db) * nz)


def _eq_weights(n: int, fs: int) -> list:
    """Crossfade masks for consecutive EQ windows; they sum to one."""
    w = int(round(EQ_WINDOW_S * fs))
    n_win = max(1, int(np.ceil(n / w)))
    if n_win == 1:
        return [np.ones(n)]
    xf = max(1, int(round(EQ_XFADE_S * fs)))
    idx = np.arange(n)
    masks = []
    for k in range(n_win):
        m = np.ones(n)
        if k > 0:
            b = k * w
            m *= np.clip((idx - (b - xf / 2)) / xf, 0.0, 1.0)
        if k < n_win - 1:
            b = (k + 1) * w
            m *= np.clip(((b + xf / 2) - idx) / xf, 0.0, 1.0)
        masks.append(m)
    return masks


def apply_eq_windows(x: np.ndarray, fs: int, windows: list) -> np.ndarray:
    masks = _eq_weights(x.size, fs)
    out = np.zeros_like(x)
    for mask, bells in zip(masks, windows):
        y = x
        for f0, gain, q in bells:
            y = sosfilt(peaking_sos(f0, gain, q, fs), y)
        out += mask * y
    return out


def _load_noise(path: str, fs: int) -> np.ndarray:
    from .audio_io import read_wav

    buf = read_wav(path)
    return resample_array(buf.samples, buf.sample_rate, fs) if buf.sample_rate != fs else buf.samples


def _noise_files(directory: str) -> list:
    files = sorted(str(p) for p in Path(directory).glob("*.wav"))
    if not files:
        raise DomainError(f"no .wav noise files in {directory}")
    return files


# -- sampling and replay ------------------------------------------------------

def sample_ops(n_samples: int, fs: int, spec: DegradationSpec, rng) -> AppliedOps:
    rng = np.random.default_rng(rng)
    ops = []
    rev_pos = 0
    for name in OP_ORDER:
        if name == "eq":
            if rng.random() < spec.p_eq:
                n_win = len(_eq_weights(n_samples, fs))
                f_lo, f_hi = spec.eq_f0_range
                f_hi = min(f_hi, EQ_MAX_F0_FRACTION * fs)
                f_lo = min(f_lo, f_hi)
                windows = []
                for _ in range(n_win):
                    count = int(rng.integers(spec.eq_count_range[0], spec.eq_count_range[1] + 1))
                    windows.append([
                        [float(rng.uniform(f_lo, f_hi)), float(rng.uniform(*spec.eq_gain_range)),
                         float(rng.uniform(*spec.eq_q_range))]
                        for _ in range(count)
                    ])
                ops.append({"op": "eq", "windows": windows})
        elif name == "rev":
            rev_pos += 1
            if rng.random() < spec.p_rev:
                ops.append({"op": "rev", "position": rev_pos,
                            "rt60": float(rng.uniform(*spec.rir_rt60_range)),
                            "rir_seed": int(rng.integers(2**62))})
        elif name == "noise":
            if rng.random() < spec.p_noise:
                rec = {"op": "noise", "snr_db": float(rng.uniform(*spec.snr_range_db))}
                if spec.noise_source == "white":
                    rec["noise_seed"] = int(rng.integers(2**62))
                else:
                    files = _noise_files(spec.noise_source)
                    rec["noise_file"] = files[int(rng.integers(len(files)))]
                    rec["offset_seed"] = int(rng.integers(2**62))
                ops.append(rec)
        elif name == "clip":
            if rng.random() < spec.p_clip:
                ops.append({"op": "clip", "ratio": float(rng.uniform(*spec.clip_range))})
        elif name == "bw":
            fired = rng.random() < spec.p_bw
            targets = [int(t) for t in spec.bw_targets_hz if t < fs]
            if fired and targets:
                ops.append({"op": "bw", "target_hz": targets[int(rng.integers(len(targets)))],
                            "family": FAMILIES[int(rng.integers(len(FAMILIES)))].value})
    return AppliedOps(ops)


def apply_ops(clean: AudioBuffer, ops: AppliedOps) -> AudioBuffer:
    """Replay a recorded operator chain on ``clean``."""
    if len(clean) == 0:
        raise DomainError("cannot degrade an empty signal")
    fs = clean.sample_rate
    x = clean.samples.copy()
    n = x.size
    for op in ops.ops:
        kind = op["op"]
        if kind == "eq":
            x = apply_eq_windows(x, fs, op["windows"])
        elif kind == "rev":
            rir = synth_rir(op["rt60"], fs, np.random.default_rng(op["rir_seed"]))
            x = convolve(x, rir.taps)
        elif kind == "noise":
            if "noise_seed" in op:
                noise = np.random.default_rng(op["noise_seed"]).standard_normal(n)
                x = mix_at_snr(AudioBuffer(x, fs), AudioBuffer(noise, fs), op["snr_db"]).samples
            else:
                noise = _load_noise(op["noise_file"], fs)
                x = mix_at_snr(AudioBuffer(x, fs), AudioBuffer(noise, fs), op["snr_db"],
                               rng=np.random.default_rng(op["offset_seed"])).samples
        elif kind == "clip":
            x = op_clip(AudioBuffer(x, fs), op["ratio"]).samples
        elif kind == "bw":
            fam = FilterFamily(op["family"])
            low = resample_array(x, fs, op["target_hz"], fam)
            x = fit_length(resample_array(low, op["target_hz"], fs, fam), n)
        else:
            raise ValueError(f"unknown operator {kind!r}")
    return AudioBuffer(x, fs)


def degrade(clean: AudioBuffer, spec: DegradationSpec, rng) -> tuple:
    """Return ``(lq, applied_ops)``; ``lq`` has the same length and rate as ``clean``."""
    if len(clean) == 0:
        raise DomainError("cannot degrade an empty signal")
    ops = sample_ops(len(clean), clean.sample_rate, spec, rng)
    return apply_ops(clean, ops), ops
