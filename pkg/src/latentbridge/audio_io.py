"""RIFF/WAVE reading and writing, and JSON-lines corpus manifests."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp.buffer import AudioBuffer
from .errors import WavFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

_FORMAT_NAMES = {0x0002: "MS ADPCM", 0x0006: "A-law", 0x0007: "mu-law", 0x0011: "IMA ADPCM", 0x0055: "MPEG Layer 3"}


def _decode(raw: bytes, tag: int, bits: int) -> np.ndarray:
    if tag == WAVE_FORMAT_PCM:
        if bits == 16:
            return np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
        if bits == 24:
            b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            v = np.where(v >= 1 << 23, v - (1 << 24), v)
            return v.astype(float) / float(1 << 23)
        if bits == 32:
            return np.frombuffer(raw, dtype="<i4").astype(float) / float(1 << 31)
    elif tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            return np.frombuffer(raw, dtype="<f4").astype(float)
        if bits == 64:
            return np.frombuffer(raw, dtype="<f8").astype(float)
    name = _FORMAT_NAMES.get(tag, f"0x{tag:04X}")
    raise WavFormatError(f"unsupported WAV codec: format tag {name} with {bits} bits per sample")


def read_wav(path) -> AudioBuffer:
    """Read PCM16/24/32 or float32 WAV as mono float samples in [-1, 1].

    Multi-channel data is averaged to mono.
    """
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise WavFormatError(f"{path}: truncated RIFF header at byte offset {len(data)}")
    if data[:4] != b"RIFF":
        raise WavFormatError(f"{path}: missing 'RIFF' magic at byte offset 0")
    if data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: missing 'WAVE' form type at byte offset 8")
    off = 12
    fmt = None
    payload = None
    while off + 8 <= len(data):
        cid = data[off:off + 4]
        (size,) = struct.unpack_from("<I", data, off + 4)
        body_start = off + 8
        if body_start + size > len(data):
            if cid == b"data":
                size = len(data) - body_start  # tolerate a truncated data chunk length
            else:
                raise WavFormatError(f"{path}: chunk {cid!r} at byte offset {off} overruns the file")
        body = data[body_start:body_start + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: 'fmt ' chunk too short at byte offset {off}")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body, 0)
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise WavFormatError(f"{path}: extensible 'fmt ' chunk too short at byte offset {off}")
                (tag,) = struct.unpack_from("<H", body, 24)
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            payload = body
        off = body_start + size + (size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: no 'fmt ' chunk found before byte offset {len(data)}")
    if payload is None:
        raise WavFormatError(f"{path}: no 'data' chunk found before byte offset {len(data)}")
    tag, channels, rate, bits = fmt
    if channels < 1:
        raise WavFormatError(f"{path}: invalid channel count {channels}")
    frame = channels * bits // 8
    usable = len(payload) - len(payload) % frame if frame else 0
    samples = _decode(payload[:usable], tag, bits)
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioBuffer(samples, rate)


def _pcm16(x: np.ndarray) -> np.ndarray:
    scaled = x * 32768.0
    # round half away from zero, then saturate
    q = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(buf: AudioBuffer, path, fmt: str = "float32") -> None:
    """Write a canonical 44-byte-header mono WAV (``fmt`` is "pcm16" or "float32")."""
    fmt = fmt.lower()
    x = np.asarray(buf.samples, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot write non-finite samples")
    if fmt == "pcm16":
        tag, bits, raw = WAVE_FORMAT_PCM, 16, _pcm16(x).tobytes()
    elif fmt == "float32":
        tag, bits, raw = WAVE_FORMAT_IEEE_FLOAT, 32, x.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown WAV output format {fmt!r}")
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(raw)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, tag, 1, buf.sample_rate, buf.sample_rate * block, block, bits)
    header += b"data" + struct.pack("<I", len(raw))
    try:
        Path(path).write_bytes(header + raw)
    except OSError as exc:
        raise OSError(f"failed to write WAV {path}: {exc}") from exc


# -- manifests -----------------------------------------------------------------

@dataclass
class ManifestEntry:
    clean_path: str
    seed: int
    lq_path: str | None = None
    applied_ops: str | None = None  # JSON text of the AppliedOps record


@dataclass
class Manifest:
    root: str
    sample_rate: int
    entries: list = field(default_factory=list)

    def add(self, entry: ManifestEntry) -> None:
        if any(e.seed == entry.seed for e in self.entries):
            raise ValueError(f"duplicate seed {entry.seed} in manifest")
        self.entries.append(entry)

    def save(self, path) -> None:
        lines = [json.dumps({"kind": "header", "root": self.root, "sample_rate": self.sample_rate})]
        for e in self.entries:
            lines.append(json.dumps({"kind": "entry", **e.__dict__}, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, check_paths: bool = True) -> "Manifest":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"empty manifest {path}")
        head = json.loads(lines[0])
        if head.get("kind") != "header":
            raise ValueError(f"{path}: first line must be the manifest header")
        man = cls(head["root"], int(head["sample_rate"]))
        for ln in lines[1:]:
            rec = json.loads(ln)
            rec.pop("kind", None)
            entry = ManifestEntry(**rec)
            if check_paths:
                for p in (entry.clean_path, entry.lq_path):
                    if p is not None and not (Path(man.root) / p).exists():
                        raise FileNotFoundError(f"manifest path missing: {Path(man.root) / p}")
            man.add(entry)
        return man
