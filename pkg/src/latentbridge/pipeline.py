"""Four-stage toy pipeline, model bundles and frame-wise restoration."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import lsd, snr_db
from .audio_io import Manifest, ManifestEntry, read_wav, write_wav
from .bridge import BridgePredictor
from .degrade import AppliedOps
from .dsp.buffer import AudioBuffer
from .dsp.spectral import mrstft_distance
from .errors import GradientCheckError, StageOrderError
from .sampler import SamplerConfig, sample_trajectory
from .schedule import NoiseSchedule
from .toynet import checkpoint
from .toynet.corpus import FRAME, TOY_RATE, ToyCorpus
from .toynet.losses import SpectralDiscriminator
from .toynet.train import (TrainConfig, decode, encode_mean, finetune_perceptual, init_autoencoder,
                           preflight, train_bridge, train_ep_vae, train_joint_prior)

PREFLIGHT_TOL = 1e-4

# checkpoint files written by each stage, in stage order
STAGE_FILES = {
    "vae": ("encoder.vbtk", "decoder.vbtk", "discriminator.vbtk"),
    "prior": ("encoder_np.vbtk",),
    "bridge": ("predictor.vbtk",),
    "finetune": ("predictor_ft.vbtk", "decoder_ft.vbtk"),
}
STAGE_COMMANDS = {"vae": "train-vae", "prior": "train-prior", "bridge": "train-bridge", "finetune": "finetune"}


@dataclass
class ModelBundle:
    encoder: object
    decoder: object
    encoder_np: object = None
    predictor: BridgePredictor | None = None
    discriminator: SpectralDiscriminator | None = None
    frame: int = FRAME

    @property
    def latent_dim(self) -> int:
        return self.decoder.dims[0]


def require_stage(model_dir, stage: str) -> None:
    """Raise StageOrderError unless ``stage``'s checkpoints exist in ``model_dir``."""
    missing = [f for f in STAGE_FILES[stage] if not (Path(model_dir) / f).is_file()]
    if missing:
        raise StageOrderError(
            f"missing {', '.join(missing)} in {model_dir}: run `{STAGE_COMMANDS[stage]}` first")


def save_stage(model_dir, stage: str, nets: dict) -> None:
    d = Path(model_dir)
    d.mkdir(parents=True, exist_ok=True)
    for fname in STAGE_FILES[stage]:
        checkpoint.save(nets[fname], d / fname)


def load_bundle(model_dir, finetuned: bool = True) -> ModelBundle:
    """Load everything needed for restoration, preferring fine-tuned weights."""
    d = Path(model_dir)
    for stage in ("vae", "prior", "bridge"):
        require_stage(d, stage)
    enc = checkpoint.load(d / "encoder.vbtk")
    dec = checkpoint.load(d / "decoder.vbtk")
    pnet = checkpoint.load(d / "predictor.vbtk")
    if finetuned and all((d / f).is_file() for f in STAGE_FILES["finetune"]):
        pnet = checkpoint.load(d / "predictor_ft.vbtk")
        dec = checkpoint.load(d / "decoder_ft.vbtk")
    latent = dec.dims[0]
    n_freqs = (pnet.dims[0] - 2 * latent) // 2
    disc = checkpoint.load(d / "discriminator.vbtk")
    return ModelBundle(enc, dec, checkpoint.load(d / "encoder_np.vbtk"),
                       BridgePredictor(pnet, latent, n_freqs),
                       SpectralDiscriminator(disc, enc.dims[0]), enc.dims[0])


# -- framing and restoration ---------------------------------------------------------

def to_frames(x: np.ndarray, frame: int) -> np.ndarray:
    n_fr = max(1, -(-x.size // frame))
    padded = np.zeros(n_fr * frame)
    padded[:x.size] = x
    return padded.reshape(n_fr, frame)


def restore_array(bundle: ModelBundle, x: np.ndarray, sampler: SamplerConfig,
                  sched: NoiseSchedule, rng=None) -> np.ndarray:
    """Degraded waveform -> E^np -> reverse bridge -> D, frame by frame."""
    x = np.asarray(x, dtype=float)
    frames = to_frames(x, bundle.frame)
    z1 = encode_mean(bundle.encoder_np, frames)
    z0_hat, _ = sample_trajectory(bundle.predictor, z1, sampler, sched, rng)
    return decode(bundle.decoder, z0_hat).reshape(-1)[:x.size]


def restore(bundle: ModelBundle, buf: AudioBuffer, sampler: SamplerConfig,
            sched: NoiseSchedule, rng=None) -> AudioBuffer:
    return buf.with_samples(restore_array(bundle, buf.samples, sampler, sched, rng))


def evaluate(bundle: ModelBundle, corpus: ToyCorpus, sampler: SamplerConfig,
             sched: NoiseSchedule, seed: int = 0) -> dict:
    """Mean SNR / LSD / MRSTFT of degraded inputs and restored outputs against clean."""
    rows = {k: [] for k in ("snr_in", "snr_out", "lsd_in", "lsd_out", "mrstft_in", "mrstft_out")}
    for i, (c, d) in enumerate(zip(corpus.clean, corpus.degraded)):
        y = restore_array(bundle, d, sampler, sched, np.random.default_rng([seed, i]))
        fs = corpus.sample_rate
        rows["snr_in"].append(snr_db(c, d))
        rows["snr_out"].append(snr_db(c, y))
        rows["lsd_in"].append(lsd(c, d))
        rows["lsd_out"].append(lsd(c, y))
        rows["mrstft_in"].append(mrstft_distance(AudioBuffer(c, fs), AudioBuffer(d, fs)))
        rows["mrstft_out"].append(mrstft_distance(AudioBuffer(c, fs), AudioBuffer(y, fs)))
    return {k: float(np.mean(v)) for k, v in rows.items()}


# -- training driver ---------------------------------------------------------------------

@dataclass
class PipelineResult:
    bundle: ModelBundle
    bundle_pre_finetune: ModelBundle
    histories: dict = field(default_factory=dict)


def latents(encoder, frames) -> np.ndarray:
    return encode_mean(encoder, frames)


def run_preflight(stage_cfgs: dict, sched: NoiseSchedule, x0, x1, tol: float = PREFLIGHT_TOL,
                  max_entries: int = 2000) -> dict:
    """Gradient-check every stage's loss on freshly initialised nets of the configured sizes.

    Raises GradientCheckError naming the failing checks; returns the errors otherwise.
    """
    cfg = stage_cfgs["vae"]
    rng = np.random.default_rng(cfg.seed + 97)
    enc, dec = init_autoencoder(cfg, rng, x0.shape[1])
    disc = SpectralDiscriminator.init(x0.shape[1], rng=rng)
    pred = BridgePredictor.init(cfg.latent_dim, rng=rng)
    errs = preflight(enc, dec, disc, pred, x0, x1, sched, cfg, max_entries=max_entries)
    bad = {k: v for k, v in errs.items() if not v < tol}
    if bad:
        raise GradientCheckError("gradient pre-flight failed: "
                                 + ", ".join(f"{k} rel err {v:.2e}" for k, v in bad.items()))
    return errs


def train_all(train: ToyCorpus, stage_cfgs: dict, sched: NoiseSchedule, variant: str = "RHAF",
              heldout: ToyCorpus | None = None, check_gradients: bool = True) -> PipelineResult:
    """Run VAE -> prior -> bridge -> fine-tune with the given per-stage configs.

    The gradient pre-flight runs first unless ``check_gradients`` is off.
    """
    x0, x1 = train.paired_frames()
    if check_gradients:
        run_preflight(stage_cfgs, sched, x0, x1)
    hx = heldout.paired_frames() if heldout is not None else None
    enc, dec, disc, h_vae = train_ep_vae(x0, stage_cfgs["vae"], ep=True,
                                         heldout=hx[0] if hx else None)
    enc_np, h_prior = train_joint_prior(enc, dec, enc, x0, x1, stage_cfgs["prior"], disc, hx)
    z0 = latents(enc, x0)
    z1 = latents(enc_np, x1)
    pred, h_bridge = train_bridge(z0, z1, sched, stage_cfgs["bridge"])
    pre = ModelBundle(enc, dec, enc_np, pred, disc, x0.shape[1])
    pred_ft, dec_ft, h_ft = finetune_perceptual(pred, dec, z0, z1, x0, sched, stage_cfgs["finetune"],
                                                variant, disc)
    post = ModelBundle(enc, dec_ft, enc_np, pred_ft, disc, x0.shape[1])
    hist = {"vae": h_vae, "prior": h_prior, "bridge": h_bridge, "finetune": h_ft}
    return PipelineResult(post, pre, hist)


# -- corpus on disk --------------------------------------------------------------------

def write_corpus(corpus: ToyCorpus, directory, seed: int, split: str = "train") -> Manifest:
    d = Path(directory)
    (d / split).mkdir(parents=True, exist_ok=True)
    man = Manifest(str(d), corpus.sample_rate)
    for i, (c, lq, ops) in enumerate(zip(corpus.clean, corpus.degraded, corpus.ops)):
        cp = f"{split}/clean_{i:04d}.wav"
        lp = f"{split}/lq_{i:04d}.wav"
        write_wav(AudioBuffer(c, corpus.sample_rate), d / cp)
        write_wav(AudioBuffer(lq, corpus.sample_rate), d / lp)
        man.add(ManifestEntry(cp, seed * 100000 + i, lp, ops.to_json() if ops is not None else None))
    man.save(d / f"{split}.jsonl")
    return man


def read_corpus(directory, split: str = "train") -> ToyCorpus:
    path = Path(directory) / f"{split}.jsonl"
    if not path.is_file():
        raise StageOrderError(f"no {split} corpus manifest at {path}: run `make-toy-corpus` first")
    man = Manifest.load(path)
    root = Path(man.root)
    clean = [read_wav(root / e.clean_path).samples for e in man.entries]
    lq = [read_wav(root / e.lq_path).samples for e in man.entries]
    ops = [AppliedOps.from_json(e.applied_ops) if e.applied_ops else None for e in man.entries]
    return ToyCorpus(clean, lq, ops, man.sample_rate)


__all__ = ["ModelBundle", "PipelineResult", "STAGE_FILES", "TOY_RATE", "TrainConfig", "evaluate",
           "load_bundle", "read_corpus", "require_stage", "restore", "restore_array", "save_stage",
           "to_frames", "train_all", "write_corpus"]
