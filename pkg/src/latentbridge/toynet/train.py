"""The four toy-scale training stages.

1. ``train_ep_vae``        energy-preserving autoencoder on clean frames
2. ``train_joint_prior``   encoder fine-tuned so degraded inputs land on clean latents
3. ``train_bridge``        z0-predictor on paired (z0, z1^np) latents
4. ``finetune_perceptual`` joint predictor/decoder fine-tuning with data-space terms

Every stage exposes its per-batch objective as a pure ``*_loss`` function
with fixed randomness passed in, which is what the gradient pre-flight
checks call.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, fields

import numpy as np

from ..bridge import BridgeBatch, BridgePredictor, bridge_loss
from ..errors import TrainingDivergedError
from ..schedule import NoiseSchedule
from . import losses as L
from .corpus import FRAME
from .net import ToyNet, grad_check
from .optim import SGDMomentum


DECODER_OUT_GAIN = 0.01


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.02
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0
    lambda_rec: float = 1.0
    lambda_adv: float = 0.1
    lambda_fm: float = 5.0
    lambda_kl: float = 1e-4
    lambda_mse: float = 2.5
    lambda_cos: float = 2.5
    lambda_pesq: float = 1.0
    lambda_utmos: float = 10.0
    wave_weight: float = 1.0
    scale_range: tuple = (0.5, 2.0)
    disc_lr: float = 0.01
    latent_dim: int = 8
    hidden: int = 128
    decoder_activation: str = "relu"
    eval_every: int = 100
    lr_schedule: str = "constant"  # or "cosine" (decays to 0 over the run)

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("steps, batch_size and learning_rate must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + np.cos(np.pi * step / self.steps))

    def replace(self, **kw) -> "TrainConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return TrainConfig(**d)


@dataclass
class History:
    rows: list = field(default_factory=list)

    def log(self, **row) -> None:
        self.rows.append(row)

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows if key in r]

    def to_csv(self, path) -> None:
        keys = []
        for r in self.rows:
            keys.extend(k for k in r if k not in keys)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def _check_finite(value: float, stage: str, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(f"{stage}: loss became {value} at step {step}")


# -- autoencoder ---------------------------------------------------------------

def init_autoencoder(cfg: TrainConfig, rng=None, frame: int = FRAME):
    rng = np.random.default_rng(rng)
    enc = ToyNet.init([frame, cfg.hidden, 2 * cfg.latent_dim], "tanh", rng)
    dec = ToyNet.init([cfg.latent_dim, cfg.hidden, frame], cfg.decoder_activation, rng)
    # a full-scale random output layer makes the loss favour switching every
    # ReLU unit off; starting near zero keeps them alive
    dec.params[-2] *= DECODER_OUT_GAIN
    return enc, dec


def encode_mean(encoder: ToyNet, x: np.ndarray) -> np.ndarray:
    d = encoder.dims[-1] // 2
    return encoder.forward(np.atleast_2d(x))[:, :d]


def decode(decoder: ToyNet, z: np.ndarray) -> np.ndarray:
    return decoder.forward(np.atleast_2d(z))


def data_loss(y, target, disc, cfg: TrainConfig):
    """lambda_rec * rec + lambda_adv * adv + lambda_fm * fm, and d/dy."""
    rec, g = L.reconstruction_loss(y, target, wave_weight=cfg.wave_weight)
    total = cfg.lambda_rec * rec
    g = cfg.lambda_rec * g
    parts = {"rec": rec}
    if disc is not None and (cfg.lambda_adv or cfg.lambda_fm):
        adv, fm, g_gan = disc.generator_terms(y, target, cfg.lambda_adv, cfg.lambda_fm)
        total += cfg.lambda_adv * adv + cfg.lambda_fm * fm
        g = g + g_gan
        parts.update(adv=adv, fm=fm)
    return total, g, parts


def ep_vae_loss(encoder, decoder, disc, x, s, eps, cfg: TrainConfig):
    """EP-VAE objective on one batch.

    ``s`` holds one scale per item (all ones for the non-EP baseline) and
    ``eps`` the reparameterisation noise. Returns
    ``(total, parts, encoder_grads, decoder_grads, y)``.
    """
    d = cfg.latent_dim
    h, enc_cache = encoder.forward_cached(x)
    mu, logvar = h[:, :d], h[:, d:]
    z = mu + np.exp(0.5 * logvar) * eps
    s = np.asarray(s, dtype=float)[:, None]
    y, dec_cache = decoder.forward_cached(s * z)
    total, g_y, parts = data_loss(y, s * x, disc, cfg)
    kl, g_mu_kl, g_lv_kl = L.kl_loss(mu, logvar)
    total += cfg.lambda_kl * kl
    parts["kl"] = kl
    g_sz, dec_grads = decoder.backward(dec_cache, g_y)
    g_z = s * g_sz
    g_mu = g_z + cfg.lambda_kl * g_mu_kl
    g_lv = g_z * eps * 0.5 * np.exp(0.5 * logvar) + cfg.lambda_kl * g_lv_kl
    _, enc_grads = encoder.backward(enc_cache, np.concatenate([g_mu, g_lv], axis=1))
    return total, parts, enc_grads, dec_grads, y


def ep_error(encoder, decoder, frames, scales=(0.5, 1.5, 2.0)) -> float:
    """Mean relative scale-equivariance error ||D(sz) - sD(z)|| / ||sD(z)||."""
    z = encode_mean(encoder, frames)
    base = decode(decoder, z)
    errs = []
    for s in scales:
        ref = s * base
        diff = decode(decoder, s * z) - ref
        errs.append(np.linalg.norm(diff, axis=1) / (np.linalg.norm(ref, axis=1) + 1e-12))
    return float(np.mean(errs))


def heldout_rec(encoder, decoder, frames) -> float:
    y = decode(decoder, encode_mean(encoder, frames))
    return L.mrstft_loss(y, frames)[0]


def train_ep_vae(frames: np.ndarray, cfg: TrainConfig, ep: bool = True, heldout=None, disc=None):
    """Train the autoencoder; ``ep=False`` gives the fixed-scale baseline.

    Returns ``(encoder, decoder, discriminator, history)``. Held-out
    reconstruction MRSTFT is logged at step 0, every ``eval_every`` steps
    and after the last step.
    """
    rng = np.random.default_rng(cfg.seed)
    enc, dec = init_autoencoder(cfg, rng, frames.shape[1])
    disc = disc or L.SpectralDiscriminator.init(frames.shape[1], rng=rng)
    opt = SGDMomentum(enc.params + dec.params, cfg.learning_rate, cfg.momentum, cfg.clip_norm)
    dopt = SGDMomentum(disc.net.params, cfg.disc_lr, cfg.momentum, cfg.clip_norm)
    hist = History()
    for step in range(cfg.steps):
        if heldout is not None and step % cfg.eval_every == 0:
            hist.log(step=step, heldout_rec=heldout_rec(enc, dec, heldout))
        idx = rng.integers(0, len(frames), cfg.batch_size)
        x = frames[idx]
        s = rng.uniform(*cfg.scale_range, size=len(x)) if ep else np.ones(len(x))
        eps = rng.standard_normal((len(x), cfg.latent_dim))
        total, parts, ge, gd, y = ep_vae_loss(enc, dec, disc, x, s, eps, cfg)
        _check_finite(total, "ep-vae", step)
        opt.lr = cfg.lr_at(step)
        opt.step(ge + gd)
        if cfg.lambda_adv or cfg.lambda_fm:
            dl, dg = disc.loss_and_grads(y, s[:, None] * x)
            dopt.step(dg)
            parts["disc"] = dl
        hist.log(step=step, total=total, **parts)
    if heldout is not None:
        hist.log(step=cfg.steps, heldout_rec=heldout_rec(enc, dec, heldout))
    return enc, dec, disc, hist


# -- joint neural prior --------------------------------------------------------------

def prior_loss(enc_np, decoder, disc, x1, z0, xhat0, s, cfg: TrainConfig):
    """Joint-prior objective: EP data term against D(z0) plus MSE + cosine to z0.

    Returns ``(total, parts, encoder_grads)``; the decoder is only read.
    """
    d = cfg.latent_dim
    h, cache = enc_np.forward_cached(x1)
    z = h[:, :d]
    s = np.asarray(s, dtype=float)[:, None]
    y, dec_cache = decoder.forward_cached(s * z)
    total, g_y, parts = data_loss(y, s * xhat0, disc, cfg)
    g_sz, _ = decoder.backward(dec_cache, g_y)
    g_z = s * g_sz
    mse, g_mse = L.mse_loss(z, z0)
    cos, g_cos = L.cosine_loss(z, z0)
    total += cfg.lambda_mse * mse + cfg.lambda_cos * cos
    parts.update(mse=mse, cos=cos)
    g_z = g_z + cfg.lambda_mse * g_mse + cfg.lambda_cos * g_cos
    g_h = np.concatenate([g_z, np.zeros_like(h[:, d:])], axis=1)
    _, grads = enc_np.backward(cache, g_h)
    return total, parts, grads, y


def latent_distance(encoder, x1, z0) -> float:
    return float(np.mean(np.linalg.norm(encode_mean(encoder, x1) - z0, axis=1)))


def train_joint_prior(encoder_init, decoder, encoder_clean, x0, x1, cfg: TrainConfig,
                      disc=None, heldout=None):
    """Fine-tune a copy of ``encoder_init`` on paired frames ``(x0, x1)``.

    ``decoder`` and ``encoder_clean`` are frozen. ``heldout`` is an optional
    ``(x0, x1)`` pair whose mean latent distance is logged.
    Returns ``(encoder_np, history)``.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    enc_np = encoder_init.copy()
    z0_all = encode_mean(encoder_clean, x0)
    xhat0_all = decode(decoder, z0_all)
    disc = disc.copy() if disc is not None else L.SpectralDiscriminator.init(x0.shape[1], rng=rng)
    opt = SGDMomentum(enc_np.params, cfg.learning_rate, cfg.momentum, cfg.clip_norm)
    dopt = SGDMomentum(disc.net.params, cfg.disc_lr, cfg.momentum, cfg.clip_norm)
    hist = History()
    if heldout is not None:
        hz0 = encode_mean(encoder_clean, heldout[0])
    for step in range(cfg.steps):
        if heldout is not None and step % cfg.eval_every == 0:
            hist.log(step=step, heldout_dist=latent_distance(enc_np, heldout[1], hz0))
        idx = rng.integers(0, len(x1), cfg.batch_size)
        s = rng.uniform(*cfg.scale_range, size=len(idx))
        total, parts, grads, y = prior_loss(enc_np, decoder, disc, x1[idx], z0_all[idx], xhat0_all[idx], s, cfg)
        _check_finite(total, "joint-prior", step)
        opt.lr = cfg.lr_at(step)
        opt.step(grads)
        if cfg.lambda_adv or cfg.lambda_fm:
            dl, dg = disc.loss_and_grads(y, s[:, None] * xhat0_all[idx])
            dopt.step(dg)
            parts["disc"] = dl
        hist.log(step=step, total=total, **parts)
    if heldout is not None:
        hist.log(step=cfg.steps, heldout_dist=latent_distance(enc_np, heldout[1], hz0))
    return enc_np, hist


# -- bridge -------------------------------------------------------------------------

def train_bridge(z0: np.ndarray, z1: np.ndarray, sched: NoiseSchedule, cfg: TrainConfig, hidden=(128, 128)):
    """Fit a z0-predictor with t ~ U(t_min, 1). Returns ``(predictor, history)``."""
    rng = np.random.default_rng(cfg.seed + 2)
    pred = BridgePredictor.init(z0.shape[1], hidden, rng)
    opt = SGDMomentum(pred.net.params, cfg.learning_rate, cfg.momentum, cfg.clip_norm)
    hist = History()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(z0), cfg.batch_size)
        batch = BridgeBatch.draw(z0[idx], z1[idx], sched, rng)
        loss, grads = bridge_loss(pred, batch)
        _check_finite(loss, "bridge", step)
        opt.lr = cfg.lr_at(step)
        opt.step(grads)
        hist.log(step=step, bridge=loss)
    return pred, hist


# -- perceptual fine-tuning -------------------------------------------------------------

class Variant(str, enum.Enum):
    CONT = "Cont"
    R = "R"
    RH = "RH"
    RAF = "RAF"
    RHAF = "RHAF"
    RHAF_BRIDGE_ONLY = "RHAF-BridgeOnly"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        if name in ("RHAF-B", "RHAF-BRIDGEONLY"):
            return cls.RHAF_BRIDGE_ONLY
        return cls(name)

    @property
    def rec(self) -> bool:
        return self is not Variant.CONT

    @property
    def gan(self) -> bool:
        return self in (Variant.RAF, Variant.RHAF, Variant.RHAF_BRIDGE_ONLY)

    @property
    def hf(self) -> bool:
        return self in (Variant.RH, Variant.RHAF, Variant.RHAF_BRIDGE_ONLY)

    @property
    def trains_decoder(self) -> bool:
        return self not in (Variant.CONT, Variant.RHAF_BRIDGE_ONLY)


def finetune_loss(predictor, decoder, disc, batch: BridgeBatch, x0, variant: Variant, cfg: TrainConfig):
    """Bridge loss plus the variant's data-space terms on D(z0_hat).

    Returns ``(total, parts, predictor_grads, decoder_grads, y)``;
    decoder grads are None when no data-space term is active.
    """
    loss_b, _, z_hat, cache = bridge_loss(predictor, batch, return_output=True)
    parts = {"bridge": loss_b}
    g_zhat = 2.0 * (z_hat - batch.z0) / len(z_hat)
    total = loss_b
    dec_grads = None
    y = None
    if variant.rec or variant.gan or variant.hf:
        y, dec_cache = decoder.forward_cached(z_hat)
        g_y = np.zeros_like(y)
        if variant.rec:
            rec, g = L.reconstruction_loss(y, x0, wave_weight=cfg.wave_weight)
            total += cfg.lambda_rec * rec
            g_y += cfg.lambda_rec * g
            parts["rec"] = rec
        if variant.gan:
            adv, fm, g = disc.generator_terms(y, x0, cfg.lambda_adv, cfg.lambda_fm)
            total += cfg.lambda_adv * adv + cfg.lambda_fm * fm
            g_y += g
            parts.update(adv=adv, fm=fm)
        if variant.hf:
            hf, g, (vp, vu) = L.perceptual_loss(y, x0, cfg.lambda_pesq, cfg.lambda_utmos)
            total += hf
            g_y += g
            parts.update(pesq_proxy=vp, utmos_proxy=vu)
        g_in, dec_grads = decoder.backward(dec_cache, g_y)
        g_zhat = g_zhat + g_in
    _, pred_grads = predictor.net.backward(cache, g_zhat)
    return total, parts, pred_grads, dec_grads, y


def finetune_perceptual(predictor, decoder, z0, z1, x0, sched: NoiseSchedule, cfg: TrainConfig,
                        variant, disc=None):
    """Post-train copies of ``predictor`` (and ``decoder`` unless frozen by the variant).

    ``z0``/``z1`` are the frozen-encoder latents of the clean/degraded frames
    ``x0``. Returns ``(predictor', decoder', history)``.
    """
    variant = Variant.parse(variant) if isinstance(variant, str) else Variant(variant)
    rng = np.random.default_rng(cfg.seed + 3)
    pred = predictor.copy()
    dec = decoder.copy()
    disc = disc.copy() if disc is not None else L.SpectralDiscriminator.init(x0.shape[1], rng=rng)
    params = pred.net.params + (dec.params if variant.trains_decoder else [])
    opt = SGDMomentum(params, cfg.learning_rate, cfg.momentum, cfg.clip_norm)
    dopt = SGDMomentum(disc.net.params, cfg.disc_lr, cfg.momentum, cfg.clip_norm)
    hist = History()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(z0), cfg.batch_size)
        batch = BridgeBatch.draw(z0[idx], z1[idx], sched, rng)
        total, parts, gp, gd, y = finetune_loss(pred, dec, disc, batch, x0[idx], variant, cfg)
        _check_finite(total, "finetune", step)
        opt.lr = cfg.lr_at(step)
        opt.step(gp + (gd if variant.trains_decoder else []))
        if variant.gan:
            dl, dg = disc.loss_and_grads(y, x0[idx])
            dopt.step(dg)
            parts["disc"] = dl
        hist.log(step=step, total=total, **parts)
    return pred, dec, hist


# -- gradient pre-flight ------------------------------------------------------------------

def preflight(encoder, decoder, disc, predictor, x0, x1, sched: NoiseSchedule, cfg: TrainConfig,
              eps=(1e-3, 1e-4), n_items: int = 2, max_entries: int = 10_000) -> dict:
    """Finite-difference check of every stage's total-loss gradient.

    Uses Richardson-extrapolated differences over a ladder of steps. The
    encoder's gradients reach down to ~1e-6 of the largest, where a small
    step drowns in round-off; the decoder sits right at a near-silent output
    where the spectral log terms curve sharply, which punishes a large one.

    Runs on ``n_items`` frames with fixed noise; nets larger than
    ``max_entries`` are checked on a 1% subsample. Returns ``{check: max_rel_error}``.
    """
    rng = np.random.default_rng(cfg.seed + 99)
    x0 = x0[:n_items]
    x1 = x1[:n_items]
    s = rng.uniform(*cfg.scale_range, size=n_items)
    noise = rng.standard_normal((n_items, cfg.latent_dim))

    def check(net, loss):
        return grad_check(net, loss, eps, rng, max_entries, richardson=True)

    out = {}
    out["ep_vae/encoder"] = check(
        encoder, lambda net: _pick(ep_vae_loss(net, decoder, disc, x0, s, noise, cfg), 2))
    out["ep_vae/decoder"] = check(
        decoder, lambda net: _pick(ep_vae_loss(encoder, net, disc, x0, s, noise, cfg), 3))
    z0 = encode_mean(encoder, x0)
    xhat0 = decode(decoder, z0)
    out["joint_prior/encoder"] = check(
        encoder, lambda net: _pick(prior_loss(net, decoder, disc, x1, z0, xhat0, s, cfg), 2))
    z1 = encode_mean(encoder, x1)
    batch = BridgeBatch.draw(z0, z1, sched, rng)
    out["bridge/predictor"] = check(predictor.net, lambda net: bridge_loss(predictor, batch))
    for v in (Variant.CONT, Variant.RHAF):
        out[f"finetune_{v.value}/predictor"] = check(
            predictor.net, lambda net, v=v: _pick(finetune_loss(predictor, decoder, disc, batch, x0, v, cfg), 2))
    out["finetune_RHAF/decoder"] = check(
        decoder, lambda net: _pick(finetune_loss(predictor, net, disc, batch, x0, Variant.RHAF, cfg), 3))
    fake = decode(decoder, z0)
    out["discriminator"] = check(disc.net, lambda net: disc.loss_and_grads(fake, x0))
    return out


def _pick(res, i):
    return res[0], res[i]
