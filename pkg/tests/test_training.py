"""Behaviour of the trained toy pipeline (shares the session ``trained_run``)."""
import csv

import numpy as np
import pytest

from latentbridge import pipeline as P
from latentbridge.analysis import snr_db
from latentbridge.audio_io import read_wav
from latentbridge.bridge import bridge_variance, interpolate
from latentbridge.config import RunConfig
from latentbridge.sampler import SamplerConfig, SamplerMode, sample_trajectory
from latentbridge.toynet import checkpoint
from latentbridge.toynet.train import TrainConfig, encode_mean, train_bridge, train_joint_prior

pytestmark = pytest.mark.acceptance


def history(run, command):
    with open(run.out / command / "history.csv", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_heldout_reconstruction_decreases(trained_run):
    rec = [float(r["heldout_rec"]) for r in history(trained_run, "train-vae") if r.get("heldout_rec")]
    assert rec[-1] < 0.5 * rec[0]


def test_bridge_loss_decreases(trained_run):
    loss = [float(r["bridge"]) for r in history(trained_run, "train-bridge")]
    assert np.mean(loss[-10:]) < np.mean(loss[:10])


def test_identity_pairs_leave_prior_in_place(trained_run):
    # x1 = x0: the prior encoder starts at the clean encoder, so its latent
    # distance starts at zero and fine-tuning must not drift away from it
    rc = RunConfig()
    enc = checkpoint.load(trained_run.models / "encoder.vbtk")
    dec = checkpoint.load(trained_run.models / "decoder.vbtk")
    disc = P.SpectralDiscriminator(checkpoint.load(trained_run.models / "discriminator.vbtk"), enc.dims[0])
    x0 = P.read_corpus(trained_run.corpus, "train").clean_frames()
    h0 = P.read_corpus(trained_run.corpus, "heldout").clean_frames()
    enc_np, hist = train_joint_prior(enc, dec, enc, x0, x0, rc.stage("prior"), disc, (h0, h0))
    z0 = encode_mean(enc, h0)
    dist = hist.column("heldout_dist")
    assert dist[0] == 0.0
    drift = np.mean(np.linalg.norm(encode_mean(enc_np, h0) - z0, axis=1))
    assert drift < 0.1 * np.mean(np.linalg.norm(z0, axis=1))


def test_identity_bridge_noise_floor():
    # with z1 = z0 the predictor can read z0 off its condition, so near t = 1
    # its error must not exceed the bridge noise it has to see through
    rng = np.random.default_rng(5)
    sched = RunConfig().schedule
    d = 4
    z = rng.standard_normal((256, d))
    pred, _ = train_bridge(z, z, sched, TrainConfig(steps=1500, learning_rate=0.05, batch_size=64), hidden=(32, 32))
    t = 0.95
    zt = interpolate(z, z, t, sched, rng)
    err = np.mean(np.sum((pred(zt, t, z) - z) ** 2, axis=1))
    floor = float(bridge_variance(t, sched)) * d
    assert err <= floor


def test_bridge_moves_toward_clean(trained_run):
    bundle = P.load_bundle(trained_run.models)
    x0, x1 = P.read_corpus(trained_run.corpus, "heldout").paired_frames()
    z0 = encode_mean(bundle.encoder, x0)
    z1 = encode_mean(bundle.encoder_np, x1)
    rc = RunConfig()
    z_hat, _ = sample_trajectory(bundle.predictor, z1, rc.sampler, rc.schedule, np.random.default_rng(0))
    assert np.mean(np.linalg.norm(z_hat - z0, axis=1)) < np.mean(np.linalg.norm(z1 - z0, axis=1))


def test_one_step_ode_restore_is_predictor_output(trained_run):
    bundle = P.load_bundle(trained_run.models)
    x1 = P.read_corpus(trained_run.corpus, "heldout").paired_frames()[1][:16]
    z1 = encode_mean(bundle.encoder_np, x1)
    out, _ = sample_trajectory(bundle.predictor, z1, SamplerConfig(SamplerMode.ODE, 1), RunConfig().schedule)
    np.testing.assert_array_equal(out, bundle.predictor(z1, 1.0, z1))


def test_rhaf_proxy_score_not_below_r(ablation_rows):
    score = {r["variant"]: float(r["proxy_score"]) for r in ablation_rows}
    assert score["RHAF"] >= score["R"]


def test_bridge_only_changes_predictor(ablation_rows):
    row = {r["variant"]: r for r in ablation_rows}["RHAF-B"]
    assert row["decoder_changed"] == "0" and row["predictor_changed"] == "1"


def test_restore_identity_input(trained_run):
    # a clean input (identity degradation) must come back at least as close to
    # the clean signal as the degraded input is, and as its restoration is
    ho = P.read_corpus(trained_run.corpus, "heldout")
    snr = {"clean_in": [], "lq_in": [], "lq_restored": []}
    for i in range(10):
        for kind, key in (("clean", "clean_in"), ("lq", "lq_restored")):
            out = trained_run.out / "restore" / f"{kind}_{i}.wav"
            trained_run.run("restore", trained_run.corpus / "heldout" / f"{kind}_{i:04d}.wav", "--output", out)
            snr[key].append(snr_db(ho.clean[i], read_wav(out).samples))
        snr["lq_in"].append(snr_db(ho.clean[i], ho.degraded[i]))
    mean = {k: np.mean(v) for k, v in snr.items()}
    assert mean["clean_in"] >= mean["lq_in"]
    assert mean["clean_in"] >= mean["lq_restored"]
