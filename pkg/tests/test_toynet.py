import struct

import numpy as np
import pytest

from latentbridge.bridge import BridgeBatch, BridgePredictor, bridge_loss
from latentbridge.errors import DimensionError
from latentbridge.schedule import NoiseSchedule
from latentbridge.toynet import checkpoint, losses as L
from latentbridge.toynet.corpus import FRAME, make_toy_corpus
from latentbridge.toynet.net import ToyNet, forward, grad_check
from latentbridge.toynet.optim import SGDMomentum
from latentbridge.toynet.train import (TrainConfig, Variant, ep_error, finetune_perceptual,
                                       init_autoencoder, preflight, train_bridge, train_ep_vae,
                                       train_joint_prior)


def numeric_input_grad(fn, y, eps=1e-6, n_probe=12, seed=0):
    """Central differences of scalar fn at n_probe random entries of y."""
    rng = np.random.default_rng(seed)
    flat = y.ravel()
    idx = rng.choice(flat.size, n_probe, replace=False)
    out = []
    for i in idx:
        e = np.zeros_like(flat)
        e[i] = eps
        out.append((fn((flat + e).reshape(y.shape)) - fn((flat - e).reshape(y.shape))) / (2 * eps))
    return idx, np.array(out)


def assert_input_grad(loss_fn, y, tol=1e-5):
    _, g = loss_fn(y)
    idx, num = numeric_input_grad(lambda v: loss_fn(v)[0], y)
    ana = g.ravel()[idx]
    scale = max(np.max(np.abs(num)), 1e-12)
    assert np.max(np.abs(ana - num)) / scale < tol


# -- forward ----------------------------------------------------------------------

def test_zero_net_zero_output():
    net = ToyNet([5, 7, 3])
    assert np.array_equal(forward(net, np.ones(5)), np.zeros(3))


def test_identity_linear_layer():
    net = ToyNet([4, 4], params=[np.eye(4), np.zeros(4)])
    x = np.array([1.0, -2.0, 3.5, 0.25])
    assert np.array_equal(net(x), x)


def test_forward_deterministic():
    net = ToyNet.init([6, 10, 10, 2], "tanh", 0)
    x = np.random.default_rng(1).standard_normal((3, 6))
    assert np.array_equal(net(x), net(x))


def test_forward_matches_manual_composition():
    net = ToyNet.init([3, 4, 2], ["relu"], 2)
    net.params[1][:] = 0.1
    x = np.random.default_rng(3).standard_normal((5, 3))
    W0, b0, W1, b1 = net.params
    assert np.allclose(net(x), np.maximum(x @ W0 + b0, 0) @ W1 + b1)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        ToyNet([3, 2])(np.zeros(4))


# -- grad_check --------------------------------------------------------------------

def test_grad_check_linear_quadratic():
    rng = np.random.default_rng(4)
    net = ToyNet.init([4, 3], rng=rng)
    x, target = rng.standard_normal((6, 4)), rng.standard_normal((6, 3))

    def loss(n):
        out, cache = n.forward_cached(x)
        d = out - target
        return float(np.sum(d * d)), n.backward(cache, 2 * d)[1]

    assert grad_check(net, loss, 1e-5) < 1e-7


def test_grad_check_bridge_loss_tanh():
    rng = np.random.default_rng(5)
    pred = BridgePredictor.init(3, (16, 16), rng)
    sched = NoiseSchedule.gmax_linear()
    batch = BridgeBatch.draw(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)), sched, rng)
    assert grad_check(pred.net, lambda n: bridge_loss(pred, batch), 1e-5) < 1e-4


def test_grad_check_constant_loss():
    net = ToyNet.init([3, 4, 2], rng=6)
    zeros = [np.zeros_like(p) for p in net.params]
    assert grad_check(net, lambda n: (1.5, zeros), 1e-5) == 0.0


def test_grad_check_eps_range():
    net = ToyNet([2, 2])
    with pytest.raises(ValueError):
        grad_check(net, lambda n: (0.0, [np.zeros_like(p) for p in n.params]), 1e-2)


def test_grad_check_flags_wrong_gradient():
    rng = np.random.default_rng(7)
    net = ToyNet.init([3, 2], rng=rng)
    x = rng.standard_normal((4, 3))

    def wrong(n):
        out, cache = n.forward_cached(x)
        return float(np.sum(out ** 2)), n.backward(cache, out)[1]  # missing the factor 2

    assert grad_check(net, wrong, 1e-5) > 0.1


def test_grad_check_ladder_still_flags_small_gradient_error():
    rng = np.random.default_rng(7)
    net = ToyNet.init([3, 2], rng=rng)
    x = rng.standard_normal((4, 3))

    def off_by_percent(n):
        out, cache = n.forward_cached(x)
        return float(np.sum(out ** 2)), [1.01 * g for g in n.backward(cache, 2 * out)[1]]

    assert grad_check(net, off_by_percent, (1e-3, 1e-4, 1e-5), richardson=True) > 5e-3


def test_grad_check_richardson_beats_truncation():
    net = ToyNet([1, 1])
    net.params = [np.array([[0.3]]), np.array([0.0])]

    def cubic(n):
        w = n.params[0][0, 0]
        return float(np.exp(8.0 * w)), [np.array([[8.0 * np.exp(8.0 * w)]]), np.zeros(1)]

    plain = grad_check(net, cubic, 1e-3)
    assert plain > 1e-5
    assert grad_check(net, cubic, 1e-3, richardson=True) < plain / 100


def test_grad_check_skips_abs_kink_crossed_twice():
    from latentbridge.toynet.net import record_branch
    net = ToyNet([1, 1])
    net.params = [np.array([[1e-5]]), np.zeros(1)]
    c = 1e-8  # |w^2 - c| is negative-inside at w = 1e-5, positive at w +- 1e-3

    def loss(n):
        w = n.params[0][0, 0]
        d = w * w - c
        record_branch(d > 0.0)
        return float(abs(d)), [np.array([[2.0 * np.sign(d) * w]]), np.zeros(1)]

    # scored, the weight entry would show a relative error of 2
    assert grad_check(net, loss, 1e-3) < 1e-6
    assert grad_check(net, loss, (1e-3, 1e-7)) < 1e-6


# -- loss gradients ------------------------------------------------------------------

@pytest.fixture
def waves():
    rng = np.random.default_rng(8)
    return rng.standard_normal((3, FRAME)), rng.standard_normal((3, FRAME))


def test_mrstft_loss_gradient(waves):
    y, x = waves
    assert_input_grad(lambda v: L.mrstft_loss(v, x), y)


def test_nmse_and_reconstruction_gradient(waves):
    y, x = waves
    assert_input_grad(lambda v: L.nmse_loss(v, x), y)
    assert_input_grad(lambda v: L.reconstruction_loss(v, x, wave_weight=0.7), y)


def test_latent_loss_gradients():
    rng = np.random.default_rng(9)
    a, b = rng.standard_normal((2, 4, 8))
    assert_input_grad(lambda v: L.mse_loss(v, b), a)
    assert_input_grad(lambda v: L.cosine_loss(v, b), a)
    mu, lv = rng.standard_normal((2, 4, 8))
    assert_input_grad(lambda v: L.kl_loss(v, lv)[:2], mu)
    assert_input_grad(lambda v: (L.kl_loss(mu, v)[0], L.kl_loss(mu, v)[2]), lv)


def test_kl_zero_at_standard_normal():
    assert L.kl_loss(np.zeros((2, 3)), np.zeros((2, 3)))[0] == 0.0


def test_cosine_loss_values():
    a = np.array([[1.0, 0.0]])
    assert abs(L.cosine_loss(a, a)[0]) < 1e-7
    assert abs(L.cosine_loss(a, -a)[0] - 2.0) < 1e-7


def test_perceptual_proxy_gradients(waves):
    y, x = waves
    assert_input_grad(lambda v: L.pesq_proxy_loss(v, x), y)
    assert_input_grad(lambda v: L.utmos_proxy_loss(v, x), y)


def test_band_proxy_graded_on_band_limited_signal():
    # clean signal with empty upper bands: small errors must not saturate the score
    x = make_toy_corpus(2, seed=0).clean_frames()[:8]
    rng = np.random.default_rng(14)
    vals = [L.utmos_proxy_loss(x + a * rng.standard_normal(x.shape), x)[0] for a in (1e-3, 1e-2, 1e-1)]
    assert vals[0] < 0.5
    assert vals[0] < vals[1] < vals[2]


def test_perceptual_score_bounds(waves):
    y, x = waves
    assert L.perceptual_score(x, x) == 1.0
    assert 0.0 <= L.perceptual_score(y, x) < 1.0


def test_discriminator_generator_gradient(waves):
    y, x = waves
    disc = L.SpectralDiscriminator.init(FRAME, rng=10)
    def fn(v):
        adv, fm, g = disc.generator_terms(v, x, 0.1, 5.0)
        return 0.1 * adv + 5.0 * fm, g
    assert_input_grad(fn, y, tol=1e-4)


def test_discriminator_param_gradient(waves):
    y, x = waves
    disc = L.SpectralDiscriminator.init(FRAME, rng=11)
    assert grad_check(disc.net, lambda n: disc.loss_and_grads(y, x), 1e-5) < 1e-4


# -- checkpoint -----------------------------------------------------------------------

def test_checkpoint_layout():
    net = ToyNet.init([3, 2, 1], "relu", 12)
    data = checkpoint.to_bytes(net)
    assert data[:4] == b"VBTK"
    assert struct.unpack_from("<II", data, 4) == (1, 3)
    assert struct.unpack_from("<3I", data, 12) == (3, 2, 1)
    body = np.frombuffer(data[-8 * net.n_params:], dtype="<f8")
    assert np.array_equal(body[:6], net.params[0].ravel())  # weights first
    assert np.array_equal(body[6:8], net.params[1])
    assert len(data) == 12 + 12 + 4 + 8 * net.n_params


def test_checkpoint_round_trip(tmp_path):
    net = ToyNet.init([5, 6, 4, 2], ["tanh", "relu"], 13)
    checkpoint.save(net, tmp_path / "n.vbtk")
    back = checkpoint.load(tmp_path / "n.vbtk")
    assert back.dims == net.dims and back.activations == net.activations
    assert np.array_equal(back.flat(), net.flat())


def test_checkpoint_bad_magic():
    with pytest.raises(ValueError):
        checkpoint.from_bytes(b"NOPE" + b"\0" * 20)


# -- optimiser ----------------------------------------------------------------------

def test_sgd_clipping_caps_step():
    p = [np.zeros(2)]
    opt = SGDMomentum(p, lr=1.0, momentum=0.0, clip_norm=1.0)
    opt.step([np.array([30.0, 40.0])])
    assert np.allclose(p[0], [-0.6, -0.8])


# -- training contracts (short runs) ----------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    tr = make_toy_corpus(4, seed=3, duration_s=0.25)
    x0, x1 = tr.paired_frames()
    cfg = TrainConfig(steps=30, batch_size=8, latent_dim=4, hidden=16, eval_every=10)
    enc, dec, disc, _ = train_ep_vae(x0, cfg)
    return x0, x1, cfg, enc, dec, disc


def test_linear_decoder_makes_ep_vacuous():
    cfg = TrainConfig(latent_dim=4, hidden=16, decoder_activation="linear")
    enc, dec = init_autoencoder(cfg, 14)
    x = np.random.default_rng(15).standard_normal((5, FRAME))
    assert ep_error(enc, dec, x) < 1e-12  # zero biases: D(s z) = s D(z)


def test_training_deterministic(tiny):
    x0, _, cfg, enc, dec, _ = tiny
    enc2, dec2, _, _ = train_ep_vae(x0, cfg)
    assert np.array_equal(enc.flat(), enc2.flat()) and np.array_equal(dec.flat(), dec2.flat())


def test_joint_prior_freezes_decoder_and_clean_encoder(tiny):
    x0, x1, cfg, enc, dec, disc = tiny
    enc_before, dec_before = enc.flat().copy(), dec.flat().copy()
    enc_np, _ = train_joint_prior(enc, dec, enc, x0, x1, cfg, disc)
    assert np.array_equal(enc.flat(), enc_before) and np.array_equal(dec.flat(), dec_before)
    assert not np.array_equal(enc_np.flat(), enc_before)


@pytest.mark.parametrize("variant", [v.value for v in Variant])
def test_finetune_freeze_contracts(tiny, variant):
    x0, x1, cfg, enc, dec, disc = tiny
    from latentbridge.toynet.train import encode_mean
    z0, z1 = encode_mean(enc, x0), encode_mean(enc, x1)
    sched = NoiseSchedule.brownian(1.0)
    pred, _ = train_bridge(z0, z1, sched, cfg, hidden=(16,))
    pred_before, dec_before = pred.net.flat().copy(), dec.flat().copy()
    pred2, dec2, _ = finetune_perceptual(pred, dec, z0, z1, x0, sched, cfg.replace(steps=5), variant, disc)
    assert np.array_equal(pred.net.flat(), pred_before) and np.array_equal(dec.flat(), dec_before)
    assert not np.array_equal(pred2.net.flat(), pred_before)
    v = Variant.parse(variant)
    assert np.array_equal(dec2.flat(), dec_before) == (not v.trains_decoder)


def test_variant_parsing():
    assert Variant.parse("RHAF-B") is Variant.RHAF_BRIDGE_ONLY
    with pytest.raises(ValueError):
        Variant.parse("XYZ")


def test_preflight_all_stages_pass(tiny):
    x0, x1, cfg, enc, dec, disc = tiny
    pred = BridgePredictor.init(cfg.latent_dim, (16,), 16)
    errs = preflight(enc, dec, disc, pred, x0, x1, NoiseSchedule.gmax_linear(), cfg, max_entries=500)
    assert len(errs) >= 8
    assert max(errs.values()) < 1e-4, errs


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)


def test_learning_rate_schedules():
    const = TrainConfig(steps=100, learning_rate=0.2)
    assert const.lr_at(0) == const.lr_at(99) == 0.2
    cos = const.replace(lr_schedule="cosine")
    assert cos.lr_at(0) == pytest.approx(0.2) and cos.lr_at(50) == pytest.approx(0.1)
    assert cos.lr_at(100) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        TrainConfig(lr_schedule="step")


def test_decoder_output_layer_starts_small():
    cfg = TrainConfig(hidden=32, latent_dim=4)
    _, dec = init_autoencoder(cfg, 0)
    ref = ToyNet.init([4, 32, FRAME], "relu", np.random.default_rng(99))
    assert dec.activations == ["relu"]
    assert np.std(dec.params[-2]) < 0.05 * np.std(ref.params[-2])
