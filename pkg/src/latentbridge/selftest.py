"""Fast invariant suite behind the ``selftest`` subcommand.

Each check returns ``(passed, detail)``; ``run_selftest`` reports one line
per property and returns True when all pass.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from .analysis import GaussianFit, lsd, snr_db, w2_gaussian, w2_matrix
from .audio_io import read_wav, write_wav
from .bridge import BridgeBatch, BridgePredictor, bridge_loss, interpolate, interpolate_mean_var
from .degrade import DegradationSpec, apply_ops, degrade, mix_at_snr, op_clip
from .dsp.buffer import AudioBuffer
from .dsp.filters import FAMILIES, design_lowpass
from .dsp.resample import resample_array
from .dsp.spectral import mrstft_array
from .sampler import SamplerConfig, SamplerMode, ode_step, sample_trajectory
from .schedule import NoiseSchedule, verify_schedule
from .toynet import checkpoint
from .toynet.net import ToyNet, grad_check


def check_schedule_closed_forms():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        worst = max(worst, verify_schedule(NoiseSchedule.brownian(rng.uniform(0.1, 3.0))))
        worst = max(worst, verify_schedule(NoiseSchedule.gmax_linear(rng.uniform(0.0, 1.0), rng.uniform(1.0, 30.0))))
    return worst < 1e-6, f"max quadrature deviation {worst:.2e}"


def check_bridge_endpoints():
    rng = np.random.default_rng(1)
    z0, z1 = rng.standard_normal(8), rng.standard_normal(8)
    sched = NoiseSchedule.gmax_linear()
    a = interpolate(z0, z1, 0.0, sched, rng)
    b = interpolate(z0, z1, 1.0, sched, rng)
    ok = np.array_equal(a, z0) and np.array_equal(b, z1)
    return ok, "z_0 and z_1 reproduced bit-exactly" if ok else "endpoint mismatch"


def check_bridge_moments():
    rng = np.random.default_rng(2)
    sched = NoiseSchedule.brownian(1.0)
    n = 20000
    z0, z1 = np.zeros((n, 1)), np.ones((n, 1))
    t = 0.3
    zt = interpolate(z0, z1, t, sched, rng)
    mean, var = interpolate_mean_var(z0[:1], z1[:1], t, sched)
    se = np.sqrt(float(var) / n)
    ok = abs(zt.mean() - mean[0, 0]) < 4 * se
    return ok, f"mean error {abs(zt.mean() - mean[0, 0]):.2e} (4 SE = {4 * se:.2e})"


def check_sampler_oracle():
    rng = np.random.default_rng(3)
    z0, z1 = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
    oracle = lambda z, s, c: z0
    sched = NoiseSchedule.gmax_linear()
    errs = []
    for mode in (SamplerMode.SDE, SamplerMode.ODE):
        out, _ = sample_trajectory(oracle, z1, SamplerConfig(mode, 1), sched, rng)
        errs.append(np.max(np.abs(out - z0)))
    return max(errs) <= 1e-12, f"1-step SDE/ODE error {max(errs):.1e}"


def check_ode_limit():
    rng = np.random.default_rng(4)
    sched = NoiseSchedule.brownian(1.0)
    z0h, z1 = rng.standard_normal(4), rng.standard_normal(4)
    s = 1.0 - 1e-6
    mean, _ = interpolate_mean_var(z0h, z1, s, sched)
    lim = ode_step(z1, 1.0, 0.5, z0h, z1, sched)
    near = ode_step(mean, s, 0.5, z0h, z1, sched)
    rel = np.max(np.abs(lim - near)) / np.max(np.abs(lim))
    return rel < 1e-4, f"relative gap {rel:.1e}"


def check_clip_and_snr():
    rng = np.random.default_rng(5)
    x = AudioBuffer(rng.standard_normal(4000), 8000)
    peak = np.max(np.abs(x.samples))
    ok = all(np.isclose(np.max(np.abs(op_clip(x, r).samples)), r * peak, rtol=0, atol=1e-15) for r in (0.06, 0.9))
    worst = 0.0
    for _ in range(20):
        target = rng.uniform(-5, 20)
        noise = AudioBuffer(rng.standard_normal(4000), 8000)
        mix = mix_at_snr(x, noise, target)
        worst = max(worst, abs(snr_db(x, mix) - target))
    return ok and worst < 0.1, f"clip endpoints exact={ok}, worst SNR error {worst:.2e} dB"


def check_filters_stable():
    rng = np.random.default_rng(6)
    for _ in range(50):
        fam = FAMILIES[rng.integers(len(FAMILIES))]
        filt = design_lowpass(fam, int(rng.integers(2, 13)), rng.uniform(100, 20000), 48000)
        if not filt.is_stable():
            return False, f"unstable {fam.value} design"
    return True, "50 random designs stable"


def check_resample_roundtrip():
    fs = 48000
    t = np.arange(fs) / fs
    x = np.sin(2 * np.pi * 1000 * t)
    y = resample_array(resample_array(x, fs, 8000), 8000, fs)
    mid = slice(fs // 4, 3 * fs // 4)
    gain_db = 10 * np.log10(np.sum(y[mid] ** 2) / np.sum(x[mid] ** 2))
    return abs(gain_db) < 1.0, f"1 kHz passband gain {gain_db:+.3f} dB"


def check_degrade_replay():
    rng = np.random.default_rng(7)
    clean = AudioBuffer(0.3 * rng.standard_normal(8000), 8000)
    lq, ops = degrade(clean, DegradationSpec(), np.random.default_rng(11))
    again = apply_ops(clean, ops)
    return np.array_equal(lq.samples, again.samples), f"replayed {len(ops)} operators"


def check_w2():
    a = GaussianFit(np.zeros(2), np.eye(2))
    b = GaussianFit(np.array([3.0, 4.0]), np.eye(2))
    d1 = w2_gaussian(a, b)
    _, m = w2_matrix({"a": [[0, 0], [2, 0], [0, 2], [2, 2]] * 1, "b": [[1, 1], [3, 1], [1, 3], [3, 3]]})
    ok = abs(d1 - 5.0) < 1e-10 and np.allclose(m, m.T)
    return ok, f"3-4-5 case {d1:.12f}"


def check_metrics():
    rng = np.random.default_rng(8)
    x = rng.standard_normal(8192)
    ok = snr_db(x, x) == 300.0 and abs(lsd(x, 10 * x) - 1.0) < 1e-9 and mrstft_array(x, -x) < 1e-12
    return ok, "snr cap, lsd constant ratio, mrstft sign invariance"


def check_wav_roundtrip():
    rng = np.random.default_rng(9)
    buf = AudioBuffer(rng.uniform(-1, 1, 1000).astype(np.float32).astype(float), 8000)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.wav"
        write_wav(buf, p)
        back = read_wav(p)
        size_ok = p.stat().st_size == 44 + 4 * 1000
    ok = np.array_equal(back.samples, buf.samples) and size_ok
    return ok, "float32 round trip bit-identical, canonical size"


def check_checkpoint_and_grads():
    rng = np.random.default_rng(10)
    net = ToyNet.init([6, 5, 3], "tanh", rng)
    same = checkpoint.from_bytes(checkpoint.to_bytes(net))
    ok = np.array_equal(same.flat(), net.flat())
    pred = BridgePredictor.init(3, (16,), rng)
    sched = NoiseSchedule.brownian(1.0)
    batch = BridgeBatch.draw(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), sched, rng)
    err = grad_check(pred.net, lambda n: bridge_loss(pred, batch), 1e-5)
    return ok and err < 1e-4, f"checkpoint round trip {ok}, bridge-loss grad rel error {err:.1e}"


CHECKS = [
    ("schedule closed forms vs quadrature", check_schedule_closed_forms),
    ("bridge endpoints", check_bridge_endpoints),
    ("bridge marginal mean", check_bridge_moments),
    ("sampler perfect-oracle exactness", check_sampler_oracle),
    ("ODE s=1 limit", check_ode_limit),
    ("clip endpoints and SNR mixing", check_clip_and_snr),
    ("IIR stability", check_filters_stable),
    ("resample round trip", check_resample_roundtrip),
    ("degradation replay determinism", check_degrade_replay),
    ("W2 closed forms", check_w2),
    ("signal metrics", check_metrics),
    ("WAV round trip", check_wav_roundtrip),
    ("checkpoint and gradients", check_checkpoint_and_grads),
]


def run_selftest(report=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        report(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
