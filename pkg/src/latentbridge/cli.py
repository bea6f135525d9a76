"""Command-line entry point.

Every training subcommand works inside one run directory (``--out``)::

    RUN/corpus/      train.jsonl, heldout.jsonl and their WAV files
    RUN/models/      VBTK checkpoints, one set per stage
    RUN/<command>/   config.ini, seed.txt and the command's own outputs
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline as P
from .analysis import off_diagonal_mean, w2_matrix
from .audio_io import read_wav, write_wav
from .config import RunConfig, load_config
from .degrade import degrade
from .errors import ConfigError, GradientCheckError, StageOrderError
from .sampler import SamplerConfig
from .toynet import checkpoint
from .toynet.corpus import make_toy_corpus, single_operator_groups
from .toynet.losses import perceptual_score
from .toynet.train import (Variant, decode, encode_mean, finetune_perceptual, train_bridge,
                           train_ep_vae, train_joint_prior)

STEP_GRID = (1, 2, 3, 4, 5, 10, 20, 50)
ABLATION_NAMES = ("Cont", "R", "RH", "RAF", "RHAF", "RHAF-B")


def _artifact_dir(args, rc: RunConfig, name: str) -> Path:
    d = Path(args.out) / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.ini").write_text(rc.to_ini(), encoding="utf-8")
    (d / "seed.txt").write_text(f"{args.seed}\n", encoding="utf-8")
    return d


def _models(args) -> Path:
    return Path(args.out) / "models"


def _corpus_dir(args) -> Path:
    return Path(args.corpus) if getattr(args, "corpus", None) else Path(args.out) / "corpus"


def _sampler(args, rc: RunConfig) -> SamplerConfig:
    mode = args.sampler or rc.sampler.mode
    steps = args.steps or rc.sampler.n_steps
    return SamplerConfig(mode, steps, rc.sampler.t_min)


def _load_latents(models: Path, x0, x1):
    enc = checkpoint.load(models / "encoder.vbtk")
    enc_np = checkpoint.load(models / "encoder_np.vbtk")
    return encode_mean(enc, x0), encode_mean(enc_np, x1)


# -- subcommands ------------------------------------------------------------------------

def cmd_degrade(args, rc):
    out = _artifact_dir(args, rc, "degrade")
    buf = read_wav(args.input)
    lq, ops = degrade(buf, rc.degrade, np.random.default_rng(args.seed))
    stem = Path(args.input).stem
    write_wav(lq, out / f"{stem}_lq.wav")
    (out / f"{stem}_ops.json").write_text(ops.to_json() + "\n", encoding="utf-8")
    print(f"{stem}: applied {', '.join(ops.names()) or 'nothing'}")


def cmd_make_toy_corpus(args, rc):
    _artifact_dir(args, rc, "make-toy-corpus")
    d = _corpus_dir(args)
    tr = make_toy_corpus(rc.corpus.n_train, args.seed, "train", rc.corpus_degrade, rc.corpus.duration_s)
    ho = make_toy_corpus(rc.corpus.n_heldout, args.seed, "heldout", rc.corpus_degrade, rc.corpus.duration_s)
    P.write_corpus(tr, d, args.seed, "train")
    P.write_corpus(ho, d, args.seed, "heldout")
    print(f"wrote {len(tr)} train and {len(ho)} held-out pairs to {d}")


def cmd_train_vae(args, rc):
    tr = P.read_corpus(_corpus_dir(args), "train")
    ho = P.read_corpus(_corpus_dir(args), "heldout")
    out = _artifact_dir(args, rc, "train-vae")
    x0, x1 = tr.paired_frames()
    errs = P.run_preflight(rc.train, rc.schedule, x0, x1)
    (out / "preflight.json").write_text(json.dumps(errs, indent=2) + "\n", encoding="utf-8")
    print(f"gradient pre-flight: max relative error {max(errs.values()):.2e}")
    cfg = rc.stage("vae")
    enc, dec, disc, hist = train_ep_vae(tr.clean_frames(), cfg, ep=not args.no_ep, heldout=ho.clean_frames())
    P.save_stage(_models(args), "vae", {"encoder.vbtk": enc, "decoder.vbtk": dec, "discriminator.vbtk": disc.net})
    hist.to_csv(out / "history.csv")
    print(f"held-out reconstruction mrstft: {hist.column('heldout_rec')[0]:.4f} -> {hist.column('heldout_rec')[-1]:.4f}")


def cmd_train_prior(args, rc):
    models = _models(args)
    P.require_stage(models, "vae")
    tr = P.read_corpus(_corpus_dir(args), "train")
    ho = P.read_corpus(_corpus_dir(args), "heldout")
    out = _artifact_dir(args, rc, "train-prior")
    enc = checkpoint.load(models / "encoder.vbtk")
    dec = checkpoint.load(models / "decoder.vbtk")
    disc = P.SpectralDiscriminator(checkpoint.load(models / "discriminator.vbtk"), enc.dims[0])
    x0, x1 = tr.paired_frames()
    enc_np, hist = train_joint_prior(enc, dec, enc, x0, x1, rc.stage("prior"), disc, ho.paired_frames())
    P.save_stage(models, "prior", {"encoder_np.vbtk": enc_np})
    hist.to_csv(out / "history.csv")
    d = hist.column("heldout_dist")
    print(f"held-out latent distance: {d[0]:.4f} -> {d[-1]:.4f}")


def cmd_train_bridge(args, rc):
    models = _models(args)
    P.require_stage(models, "vae")
    P.require_stage(models, "prior")
    tr = P.read_corpus(_corpus_dir(args), "train")
    out = _artifact_dir(args, rc, "train-bridge")
    z0, z1 = _load_latents(models, *tr.paired_frames())
    pred, hist = train_bridge(z0, z1, rc.schedule, rc.stage("bridge"))
    P.save_stage(models, "bridge", {"predictor.vbtk": pred.net})
    hist.to_csv(out / "history.csv")
    print(f"bridge loss: {hist.column('bridge')[0]:.4f} -> {hist.column('bridge')[-1]:.4f}")


def _finetune(args, rc, variant: str):
    models = _models(args)
    for stage in ("vae", "prior", "bridge"):
        P.require_stage(models, stage)
    tr = P.read_corpus(_corpus_dir(args), "train")
    x0, x1 = tr.paired_frames()
    z0, z1 = _load_latents(models, x0, x1)
    bundle = P.load_bundle(models, finetuned=False)
    pred, dec, hist = finetune_perceptual(bundle.predictor, bundle.decoder, z0, z1, x0, rc.schedule,
                                          rc.stage("finetune"), variant, bundle.discriminator)
    return bundle, pred, dec, hist


def cmd_finetune(args, rc):
    variant = Variant.parse(args.variant)
    bundle, pred, dec, hist = _finetune(args, rc, variant.value)
    out = _artifact_dir(args, rc, "finetune")
    P.save_stage(_models(args), "finetune", {"predictor_ft.vbtk": pred.net, "decoder_ft.vbtk": dec})
    hist.to_csv(out / "history.csv")
    print(f"fine-tuned with variant {variant.value}")


def cmd_restore(args, rc):
    bundle = P.load_bundle(_models(args))
    out = _artifact_dir(args, rc, "restore")
    buf = read_wav(args.input)
    y = P.restore(bundle, buf, _sampler(args, rc), rc.schedule, np.random.default_rng(args.seed))
    dest = Path(args.output) if args.output else out / f"{Path(args.input).stem}_restored.wav"
    write_wav(y, dest)
    print(f"wrote {dest}")


def cmd_analyze_priors(args, rc):
    models = _models(args)
    P.require_stage(models, "vae")
    P.require_stage(models, "prior")
    ho = P.read_corpus(_corpus_dir(args), "heldout")
    out = _artifact_dir(args, rc, "analyze-priors")
    enc = checkpoint.load(models / "encoder.vbtk")
    enc_np = checkpoint.load(models / "encoder_np.vbtk")
    groups = single_operator_groups(ho.clean, args.seed, ho.sample_rate)
    frame = enc.dims[0]
    summary = {}
    for tag, net in (("pre", enc), ("post", enc_np)):
        lat = {k: encode_mean(net, np.concatenate([P.to_frames(x, frame) for x in v])) for k, v in groups.items()}
        labels, m = w2_matrix(lat)
        write_matrix_csv(out / f"w2_{tag}.csv", labels, m)
        summary[tag] = off_diagonal_mean(m)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"mean off-diagonal W2: pre {summary['pre']:.4f}, post {summary['post']:.4f}")


def write_matrix_csv(path, labels, m) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(labels))
        for lab, row in zip(labels, m):
            w.writerow([lab] + [f"{v:.10g}" for v in row])


SWEEP_HEADER = ("# toy-scale metrics: snr_db, lsd and mrstft_distance stand in for PESQ/UTMOS, "
                "which need external neural scorers")


def sweep_rows(bundle, corpus, sampler_mode, sched, seed: int, grid=STEP_GRID) -> list:
    rows = []
    for n in grid:
        m = P.evaluate(bundle, corpus, SamplerConfig(sampler_mode, n), sched, seed)
        rows.append({"steps": n, "snr_db": m["snr_out"], "lsd": m["lsd_out"], "mrstft_distance": m["mrstft_out"]})
    return rows


def write_sweep_csv(path, rows, mode) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SWEEP_HEADER + "\n")
        fh.write(f"# sampler: {mode}\n")
        w = csv.DictWriter(fh, fieldnames=["steps", "snr_db", "lsd", "mrstft_distance"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def read_sweep_csv(path) -> list:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_sweep_steps(args, rc):
    bundle = P.load_bundle(_models(args))
    ho = P.read_corpus(_corpus_dir(args), "heldout")
    out = _artifact_dir(args, rc, "sweep-steps")
    mode = _sampler(args, rc).mode
    rows = sweep_rows(bundle, ho, mode, rc.schedule, args.seed)
    write_sweep_csv(out / "sweep.csv", rows, mode.value)
    for r in rows:
        print(f"steps={r['steps']:>2}  snr={r['snr_db']:.3f} dB  lsd={r['lsd']:.4f}  mrstft={r['mrstft_distance']:.4f}")


def cmd_ablate_finetune(args, rc):
    names = [args.variant] if args.variant else list(ABLATION_NAMES)
    out = _artifact_dir(args, rc, "ablate-finetune")
    ho = P.read_corpus(_corpus_dir(args), "heldout")
    sampler = _sampler(args, rc)
    rows = []
    for name in names:
        variant = Variant.parse(name)
        bundle, pred, dec, hist = _finetune(args, rc, variant.value)
        tuned = P.ModelBundle(bundle.encoder, dec, bundle.encoder_np, pred, bundle.discriminator, bundle.frame)
        m = P.evaluate(tuned, ho, sampler, rc.schedule, args.seed)
        y = np.stack([P.restore_array(tuned, d, sampler, rc.schedule, np.random.default_rng([args.seed, i]))
                      for i, d in enumerate(ho.degraded)])
        rows.append({
            "variant": name,
            "decoder_changed": int(not np.array_equal(dec.flat(), bundle.decoder.flat())),
            "predictor_changed": int(not np.array_equal(pred.net.flat(), bundle.predictor.net.flat())),
            "snr_db": m["snr_out"], "lsd": m["lsd_out"],
            "proxy_score": perceptual_score(y, np.stack(ho.clean)),
        })
        hist.to_csv(out / f"history_{name}.csv")
        print(f"{name}: snr={m['snr_out']:.3f} dB  lsd={m['lsd_out']:.4f}  decoder_changed={rows[-1]['decoder_changed']}")
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_selftest(args, rc):
    from .selftest import run_selftest
    ok = run_selftest(print)
    return 0 if ok else 1


COMMANDS = {
    "degrade": cmd_degrade,
    "make-toy-corpus": cmd_make_toy_corpus,
    "train-vae": cmd_train_vae,
    "train-prior": cmd_train_prior,
    "train-bridge": cmd_train_bridge,
    "finetune": cmd_finetune,
    "restore": cmd_restore,
    "analyze-priors": cmd_analyze_priors,
    "sweep-steps": cmd_sweep_steps,
    "ablate-finetune": cmd_ablate_finetune,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [schedule], [degrade], [train.*], ... sections")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="run", help="run directory (default: ./run)")
    common.add_argument("--corpus", help="corpus directory (default: RUN/corpus)")
    common.add_argument("--sampler", choices=["sde", "ode"])
    common.add_argument("--steps", type=int)

    ap = argparse.ArgumentParser(prog="latentbridge", description="Toy latent-bridge speech restoration.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("degrade", parents=[common], help="degrade one WAV file")
    p.add_argument("input")
    sub.add_parser("make-toy-corpus", parents=[common], help="synthesise the 8 kHz train/held-out corpus")
    p = sub.add_parser("train-vae", parents=[common], help="stage 1: energy-preserving autoencoder")
    p.add_argument("--no-ep", action="store_true", help="train the fixed-scale baseline instead")
    sub.add_parser("train-prior", parents=[common], help="stage 2: joint neural prior encoder")
    sub.add_parser("train-bridge", parents=[common], help="stage 3: latent bridge predictor")
    p = sub.add_parser("finetune", parents=[common], help="stage 4: perceptual joint fine-tuning")
    p.add_argument("--variant", default="RHAF", choices=ABLATION_NAMES + ("RHAF-BridgeOnly",))
    p = sub.add_parser("restore", parents=[common], help="restore one WAV file")
    p.add_argument("input")
    p.add_argument("--output", help="output WAV (default: RUN/restore/<stem>_restored.wav)")
    sub.add_parser("analyze-priors", parents=[common], help="W2 matrices before/after prior fine-tuning")
    sub.add_parser("sweep-steps", parents=[common], help="held-out metrics over the sampling-step grid")
    p = sub.add_parser("ablate-finetune", parents=[common], help="fine-tune loss-combination ablation")
    p.add_argument("--variant", choices=ABLATION_NAMES + ("RHAF-BridgeOnly",), help="default: all six")
    sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = load_config(args.config).with_seed(args.seed)
        status = COMMANDS[args.command](args, rc)
    except (StageOrderError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GradientCheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
