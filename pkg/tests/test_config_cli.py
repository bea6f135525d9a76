import csv
import json

import numpy as np
import pytest

from latentbridge import cli
from latentbridge.audio_io import read_wav, write_wav
from latentbridge.config import RunConfig, load_config, parse_config
from latentbridge.dsp.buffer import AudioBuffer
from latentbridge.errors import ConfigError
from latentbridge.sampler import SamplerMode
from latentbridge.schedule import ScheduleKind

TINY_INI = """
[corpus]
n_train = 3
n_heldout = 2
duration_s = 0.25

[train]
batch_size = 4
latent_dim = 4
hidden = 16
eval_every = 5

[train.vae]
steps = 15

[train.prior]
steps = 10

[train.bridge]
steps = 10

[train.finetune]
steps = 3
"""


# -- config ---------------------------------------------------------------------------

def test_defaults():
    rc = load_config(None)
    assert rc.schedule.kind is ScheduleKind.BROWNIAN_BRIDGE and rc.sampler.mode is SamplerMode.ODE
    assert rc.stage("vae").lambda_fm == 5.0


def test_overrides_and_stage_precedence():
    rc = parse_config("[train]\nlearning_rate = 0.3\n[train.bridge]\nlearning_rate = 0.1\n"
                      "[degrade]\nsnr_range_db = 0, 10\n[schedule]\nkind = gmax_linear\n")
    assert rc.stage("vae").learning_rate == 0.3 and rc.stage("bridge").learning_rate == 0.1
    assert rc.degrade.snr_range_db == (0.0, 10.0)
    assert rc.schedule.kind is ScheduleKind.GMAX_LINEAR


def test_corpus_degrade_section_is_separate():
    rc = load_config(None)
    assert rc.corpus_degrade.p_noise == 1.0 and rc.corpus_degrade.p_rev == 0.0
    assert rc.degrade.p_rev == 0.5  # the degrade command keeps the full-band defaults
    rc = parse_config("[corpus.degrade]\np_rev = 0.2\n")
    assert rc.corpus_degrade.p_rev == 0.2 and rc.degrade.p_rev == 0.5
    assert parse_config(rc.to_ini()).corpus_degrade == rc.corpus_degrade


def test_unknown_key_lists_valid():
    with pytest.raises(ConfigError, match="valid keys: .*steps"):
        parse_config("[train.vae]\nstepz = 3\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match="valid sections"):
        parse_config("[bogus]\na = 1\n")


def test_bad_value():
    with pytest.raises(ConfigError):
        parse_config("[train]\nsteps = many\n")


def test_to_ini_round_trip():
    rc = parse_config(TINY_INI).with_seed(7)
    again = parse_config(rc.to_ini())
    assert again.to_ini() == rc.to_ini()
    assert again.stage("finetune").seed == 7


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


# -- CLI --------------------------------------------------------------------------------

def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_selftest_exit_zero(capsys):
    code, out = run(capsys, "selftest")
    assert code == 0
    lines = out.out.strip().splitlines()
    assert len(lines) >= 10 and all(ln.startswith("PASS") for ln in lines)


def test_stage_order_error(tmp_path, capsys):
    code, out = run(capsys, "train-prior", "--out", tmp_path)
    assert code == 2 and "run `train-vae` first" in out.err


def test_stage_order_names_required_stage(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text(TINY_INI)
    assert run(capsys, "make-toy-corpus", "--config", ini, "--out", tmp_path)[0] == 0
    code, out = run(capsys, "train-bridge", "--config", ini, "--out", tmp_path)
    assert code == 2 and "run `train-vae` first" in out.err


def test_unknown_config_key_exit(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[train]\nnope = 1\n")
    code, out = run(capsys, "selftest", "--config", ini)
    assert code == 2 and "valid keys" in out.err


def test_degrade_command(tmp_path, capsys):
    wav = tmp_path / "in.wav"
    write_wav(AudioBuffer(0.3 * np.random.default_rng(0).standard_normal(8000), 16000), wav)
    code, _ = run(capsys, "degrade", wav, "--out", tmp_path / "run", "--seed", 3)
    d = tmp_path / "run" / "degrade"
    assert code == 0
    lq = read_wav(d / "in_lq.wav")
    assert len(lq) == 8000 and lq.sample_rate == 16000
    assert json.loads((d / "in_ops.json").read_text())["ops"] is not None
    assert (d / "seed.txt").read_text().strip() == "3" and (d / "config.ini").is_file()


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ini = root / "tiny.ini"
    ini.write_text(TINY_INI)
    out = root / "run"
    for cmd in ("make-toy-corpus", "train-vae", "train-prior", "train-bridge", "finetune"):
        assert cli.main([cmd, "--config", str(ini), "--out", str(out)]) == 0, cmd
    return ini, out


def test_pipeline_artifacts(tiny_run):
    _, out = tiny_run
    names = {p.name for p in (out / "models").iterdir()}
    assert {"encoder.vbtk", "decoder.vbtk", "encoder_np.vbtk", "predictor.vbtk",
            "predictor_ft.vbtk", "decoder_ft.vbtk"} <= names
    for cmd in ("train-vae", "train-prior", "train-bridge", "finetune"):
        assert (out / cmd / "config.ini").is_file() and (out / cmd / "history.csv").is_file()


def test_train_vae_writes_preflight(tiny_run):
    _, out = tiny_run
    errs = json.loads((out / "train-vae" / "preflight.json").read_text())
    assert "finetune_RHAF/decoder" in errs and "discriminator" in errs
    assert max(errs.values()) < 1e-4


def test_failed_preflight_blocks_training(tiny_run, tmp_path, capsys, monkeypatch):
    ini, out = tiny_run
    monkeypatch.setattr(cli.P, "preflight", lambda *a, **k: {"bridge/predictor": 3e-2})
    code, io = run(capsys, "train-vae", "--config", ini, "--out", tmp_path, "--corpus", out / "corpus")
    assert code == 1
    assert "bridge/predictor" in io.err
    assert not (tmp_path / "models" / "encoder.vbtk").exists()


def test_cli_deterministic(tiny_run, tmp_path):
    ini, out = tiny_run
    other = tmp_path / "again"
    for cmd in ("make-toy-corpus", "train-vae"):
        assert cli.main([cmd, "--config", str(ini), "--out", str(other)]) == 0
    for f in ("encoder.vbtk", "decoder.vbtk"):
        assert (other / "models" / f).read_bytes() == (out / "models" / f).read_bytes()


def test_restore_command(tiny_run, capsys):
    ini, out = tiny_run
    src = out / "corpus" / "heldout" / "lq_0000.wav"
    dest = out / "restored.wav"
    code, _ = run(capsys, "restore", src, "--config", ini, "--out", out, "--output", dest, "--steps", 2)
    assert code == 0
    y, x = read_wav(dest), read_wav(src)
    assert len(y) == len(x) and y.sample_rate == x.sample_rate and np.all(np.isfinite(y.samples))


def test_sweep_steps_eight_rows(tiny_run, capsys):
    ini, out = tiny_run
    assert run(capsys, "sweep-steps", "--config", ini, "--out", out)[0] == 0
    path = out / "sweep-steps" / "sweep.csv"
    assert path.read_text().startswith("# toy-scale metrics")
    rows = cli.read_sweep_csv(path)
    assert [int(r["steps"]) for r in rows] == [1, 2, 3, 4, 5, 10, 20, 50]
    assert set(rows[0]) == {"steps", "snr_db", "lsd", "mrstft_distance"}


def test_analyze_priors(tiny_run, capsys):
    ini, out = tiny_run
    assert run(capsys, "analyze-priors", "--config", ini, "--out", out)[0] == 0
    d = out / "analyze-priors"
    summary = json.loads((d / "summary.json").read_text())
    assert set(summary) == {"pre", "post"}
    with open(d / "w2_pre.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == len(rows[0]) and len(rows) >= 4  # header + at least three groups


def test_ablate_single_variant(tiny_run, capsys):
    ini, out = tiny_run
    assert run(capsys, "ablate-finetune", "--config", ini, "--out", out, "--variant", "Cont")[0] == 0
    with open(out / "ablate-finetune" / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["variant"] == "Cont" and rows[0]["decoder_changed"] == "0"
    assert rows[0]["predictor_changed"] == "1"
