"""INI configuration with dotted sections.

Recognised sections::

    [schedule]        kind, g0, g1, t_min
    [degrade]         DegradationSpec fields for the ``degrade`` command
    [corpus]          n_train, n_heldout, duration_s
    [corpus.degrade]  DegradationSpec fields for the toy corpus
    [sampler]         mode, n_steps, t_min
    [train]           TrainConfig fields shared by every stage
    [train.vae] [train.prior] [train.bridge] [train.finetune]
                      per-stage TrainConfig overrides

Values are parsed according to the type of the field's default; tuples are
comma-separated.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .degrade import DegradationSpec
from .errors import ConfigError
from .sampler import SamplerConfig, SamplerMode
from .schedule import NoiseSchedule, ScheduleKind
from .toynet.corpus import toy_degradation_spec
from .toynet.train import TrainConfig

STAGES = ("vae", "prior", "bridge", "finetune")


@dataclass
class CorpusConfig:
    n_train: int = 400
    n_heldout: int = 50
    duration_s: float = 1.0


# stage defaults tuned for the 8 kHz toy corpus
STAGE_DEFAULTS = {
    "vae": dict(steps=4000, learning_rate=0.02),
    "prior": dict(steps=3000, learning_rate=0.02),
    "bridge": dict(steps=6000, learning_rate=0.05),
    "finetune": dict(steps=1000, learning_rate=0.01),
}


@dataclass
class RunConfig:
    schedule: NoiseSchedule = field(default_factory=lambda: NoiseSchedule.brownian(1.0))
    degrade: DegradationSpec = field(default_factory=DegradationSpec)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(SamplerMode.ODE, 4))
    train: dict = field(default_factory=lambda: {k: TrainConfig(**v) for k, v in STAGE_DEFAULTS.items()})
    corpus_degrade: DegradationSpec = field(default_factory=toy_degradation_spec)

    def stage(self, name: str) -> TrainConfig:
        return self.train[name]

    def with_seed(self, seed: int) -> "RunConfig":
        train = {k: v.replace(seed=seed) for k, v in self.train.items()}
        return replace(self, train=train)

    def to_ini(self) -> str:
        """Fully resolved configuration; ``load_config`` on it round-trips."""
        cp = configparser.ConfigParser()
        s = self.schedule
        cp["schedule"] = {"kind": s.kind.value, "g0": repr(s.g0), "g1": repr(s.g1), "t_min": repr(s.t_min)}
        cp["degrade"] = {k: _fmt(v) for k, v in self.degrade.to_dict().items()}
        cp["corpus"] = {f.name: _fmt(getattr(self.corpus, f.name)) for f in fields(CorpusConfig)}
        cp["corpus.degrade"] = {k: _fmt(v) for k, v in self.corpus_degrade.to_dict().items()}
        sm = self.sampler
        cp["sampler"] = {"mode": sm.mode.value, "n_steps": str(sm.n_steps), "t_min": repr(sm.t_min)}
        for name in STAGES:
            cfg = self.train[name]
            cp[f"train.{name}"] = {f.name: _fmt(getattr(cfg, f.name)) for f in fields(TrainConfig)}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
            lines.append("")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, like, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            elem = like[0] if like else float
            return tuple(_parse(p, elem, key) for p in raw.split(",") if p.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}: {exc}") from None


def _apply(section, defaults: dict, sec_name: str) -> dict:
    out = {}
    for key, raw in section.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {sec_name}.{key}; valid keys: {', '.join(sorted(defaults))}")
        out[key] = _parse(raw, defaults[key], f"{sec_name}.{key}")
    return out


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    valid = ["schedule", "degrade", "corpus", "corpus.degrade", "sampler", "train"] + [f"train.{s}" for s in STAGES]
    for sec in cp.sections():
        if sec not in valid:
            raise ConfigError(f"unknown section [{sec}]; valid sections: {', '.join(valid)}")
    rc = RunConfig()
    if cp.has_section("schedule"):
        base = {"kind": rc.schedule.kind.value, "g0": rc.schedule.g0, "g1": rc.schedule.g1, "t_min": rc.schedule.t_min}
        vals = _apply(cp["schedule"], base, "schedule")
        kind = ScheduleKind(vals.pop("kind", base["kind"]))
        if kind is ScheduleKind.GMAX_LINEAR and "g0" not in vals:
            base.update(g0=0.01, g1=20.0)
        base.update(vals)
        base["kind"] = kind
        rc.schedule = NoiseSchedule(**base)
    if cp.has_section("degrade"):
        d = rc.degrade.to_dict()
        d.update(_apply(cp["degrade"], d, "degrade"))
        rc.degrade = DegradationSpec.from_dict(d)
    if cp.has_section("corpus.degrade"):
        d = rc.corpus_degrade.to_dict()
        d.update(_apply(cp["corpus.degrade"], d, "corpus.degrade"))
        rc.corpus_degrade = DegradationSpec.from_dict(d)
    if cp.has_section("corpus"):
        d = {f.name: getattr(rc.corpus, f.name) for f in fields(CorpusConfig)}
        d.update(_apply(cp["corpus"], d, "corpus"))
        rc.corpus = CorpusConfig(**d)
    if cp.has_section("sampler"):
        base = {"mode": rc.sampler.mode.value, "n_steps": rc.sampler.n_steps, "t_min": rc.sampler.t_min}
        base.update(_apply(cp["sampler"], base, "sampler"))
        rc.sampler = SamplerConfig(**base)
    tdefaults = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    shared = _apply(cp["train"], tdefaults, "train") if cp.has_section("train") else {}
    for name in STAGES:
        kw = {**STAGE_DEFAULTS[name], **shared}
        if cp.has_section(f"train.{name}"):
            kw.update(_apply(cp[f"train.{name}"], tdefaults, f"train.{name}"))
        try:
            rc.train[name] = TrainConfig(**kw)
        except ValueError as exc:
            raise ConfigError(f"[train.{name}]: {exc}") from None
    return rc


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))
