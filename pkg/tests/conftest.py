import contextlib
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from latentbridge import cli

TRAINING_COMMANDS = ("make-toy-corpus", "train-vae", "train-prior", "train-bridge", "finetune")

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- trained toy pipeline shared by the slow tests ----------------------------------------

@dataclass
class CliRun:
    out: Path
    cpu_s: dict = field(default_factory=dict)
    wall_s: dict = field(default_factory=dict)
    logs: dict = field(default_factory=dict)

    def run(self, *argv) -> str:
        """Run one subcommand against this run directory; returns its stdout."""
        name = argv[0]
        buf = io.StringIO()
        cpu, wall = time.process_time(), time.perf_counter()
        with contextlib.redirect_stdout(buf):
            code = cli.main([*map(str, argv), "--out", str(self.out)])
        self.cpu_s[name] = time.process_time() - cpu
        self.wall_s[name] = time.perf_counter() - wall
        self.logs[name] = buf.getvalue()
        if code not in (0, None):
            pytest.fail(f"{name} exited with status {code}:\n{buf.getvalue()}")
        return buf.getvalue()

    @property
    def models(self) -> Path:
        return self.out / "models"

    @property
    def corpus(self) -> Path:
        return self.out / "corpus"


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory) -> CliRun:
    """All four training stages with the default config and seed 0, through the CLI."""
    run = CliRun(tmp_path_factory.mktemp("toy_run"))
    for cmd in TRAINING_COMMANDS:
        run.run(cmd)
    return run


@pytest.fixture(scope="session")
def ablation_rows(trained_run) -> list:
    import csv
    trained_run.run("ablate-finetune")
    with open(trained_run.out / "ablate-finetune" / "ablation.csv", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- acceptance verdicts ------------------------------------------------------------------

def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """``verdict(n, title, ok, detail)`` records one PASS/FAIL line and returns ok."""
    lines = request.config.stash[_VERDICTS]

    def record(n: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        lines.append((n, line))
        print(line)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
