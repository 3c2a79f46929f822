"""Shared long-running fixtures: end-to-end CLI runs reused by several test modules."""

import json
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


# acceptance verdict lines, repeated in the terminal summary so they show even with output capture on
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)


@dataclass
class CliRun:
    code: int
    stdout: str
    stderr: str
    seconds: float
    out: Path

    def json(self, name):
        return json.loads((self.out / name).read_text())


def run_cli(*args, out=None, env=None, timeout=1800) -> CliRun:
    argv = [sys.executable, "-m", "taylorgrid.cli", *map(str, args)]
    if out is not None:
        argv += ["--out", str(out)]
    t0 = time.perf_counter()
    p = subprocess.run(argv, capture_output=True, text=True, env=env, timeout=timeout)
    return CliRun(p.returncode, p.stdout, p.stderr, time.perf_counter() - t0, Path(out) if out else None)


@pytest.fixture(scope="session")
def sphere_cli_runs(tmp_path_factory):
    """Two deterministic 64^3 order-2 sphere fits (50k samples, 1500 progressive steps)."""
    base = tmp_path_factory.mktemp("sphere")
    runs = []
    for name in ("a", "b"):
        r = run_cli("fit-sdf", "--deterministic", "--order", 2, "--resolution", 64, "--steps", 1500,
                    "--data.n_samples", 50000, "--loss.lambda1", 1e-4, "--loss.lambda2", 2e-5, out=base / name)
        assert r.code == 0, r.stderr
        runs.append(r)
    return runs


@pytest.fixture(scope="session")
def nerf_cli_runs(tmp_path_factory):
    """Toy three-sphere scene (20 views, 64x64) fitted with order-2 and order-0 density grids."""
    base = tmp_path_factory.mktemp("nerf")
    runs = {}
    for order in (2, 0):
        r = run_cli("fit-nerf", "--order", order, "--resolution", 64, "--scene.views", 20, "--scene.size", 64,
                    out=base / f"order{order}")
        assert r.code == 0, r.stderr
        runs[order] = r
    return runs
