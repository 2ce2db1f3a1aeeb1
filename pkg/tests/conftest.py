import contextlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from eegcf._backend import available_backends


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(available_backends()))
def backend(request, monkeypatch):
    """Run a test once per available candidate-scan backend."""
    import eegcf.cfsearch as cfs
    monkeypatch.setattr(cfs, "kernels", available_backends()[request.param])
    return request.param


TINY_CONFIG = {
    "synth": {"n_trials_per_class": 24, "n_channels": 4},
    "train": {"regimes": ["underfit", "well_trained", "overfit"], "epochs": 1, "widths": [4, 8, 8, 8]},
    "explain": {"overlays": 1, "require_correct": False},
}
PIPELINE = ("synth", "preprocess", "train", "explain", "evaluate", "report")


@contextlib.contextmanager
def working_dir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def run_cli(workdir, config, commands=PIPELINE, extra=()):
    """Run CLI commands inside ``workdir`` with a relative output dir; returns exit codes."""
    from eegcf.cli import main
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "cfg.json").write_text(json.dumps(config))
    codes = []
    with working_dir(workdir):
        for cmd in commands:
            codes.append(main([cmd, "--config", "cfg.json", "--output-dir", "out", "--workers", "2", *extra]))
    return codes


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir()) if p.is_file()}


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """The full CLI pipeline on a tiny synthetic dataset, run once per session."""
    work = tmp_path_factory.mktemp("tiny")
    codes = run_cli(work, TINY_CONFIG)
    assert codes == [0] * len(PIPELINE)
    return work


ACCEPTANCE = {}


def verdict(number, ok, detail):
    """Record one acceptance line and fail the calling test when ``ok`` is false."""
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
