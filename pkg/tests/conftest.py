"""Session-scoped synthetic logs shared across test modules, plus a CLI runner.

The heavy logs (2-minute wander, 20-episode approach) are generated once and
reused by both the unit tests and the acceptance suite.
"""

from __future__ import annotations

import os
import subprocess
import sys

import pytest

from flowcast import simulator
from flowcast.core import write_stream_log


@pytest.fixture(scope="session")
def wander_log():
    """Standard 2-minute wander with a 6-frame actuation delay."""
    return simulator.run(simulator.wander_scenario(seed=3, duration_s=120.0, delay=6))


@pytest.fixture(scope="session")
def wander_log_no_delay():
    return simulator.run(simulator.wander_scenario(seed=3, duration_s=120.0, delay=0))


@pytest.fixture(scope="session")
def approach_log():
    """Twenty drive-into-the-wall episodes with a 6-frame delay."""
    return simulator.run(simulator.approach_scenario(seed=11, episodes=20, delay=6))


@pytest.fixture(scope="session")
def quiet_log():
    """Bump-free wander used for false-alarm rates."""
    log = simulator.run(simulator.wander_scenario(seed=12, duration_s=120.0, delay=6))
    assert not any(f.bump for f in log.frames), "false-alarm log must be bump-free"
    return log


@pytest.fixture(scope="session")
def small_log():
    """Short wander with a 2-frame delay; fast enough for unit-level checks."""
    return simulator.run(simulator.wander_scenario(seed=6, duration_s=50.0, delay=2))


@pytest.fixture(scope="session")
def tiny_log():
    """A couple of drive cycles; for format and CLI smoke tests."""
    return simulator.run(simulator.wander_scenario(seed=4, duration_s=12.0, delay=2))


@pytest.fixture(scope="session")
def tiny_approach_log():
    return simulator.run(simulator.approach_scenario(seed=9, episodes=3, delay=2))


@pytest.fixture(scope="session")
def cli_logs(tmp_path_factory, tiny_log, tiny_approach_log):
    """The tiny logs written to disk once for CLI commands to consume."""
    root = tmp_path_factory.mktemp("cli-logs")
    paths = {
        "wander": str(root / "wander.log"),
        "approach": str(root / "approach.log"),
    }
    write_stream_log(tiny_log, paths["wander"])
    write_stream_log(tiny_approach_log, paths["approach"])
    return paths


@pytest.fixture(scope="session")
def run_cli():
    """Run the installed CLI in a subprocess; returns CompletedProcess."""

    def _run(*args, env=None):
        merged = dict(os.environ)
        if env:
            merged.update(env)
        return subprocess.run(
            [sys.executable, "-m", "flowcast", *[str(a) for a in args]],
            capture_output=True,
            text=True,
            env=merged,
        )

    return _run
