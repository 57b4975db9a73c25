import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from edvs import ingest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_problem_1d(n, boxes, rhs=None):
    matrix = ingest.generate_poisson_1d(n)
    dm = ingest.generate_box_partition(n, 1, boxes, 1)
    if rhs is None:
        rhs = np.ones(n)
    return ingest.ProblemInstance(matrix=matrix, rhs=np.asarray(rhs, float), decomposition=dm)


def make_problem_2d(nx, ny, bx, by, rhs=None):
    matrix = ingest.generate_poisson_2d(nx, ny)
    dm = ingest.generate_box_partition(nx, ny, bx, by)
    if rhs is None:
        rhs = np.ones(nx * ny)
    return ingest.ProblemInstance(matrix=matrix, rhs=np.asarray(rhs, float), decomposition=dm)


@pytest.fixture
def problem_1d5():
    """The 5-node tridiagonal case split in two subdomains sharing node 2."""
    rhs = np.zeros(5)
    rhs[2] = 1.0
    return make_problem_1d(5, 2, rhs=rhs)


def run_cli(args, cwd):
    """Run the CLI in a subprocess with the source tree on PYTHONPATH."""
    env = dict(os.environ)
    env["PYTHONPATH"] = str(SRC) + os.pathsep + env.get("PYTHONPATH", "")
    return subprocess.run(
        [sys.executable, "-m", "edvs", *args],
        cwd=cwd,
        env=env,
        capture_output=True,
        text=True,
        timeout=120,
    )
