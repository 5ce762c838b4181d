from pathlib import Path

import numpy as np
import pytest

from covsteer import load_problem
from covsteer.sdp import solve_cs

ROOT = Path(__file__).resolve().parents[1]
PLANAR = ROOT / "configs" / "planar.yaml"


def random_spd(rng, d, lo=0.2, hi=5.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(lo, hi, d)) @ Q.T


@pytest.fixture(scope="session")
def planar():
    return load_problem(PLANAR.read_text())


@pytest.fixture(scope="session")
def planar_solution(planar):
    return solve_cs(planar)
