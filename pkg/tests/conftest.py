import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import pytest

from gridse.network import build_ybus
from gridse.powerflow import solve_power_flow
from gridse.scenario import load_case, resolve_case_dir


@pytest.fixture(scope="session")
def ieee14_bundle():
    return load_case(resolve_case_dir("ieee14"))


@pytest.fixture(scope="session")
def ieee14(ieee14_bundle):
    return ieee14_bundle.network


@pytest.fixture(scope="session")
def ieee14_ybus(ieee14):
    return build_ybus(ieee14)


@pytest.fixture(scope="session")
def ieee14_truth(ieee14):
    result = solve_power_flow(ieee14, tol=1e-10, max_iter=20)
    assert result.converged
    return result.state
