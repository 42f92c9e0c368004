from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from nash_lab.grid import TensorGrid
from nash_lab.model import NashProblem, catalog_costs
from nash_lab.nash_solver import SolverConfig, solve_nash

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def small_solve(catalog: str, N: int = 2, n: int = 17, K: int = 40, sigma: float = 1.0,
                beta: float = 0.0, **params):
    costs = catalog_costs(catalog, N, **params)
    prob = NashProblem(N, costs, sigma=sigma, beta=beta)
    return solve_nash(prob, TensorGrid(N, n, 3.0), SolverConfig(time_steps=K))


@pytest.fixture(scope="session")
def zero_solution():
    return small_solve("zero")


@pytest.fixture(scope="session")
def linear_solution():
    return small_solve("linear")


@pytest.fixture(scope="session")
def coupled_solution():
    return small_solve("convex-quadratic-coupled", n=21, K=60)
