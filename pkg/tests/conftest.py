"""Shared trajectories and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import pytest

from chnst.harness import convergence_params, preset_initial_state, run_convergence
from chnst.mesh import build_periodic_mesh
from chnst.scheme import StepConfig, run, with_params

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> bool:
    """Remember one acceptance verdict; the summary hook prints it."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}  {detail}".rstrip())
    print(ACCEPTANCE_LINES[-1])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _trajectory(star_mode="explicit", steps=100, n=16, **changes):
    params = with_params(convergence_params(), **changes)
    cfg = StepConfig(tau=1e-3, newton_tol=1e-12, star_mode=star_mode)
    U0 = preset_initial_state("convergence", build_periodic_mesh(n), params)
    return run(U0, params, cfg, steps * cfg.tau)


@pytest.fixture(scope="session")
def traj_explicit():
    return _trajectory("explicit")


@pytest.fixture(scope="session")
def traj_implicit():
    return _trajectory("implicit")


@pytest.fixture(scope="session")
def traj_unstabilized():
    return _trajectory("explicit", epsilon=0.0, delta=0.0)


@pytest.fixture(scope="session")
def convergence_table():
    return run_convergence([2, 3, 4, 5], tau=1e-3, T=0.1)
