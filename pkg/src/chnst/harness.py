"""Two-grid convergence study on nested periodic meshes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fem import ErrorNorms, VectorField, h1_l2_error_norms, interpolate_nodal
from .mesh import PeriodicMesh, build_periodic_mesh, nesting_between
from .model import ModelParams
from .scheme import State, StepConfig, StepFailure, make_state, run

log = logging.getLogger(__name__)

PRESETS = ("convergence", "constant")
ERROR_COLUMNS = ("e_a", "e_b", "e_mu", "e_u", "e_theta")


class HarnessError(RuntimeError):
    pass


def convergence_params() -> ModelParams:
    """Parameters of the 2D convergence experiment."""
    return ModelParams(gamma=1e-3, epsilon=10.0, delta=1.0, L11=1e-2, L12=0.0, L22=1e-2,
                       eta0=1e-3, eta1=1.0 / 40.0)


def _wave(x, y):
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def preset_initial_state(name: str, mesh: PeriodicMesh, params: ModelParams | None = None) -> State:
    """Nodal interpolant of a named initial condition.

    ``"convergence"``: phi = 0.4 + 0.2 s, theta = 1 + 0.2 s with
    s = sin(2 pi x) sin(2 pi y), and a divergence-free velocity of amplitude 1e-2.
    ``"constant"``: phi = 0.4, theta = 1, u = 0.
    """
    params = params or convergence_params()
    if name == "convergence":
        phi = interpolate_nodal(lambda x, y: 0.4 + 0.2 * _wave(x, y), mesh)
        theta = interpolate_nodal(lambda x, y: 1.0 + 0.2 * _wave(x, y), mesh)
        ux = interpolate_nodal(lambda x, y: -1e-2 * np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y), mesh)
        uy = interpolate_nodal(lambda x, y: 1e-2 * np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2, mesh)
    elif name == "constant":
        phi = interpolate_nodal(lambda x, y: 0.4, mesh)
        theta = interpolate_nodal(lambda x, y: 1.0, mesh)
        ux = interpolate_nodal(lambda x, y: 0.0, mesh)
        uy = interpolate_nodal(lambda x, y: 0.0, mesh)
    else:
        raise HarnessError(f"unknown preset {name!r}; choose from {PRESETS}")
    return make_state(phi, theta, VectorField(ux, uy), params)


def eoc(coarse_err: float, fine_err: float) -> float | None:
    """log2 ratio of consecutive errors; None when undefined."""
    if not (coarse_err > 0 and fine_err > 0):
        return None
    return math.log2(coarse_err / fine_err)


@dataclass
class ConvergenceRow:
    k: int
    h: float
    errors: ErrorNorms
    eoc: dict[str, float | None] = field(default_factory=dict)


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]

    def column(self, name: str) -> list[float]:
        return [getattr(r.errors, name) for r in self.rows]

    def eoc_column(self, name: str) -> list[float | None]:
        return [r.eoc.get(name) for r in self.rows]


def fill_eoc(rows: list[ConvergenceRow]) -> None:
    for prev, cur in zip(rows, rows[1:]):
        cur.eoc = {c: eoc(getattr(prev.errors, c), getattr(cur.errors, c)) for c in ERROR_COLUMNS}
    if rows:
        rows[0].eoc = {c: None for c in ERROR_COLUMNS}


def solve_level(level: int, params: ModelParams, cfg: StepConfig, T: float, preset: str) -> State:
    mesh = build_periodic_mesh(2**level, level=level)
    try:
        return run(preset_initial_state(preset, mesh, params), params, cfg, T).final
    except StepFailure as exc:
        raise HarnessError(f"level {level}: {exc}") from exc


def run_convergence(
    levels: list[int],
    tau: float = 1e-3,
    T: float = 0.1,
    params: ModelParams | None = None,
    preset: str = "convergence",
    star_mode: str = "explicit",
    cfg: StepConfig | None = None,
) -> ConvergenceTable:
    """Row ``k`` compares the solution on h = 2^-k with the one on h = 2^-(k+1)."""
    levels = sorted(levels)
    if not levels or any(b - a != 1 for a, b in zip(levels, levels[1:])):
        raise HarnessError(f"levels must be consecutive, got {levels}")
    params = params or convergence_params()
    cfg = cfg or StepConfig(tau=tau, star_mode=star_mode)
    solutions: dict[int, State] = {}
    for k in levels + [levels[-1] + 1]:
        log.info("solving level %d (n=%d)", k, 2**k)
        solutions[k] = solve_level(k, params, cfg, T, preset)
    rows = []
    for k in levels:
        coarse, fine = solutions[k], solutions[k + 1]
        nest = nesting_between(coarse.mesh, fine.mesh)
        rows.append(ConvergenceRow(k=k, h=2.0**-k, errors=h1_l2_error_norms(fine, coarse, nest)))
    fill_eoc(rows)
    return ConvergenceTable(rows)
