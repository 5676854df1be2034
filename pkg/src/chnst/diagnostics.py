"""Conserved quantities, dissipation and the per-step entropy ledger.

All integrals use the same quadrature rule and the same quadrature-point
compositions as the scheme, so the discrete balance laws hold up to the
Newton residual.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from . import model
from .fem import VectorField, space_for
from .model import ModelParams

if TYPE_CHECKING:
    from .scheme import State, StepConfig, StepReport


class Conserved(NamedTuple):
    mass: float
    kinetic: float
    internal: float
    total: float
    entropy: float


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    mass: float
    kinetic: float
    internal: float
    total_energy: float
    entropy: float
    tau_Dphys: float = 0.0
    Dnum_residual: float = 0.0
    Dnum_graddiv: float = 0.0
    Dnum_pressure: float = 0.0
    newton_iters: int = 0
    residual: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


CSV_COLUMNS = (
    "step", "time", "mass", "kinetic", "internal", "total_energy", "entropy",
    "tau_Dphys", "Dnum_residual", "Dnum_graddiv", "Dnum_pressure", "newton_iters", "residual",
)


def _quad(V, field):
    return V.at_quad(V.local(field.dofs))


def _grad(V, field):
    return V.grad(V.local(field.dofs))


def conserved_quantities(state: "State", params: ModelParams) -> Conserved:
    V = space_for(state.mesh)
    phi = _quad(V, state.phi)
    th = _quad(V, state.theta)
    u = _quad(V, state.u)
    gphi_sq = np.sum(_grad(V, state.phi) ** 2, axis=-1)[:, None]
    mass = V.integrate(phi)
    kinetic = V.integrate(0.5 * np.sum(u**2, axis=0))
    internal = V.integrate(model.internal_energy(phi, th))
    entropy = V.integrate(model.entropy_pointwise(phi, th, gphi_sq, params.gamma))
    return Conserved(mass, kinetic, internal, kinetic + internal, entropy)


def _sym_grad_sq(V, u: VectorField) -> np.ndarray:
    g = _grad(V, u)  # (2, C, 2): [k, c, j] = d_j u_k
    D = 0.5 * (g + np.swapaxes(g, 0, 2))
    return np.sum(D**2, axis=(0, 2))


def physical_dissipation(state_new: "State", u_mid: VectorField, params: ModelParams, eta_phi=None) -> float:
    """Viscous (theta-weighted) plus diffusive dissipation of one step.

    ``eta_phi`` is the phase field at which viscosity is evaluated; it defaults
    to the new phase field and should be the scheme's starred value.
    """
    V = space_for(state_new.mesh)
    th = _quad(V, state_new.theta)
    eta = model.viscosity(_quad(V, eta_phi if eta_phi is not None else state_new.phi), params=params)
    viscous = V.integrate(eta * th * _sym_grad_sq(V, u_mid)[:, None])
    gmu = _grad(V, state_new.mu)
    gth = _grad(V, state_new.theta)
    quad_form = (
        params.L11 * np.sum(gmu**2, axis=-1)
        - 2.0 * params.L12 * np.sum(gmu * gth, axis=-1)
        + params.L22 * np.sum(gth**2, axis=-1)
    )
    diffusive = V.integrate(np.broadcast_to(quad_form[:, None], V.wq.shape))
    return viscous + diffusive


def midpoint_velocity(U_old: "State", U_new: "State") -> VectorField:
    return VectorField.from_array(U_new.mesh, 0.5 * (U_old.u.dofs + U_new.u.dofs))


def entropy_ledger(U_old: "State", U_new: "State", params: ModelParams, cfg: "StepConfig") -> dict:
    """Entropy balance of one step split into physical and numerical parts."""
    V = space_for(U_new.mesh)
    S_old = conserved_quantities(U_old, params).entropy
    S_new = conserved_quantities(U_new, params).entropy
    um = midpoint_velocity(U_old, U_new)
    star = U_old if cfg.star_mode == "explicit" else U_new
    tau_dphys = cfg.tau * physical_dissipation(U_new, um, params, eta_phi=star.phi)

    th = _quad(V, U_new.theta)
    gum = _grad(V, um)
    div_sq = (gum[0, :, 0] + gum[1, :, 1]) ** 2
    gpi_sq = np.sum(_grad(V, U_new.pi) ** 2, axis=-1)
    graddiv = cfg.tau * params.epsilon * V.integrate(th * div_sq[:, None])
    pressure = cfg.tau * params.delta * U_new.mesh.h**2 * V.integrate(th * gpi_sq[:, None])
    dS = S_new - S_old
    return {
        "delta_entropy": dS,
        "tau_Dphys": tau_dphys,
        "Dnum_graddiv": graddiv,
        "Dnum_pressure": pressure,
        "Dnum_residual": dS - tau_dphys - graddiv - pressure,
    }


def initial_record(state: "State", params: ModelParams) -> DiagnosticsRecord:
    c = conserved_quantities(state, params)
    return DiagnosticsRecord(
        step=0, time=state.t, mass=c.mass, kinetic=c.kinetic, internal=c.internal,
        total_energy=c.total, entropy=c.entropy,
    )


def step_record(
    step: int, U_old: "State", U_new: "State", params: ModelParams, cfg: "StepConfig",
    report: "StepReport | None" = None,
) -> DiagnosticsRecord:
    rec = initial_record(U_new, params)
    rec.step = step
    ledger = entropy_ledger(U_old, U_new, params, cfg)
    rec.tau_Dphys = ledger["tau_Dphys"]
    rec.Dnum_residual = ledger["Dnum_residual"]
    rec.Dnum_graddiv = ledger["Dnum_graddiv"]
    rec.Dnum_pressure = ledger["Dnum_pressure"]
    if report is not None:
        rec.newton_iters = report.iterations
        rec.residual = report.residual_norm
    return rec
