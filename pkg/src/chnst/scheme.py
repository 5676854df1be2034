"""Fully discrete structure-preserving scheme for the nonisothermal CHNS system.

Unknowns per time step are the P1 coefficients of ``(phi, mu, theta, u_x, u_y,
pi)`` at the new time level plus Lagrange multipliers fixing the pressure
gauge.  Equations are stacked in the same order: phase transport, chemical
potential, internal energy, two momentum components, stabilized
incompressibility, and the gauge constraints.

With pressure stabilization (``delta > 0``) the only gauge is the zero mean
of ``pi``.  Without it, equal-order P1 pressures also have spurious modes that
the discrete gradient cannot see; ``pi`` is then constrained to be orthogonal
to the whole kernel of that gradient (constants included), which leaves the
velocity and the other fields untouched.

Velocities enter at the midpoint ``u^{n+1/2}``; the "starred" coefficients
(``phi*, mu*, theta*, u*`` and the compositions built from them) are taken at
the old level (``star_mode="explicit"``) or the new one (``"implicit"``).

The Jacobian is assembled from element-local derivatives computed by
complex-step differentiation of the element residual.  Complex step has no
subtractive cancellation, so the local derivatives are exact to roundoff.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import model
from .fem import P1Space, ScalarField, VectorField, space_for
from .linsolve import PatternAssembler, SingularMatrixError, solve
from .mesh import MeshError, PeriodicMesh, nested_dissection_order
from .model import ModelError, ModelParams

log = logging.getLogger(__name__)

NFIELDS = 6
PHI, MU, THETA, UX, UY, PI = range(NFIELDS)
_CS_STEP = 1e-30


class PositivityError(ModelError):
    pass


class StepFailure(RuntimeError):
    def __init__(self, message: str, report: "StepReport | None" = None, step: int | None = None):
        super().__init__(message)
        self.report = report
        self.step = step


@dataclass(frozen=True, eq=False)
class State:
    phi: ScalarField
    mu: ScalarField
    theta: ScalarField
    u: VectorField
    pi: ScalarField
    t: float = 0.0

    def __post_init__(self):
        m = self.phi.mesh
        for f in (self.mu, self.theta, self.u, self.pi):
            if f.mesh is not m:
                raise MeshError("state fields live on different meshes")

    @property
    def mesh(self) -> PeriodicMesh:
        return self.phi.mesh

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.phi.dofs, self.mu.dofs, self.theta.dofs, self.u.x.dofs, self.u.y.dofs, self.pi.dofs]
        )

    @classmethod
    def from_vector(cls, mesh: PeriodicMesh, x: np.ndarray, t: float = 0.0) -> "State":
        N = mesh.num_dofs
        f = [ScalarField(mesh, x[k * N:(k + 1) * N]) for k in range(NFIELDS)]
        return cls(phi=f[PHI], mu=f[MU], theta=f[THETA], u=VectorField(f[UX], f[UY]), pi=f[PI], t=t)

    def fields(self) -> dict[str, np.ndarray]:
        return {
            "phi": self.phi.dofs,
            "mu": self.mu.dofs,
            "theta": self.theta.dofs,
            "pi": self.pi.dofs,
            "u": self.u.dofs,
        }


@dataclass(frozen=True)
class StepConfig:
    tau: float = 1e-3
    newton_tol: float = 1e-12
    newton_max: int = 50
    max_halvings: int = 20
    star_mode: str = "explicit"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"time step must be positive, got {self.tau}")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max < 1 or self.max_halvings < 0:
            raise ValueError("newton_max must be >= 1 and max_halvings >= 0")
        if self.star_mode not in ("explicit", "implicit"):
            raise ValueError(f"star_mode must be 'explicit' or 'implicit', got {self.star_mode!r}")


@dataclass
class StepReport:
    iterations: int = 0
    residual_norm: float = float("nan")
    residual_history: list[float] = field(default_factory=list)
    damping_events: int = 0
    linear_residuals: list[float] = field(default_factory=list)
    converged: bool = False


class Discretization:
    """Residual and Jacobian of one time step on a fixed mesh."""

    def __init__(self, mesh: PeriodicMesh, params: ModelParams, cfg: StepConfig):
        self.mesh = mesh
        self.params = params
        self.cfg = cfg
        self.V: P1Space = space_for(mesh)
        self.N = mesh.num_dofs
        self.gauge = gauge_modes(mesh, params)  # (N, k)
        self.num_gauge = self.gauge.shape[1]
        self.size = NFIELDS * self.N + self.num_gauge
        self._assembler: PatternAssembler | None = None
        # Unknowns interleaved per vertex in nested-dissection order, multipliers last.
        nodes = nested_dissection_order(mesh)
        self.ordering = np.concatenate(
            [(nodes[:, None] + np.arange(NFIELDS)[None, :] * self.N).ravel(),
             NFIELDS * self.N + np.arange(self.num_gauge)]
        )

    def extend(self, fields: np.ndarray, multipliers=0.0) -> np.ndarray:
        """Append gauge multipliers to a stacked field vector of length 6 N."""
        return np.concatenate([fields, np.broadcast_to(np.asarray(multipliers, float), (self.num_gauge,))])

    # -- element kernel -------------------------------------------------

    def _split(self, X):
        V = self.V
        q = V.at_quad(X)  # (6, C, Q)
        g = V.grad(X)  # (6, C, 2)
        return q, g

    def local_residual(self, X: np.ndarray, Xo: np.ndarray) -> np.ndarray:
        """Element residuals ``(6, C, 3)`` from local nodal values ``(6, C, 3)``."""
        p, cfg, V = self.params, self.cfg, self.V
        tau = cfg.tau
        h2 = self.mesh.h**2
        B, G, wq = V.basis, V.grad_basis, V.wq

        q1, g1 = self._split(X)
        q0, g0 = self._split(Xo)
        phi1, mu1, th1, pi1 = q1[PHI], q1[MU], q1[THETA], q1[PI]
        phi0, mu0, th0 = q0[PHI], q0[MU], q0[THETA]
        u1, u0 = q1[UX:UY + 1], q0[UX:UY + 1]
        gphi1, gmu1, gth1, gpi1 = g1[PHI], g1[MU], g1[THETA], g1[PI]
        if np.any(np.real(th1) < p.theta_min):
            raise PositivityError(
                f"inverse temperature {np.real(th1).min():.3e} below theta_min={p.theta_min:g}"
            )

        um = 0.5 * (u1 + u0)  # (2, C, Q)
        gum = 0.5 * (g1[UX:UY + 1] + g0[UX:UY + 1])  # (2, C, 2): [k, c, j] = d_j u_k
        if cfg.star_mode == "explicit":
            phis, mus, ths, us, gphis = phi0, mu0, th0, u0, g0[PHI]
        else:
            phis, mus, ths, us, gphis = phi1, mu1, th1, u1, gphi1

        eta = p.eta0 + p.eta1 * (phis + 1.0) ** 2
        sfac = p.gamma / ths  # sigma* = sfac * gphis (x) gphis
        s_star = model.entropy_pointwise(phis, ths, np.sum(gphis**2, axis=-1)[:, None], p.gamma)
        A = (s_star + phis * mus) / ths**2

        Dum = 0.5 * (gum + np.swapaxes(gum, 0, 2))  # (2, C, 2), symmetric in k<->j
        Dum_sq = np.sum(Dum**2, axis=(0, 2))  # (C,)
        divum = gum[0, :, 0] + gum[1, :, 1]  # (C,)

        # Vectors at quadrature points as (C, Q, 2).
        umv = np.moveaxis(um, 0, -1)
        usv = np.moveaxis(us, 0, -1)
        gphis_v = gphis[:, None, :]
        gth1_v = gth1[:, None, :]
        gmu1_v = gmu1[:, None, :]
        sig_um = sfac[..., None] * gphis_v * np.sum(gphis_v * umv, axis=-1, keepdims=True)
        sig_gth = sfac[..., None] * gphis_v * np.sum(gphis_v * gth1_v, axis=-1, keepdims=True)
        force = (phis / th1)[..., None] * gmu1_v - sig_gth / th1[..., None] - A[..., None] * gth1_v

        def tested(S, Vv):
            out = np.einsum("cq,qa->ca", wq * S, B)
            if Vv is not None:
                Vv = np.broadcast_to(Vv, wq.shape + (2,))
                out = out + np.einsum("cqi,cai->ca", wq[..., None] * Vv, G)
            return out

        R = []
        # phase field
        R.append(tested(
            (phi1 - phi0) / tau,
            -phis[..., None] * umv + (p.L11 * gmu1_v - p.L12 * gth1_v),
        ))
        # chemical potential
        R.append(tested(
            mu1 - model.dphi_psi_split(phi1, phi0, th1, p.c_split),
            -p.gamma * gphi1[:, None, :],
        ))
        # internal energy
        e1 = model.internal_energy(phi1, th1)
        e0 = model.internal_energy(phi0, th0)
        heat = (
            eta * Dum_sq[:, None]
            + p.epsilon * (divum**2)[:, None]
            + p.delta * h2 * np.sum(gpi1**2, axis=-1)[:, None]
        )
        transport = np.sum(((phis / th1)[..., None] * gmu1_v - sig_gth / th1[..., None]) * umv, axis=-1)
        R.append(tested(
            (e1 - e0) / tau - heat - transport + A * np.sum(umv * gth1_v, axis=-1),
            (p.L12 * gmu1_v - p.L22 * gth1_v) - sig_um - (A * th1)[..., None] * umv,
        ))
        # momentum
        for k in range(2):
            ek = np.zeros(2)
            ek[k] = 1.0
            adv = np.sum(usv * gum[k][:, None, :], axis=-1)
            S = (u1[k] - u0[k]) / tau + 0.5 * adv + force[..., k]
            Vv = (
                -0.5 * usv * um[k][..., None]
                + (eta[..., None] * Dum[k][:, None, :])
                + ((p.epsilon * divum)[:, None, None] - pi1[..., None]) * ek
            )
            R.append(tested(S, Vv))
        # stabilized incompressibility
        R.append(tested(
            np.broadcast_to(divum[:, None], wq.shape),
            p.delta * h2 * gpi1[:, None, :],
        ))
        return np.stack(R)

    # -- global assembly ------------------------------------------------

    def _locals(self, x: np.ndarray) -> np.ndarray:
        return self.V.local(x[: NFIELDS * self.N].reshape(NFIELDS, self.N))

    def residual_vector(self, x: np.ndarray, x_old: np.ndarray) -> np.ndarray:
        N = self.N
        Rloc = self.local_residual(self._locals(x), self._locals(x_old))
        r = np.empty(self.size)
        for k in range(NFIELDS):
            r[k * N:(k + 1) * N] = self.V.scatter(Rloc[k])
        lam = x[NFIELDS * N:]
        Z = self.gauge
        r[PI * N:(PI + 1) * N] += Z @ lam
        r[NFIELDS * N:] = Z.T @ x[PI * N:(PI + 1) * N]
        return r

    def _pattern(self) -> PatternAssembler:
        if self._assembler is None:
            N, cells = self.N, self.mesh.cells
            C = cells.shape[0]
            # rows/cols for local block (C, f, a, g, b)
            f = np.arange(NFIELDS)
            rows = (f[None, :, None] * N + cells[:, None, :])  # (C, 6, 3)
            R = np.broadcast_to(rows[:, :, :, None, None], (C, NFIELDS, 3, NFIELDS, 3))
            Cc = np.broadcast_to(rows[:, None, None, :, :], (C, NFIELDS, 3, NFIELDS, 3))
            # Gauge couplings are stored densely; there are only a few modes.
            pr, gc = np.meshgrid(PI * N + np.arange(N), NFIELDS * N + np.arange(self.num_gauge), indexing="ij")
            cr = np.concatenate([pr.ravel(), gc.ravel()])
            cc = np.concatenate([gc.ravel(), pr.ravel()])
            self._assembler = PatternAssembler(
                np.concatenate([R.ravel(), cr]), np.concatenate([Cc.ravel(), cc]), (self.size, self.size)
            )
        return self._assembler

    def local_jacobian(self, X: np.ndarray, Xo: np.ndarray) -> np.ndarray:
        """Element Jacobians ``(C, 6, 3, 6, 3)`` by complex step."""
        C = X.shape[1]
        J = np.empty((C, NFIELDS, 3, NFIELDS, 3))
        Xc = X.astype(complex)
        for g in range(NFIELDS):
            for b in range(3):
                Xc[g, :, b] += 1j * _CS_STEP
                R = self.local_residual(Xc, Xo)
                J[:, :, :, g, b] = np.moveaxis(R.imag, 1, 0) / _CS_STEP
                Xc[g, :, b] = X[g, :, b]
        return J

    def jacobian_matrix(self, x: np.ndarray, x_old: np.ndarray) -> sp.csr_matrix:
        J = self.local_jacobian(self._locals(x), self._locals(x_old))
        Z = self.gauge.ravel()
        return self._pattern().assemble(np.concatenate([J.ravel(), Z, Z]))


def pressure_gradient_matrix(mesh: PeriodicMesh) -> sp.csr_matrix:
    """Matrix of ``(q, v) -> <q, div v>``: rows are velocity dofs ``(k, vertex)``, columns pressure dofs."""
    V = space_for(mesh)
    N, cells = mesh.num_dofs, mesh.cells
    # <phi_a, d_k phi_b>_K = grad_basis[c, b, k] * |K| / 3
    vals = V.grad_basis[:, None, :, :] * (V.area / 3.0)[:, None, None, None]  # (C, a, b, k)
    vals = np.broadcast_to(vals, (cells.shape[0], 3, 3, 2))
    rows = np.broadcast_to(cells[:, None, :, None] + N * np.arange(2), vals.shape)
    cols = np.broadcast_to(cells[:, :, None, None], vals.shape)
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * N, N))


def gauge_modes(mesh: PeriodicMesh, params: ModelParams) -> np.ndarray:
    """Pressure directions fixed by Lagrange multipliers, as orthonormal columns.

    With ``delta > 0`` this is the normalized constant; otherwise it is an
    orthonormal basis of the kernel of the discrete pressure gradient.
    """
    N = mesh.num_dofs
    if params.delta > 0:
        return np.full((N, 1), 1.0 / np.sqrt(N))
    B = pressure_gradient_matrix(mesh)
    w, Q = np.linalg.eigh((B.T @ B).toarray())
    Z = Q[:, w <= 1e-10 * w.max()]
    log.info("unstabilized pressure: %d gauge modes on n=%d", Z.shape[1], mesh.n)
    return Z


def _check_pair(U_new: State, U_old: State):
    if U_new.mesh is not U_old.mesh:
        raise MeshError("old and new states live on different meshes")


def residual(U_new: State, U_old: State, params: ModelParams, cfg: StepConfig, multiplier: float = 0.0):
    """Stacked weak residual of one step, length ``6 N`` plus the gauge rows."""
    _check_pair(U_new, U_old)
    disc = Discretization(U_new.mesh, params, cfg)
    x = disc.extend(U_new.to_vector(), multiplier)
    return disc.residual_vector(x, disc.extend(U_old.to_vector()))


def jacobian(U_new: State, U_old: State, params: ModelParams, cfg: StepConfig, multiplier: float = 0.0):
    _check_pair(U_new, U_old)
    disc = Discretization(U_new.mesh, params, cfg)
    x = disc.extend(U_new.to_vector(), multiplier)
    return disc.jacobian_matrix(x, disc.extend(U_old.to_vector()))


def initial_chemical_potential(phi: ScalarField, theta: ScalarField, params: ModelParams) -> ScalarField:
    """Solve the chemical-potential equation once with ``phi_new = phi_old = phi``."""
    V = space_for(phi.mesh)
    lp, lt = V.local(phi.dofs), V.local(theta.dofs)
    dpsi = model.dphi_psi_split(V.at_quad(lp), V.at_quad(lp), V.at_quad(lt), params.c_split)
    rhs = V.scatter(np.einsum("cq,qa->ca", V.wq * dpsi, V.basis))
    rhs += params.gamma * (V.stiffness_matrix @ phi.dofs)
    mu, _ = solve(V.mass_matrix, rhs)
    return ScalarField(phi.mesh, mu)


def make_state(phi: ScalarField, theta: ScalarField, u: VectorField, params: ModelParams, t: float = 0.0) -> State:
    """Initial state from (phi, theta, u): mu from the initialization solve, pi = 0."""
    mu = initial_chemical_potential(phi, theta, params)
    pi = ScalarField(phi.mesh, np.zeros(phi.mesh.num_dofs))
    return State(phi=phi, mu=mu, theta=theta, u=u, pi=pi, t=t)


class StepSolver:
    """Safeguarded Newton solver for consecutive steps on one mesh."""

    def __init__(self, mesh: PeriodicMesh, params: ModelParams, cfg: StepConfig):
        self.disc = Discretization(mesh, params, cfg)
        self.params = params
        self.cfg = cfg

    def _admissible(self, x: np.ndarray) -> bool:
        N = self.disc.N
        return bool(np.min(x[THETA * N:(THETA + 1) * N]) >= self.params.theta_min)

    def advance(self, U_old: State) -> tuple[State, StepReport]:
        cfg, disc = self.cfg, self.disc
        if U_old.mesh is not disc.mesh:
            raise MeshError("state does not live on the solver mesh")
        x_old = disc.extend(U_old.to_vector())
        if not self._admissible(x_old):
            raise PositivityError("old state violates theta >= theta_min")
        x = x_old.copy()
        report = StepReport()
        r = disc.residual_vector(x, x_old)
        rnorm = float(np.linalg.norm(r))
        report.residual_history.append(rnorm)
        while rnorm > cfg.newton_tol:
            if report.iterations >= cfg.newton_max:
                report.residual_norm = rnorm
                raise StepFailure(
                    f"Newton did not converge in {cfg.newton_max} iterations (residual {rnorm:.3e})", report
                )
            J = disc.jacobian_matrix(x, x_old)
            try:
                dx, info = solve(J, -r, ordering=disc.ordering, pivot_threshold=0.01)
            except SingularMatrixError as exc:
                report.residual_norm = rnorm
                raise StepFailure(f"linear solve failed: {exc} {exc.diagnostics}", report) from exc
            report.linear_residuals.append(info.relative_residual)
            report.iterations += 1

            step = 1.0
            for _ in range(cfg.max_halvings + 1):
                x_try = x + step * dx
                if self._admissible(x_try):
                    r_try = disc.residual_vector(x_try, x_old)
                    n_try = float(np.linalg.norm(r_try))
                    if n_try < rnorm or n_try <= cfg.newton_tol:
                        break
                step *= 0.5
                report.damping_events += 1
            else:
                report.residual_norm = rnorm
                raise StepFailure(
                    f"damping underflow: no acceptable step above 2^-{cfg.max_halvings} "
                    f"(residual {rnorm:.3e})",
                    report,
                )
            x, r, rnorm = x_try, r_try, n_try
            report.residual_history.append(rnorm)
        report.residual_norm = rnorm
        report.converged = True
        U_new = State.from_vector(disc.mesh, x[: NFIELDS * disc.N], t=U_old.t + cfg.tau)
        return U_new, report


def advance(U_old: State, params: ModelParams, cfg: StepConfig) -> tuple[State, StepReport]:
    return StepSolver(U_old.mesh, params, cfg).advance(U_old)


@dataclass
class RunResult:
    final: State
    records: list
    reports: list[StepReport]


def num_steps(T: float, tau: float) -> int:
    n = int(round(T / tau))
    if n < 0 or abs(n * tau - T) > 1e-12:
        raise ValueError(f"final time T={T} is not an integer multiple of tau={tau}")
    return n


def run(
    initial: State,
    params: ModelParams,
    cfg: StepConfig,
    T: float,
    observers: list[Callable] | tuple = (),
) -> RunResult:
    """Advance ``initial`` to time ``T``; record diagnostics after every step.

    Each observer is called as ``obs(record, state)`` with the step's
    :class:`~chnst.diagnostics.DiagnosticsRecord`.
    """
    from .diagnostics import initial_record, step_record

    steps = num_steps(T, cfg.tau)
    solver = StepSolver(initial.mesh, params, cfg)
    U = initial
    records = [initial_record(U, params)]
    for obs in observers:
        obs(records[0], U)
    reports = []
    for k in range(1, steps + 1):
        try:
            U_new, rep = solver.advance(U)
        except (StepFailure, ModelError) as exc:
            rep = getattr(exc, "report", None)
            raise StepFailure(f"step {k}: {exc}", rep, step=k) from exc
        rec = step_record(k, U, U_new, params, cfg, rep)
        log.debug("step %d t=%.4f newton=%d res=%.2e", k, U_new.t, rep.iterations, rep.residual_norm)
        records.append(rec)
        reports.append(rep)
        for obs in observers:
            obs(rec, U_new)
        U = U_new
    return RunResult(final=U, records=records, reports=reports)


def with_params(params: ModelParams, **changes) -> ModelParams:
    return replace(params, **changes)
