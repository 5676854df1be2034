"""P1 finite elements on periodic meshes.

Everything that integrates goes through one :class:`QuadratureRule` per
:class:`P1Space`.  The scheme's conservation identities cancel at the level of
individual quadrature points, so mixing rules between terms would break them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError, NestingMap, PeriodicMesh


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle (weights sum to 1)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-14:
            raise ValueError("quadrature weights must be positive and sum to 1")


def _orbit3(a: float) -> list[list[float]]:
    b = 1.0 - 2.0 * a
    return [[a, a, b], [a, b, a], [b, a, a]]


def strang_fix_rule() -> QuadratureRule:
    """Symmetric 6-point rule, exact for polynomials of degree 4."""
    a1, w1 = 0.4459484909159648863183292538830519883991, 0.2233815896780114656950070084331228043703
    a2, w2 = 0.09157621350977074345957146340220150785433, 0.1099517436553218676383263249002105289631
    pts = np.array(_orbit3(a1) + _orbit3(a2))
    wts = np.array([w1] * 3 + [w2] * 3)
    return QuadratureRule(points=pts, weights=wts, degree=4)


def collapsed_gauss_rule(m: int) -> QuadratureRule:
    """Duffy-collapsed tensor Gauss-Legendre rule, exact to degree ``2m - 2``.

    Not symmetric and not used by the scheme; it serves as an independent
    high-order reference for checking integrals.
    """
    x, w = np.polynomial.legendre.leggauss(m)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wi, we = np.meshgrid(w, w, indexing="ij")
    s = xi.ravel()
    t = (eta * (1.0 - xi)).ravel()
    wts = (wi * we * (1.0 - xi)).ravel() * 2.0
    pts = np.column_stack([1.0 - s - t, s, t])
    return QuadratureRule(points=pts, weights=wts / wts.sum(), degree=2 * m - 2)


DEFAULT_RULE = strang_fix_rule()


@dataclass(frozen=True, eq=False)
class ScalarField:
    mesh: PeriodicMesh
    dofs: np.ndarray

    def __post_init__(self):
        dofs = np.asarray(self.dofs, dtype=float)
        if dofs.shape != (self.mesh.num_dofs,):
            raise MeshError(f"field has {dofs.shape} dofs, mesh has {self.mesh.num_dofs}")
        if not np.all(np.isfinite(dofs)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "dofs", dofs)


@dataclass(frozen=True, eq=False)
class VectorField:
    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.mesh is not self.y.mesh:
            raise MeshError("vector components live on different meshes")

    @property
    def mesh(self) -> PeriodicMesh:
        return self.x.mesh

    @property
    def dofs(self) -> np.ndarray:
        """Stacked coefficients, shape (2, num_dofs)."""
        return np.stack([self.x.dofs, self.y.dofs])

    @classmethod
    def from_array(cls, mesh: PeriodicMesh, values: np.ndarray) -> "VectorField":
        values = np.asarray(values)
        return cls(ScalarField(mesh, values[0]), ScalarField(mesh, values[1]))


class P1Space:
    """Precomputed P1 geometry and quadrature data for one mesh.

    Arrays indexed ``[cell, quad]`` are values at quadrature points; gradients
    of P1 functions are piecewise constant and indexed ``[cell, component]``.
    """

    def __init__(self, mesh: PeriodicMesh, rule: QuadratureRule = DEFAULT_RULE):
        self.mesh = mesh
        self.rule = rule
        p = mesh.cell_coords
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0):
            raise MeshError("mesh has degenerate or inverted cells")
        self.area = 0.5 * det
        inv_t = np.empty_like(jac)
        inv_t[:, 0, 0] = jac[:, 1, 1] / det
        inv_t[:, 0, 1] = -jac[:, 1, 0] / det
        inv_t[:, 1, 0] = -jac[:, 0, 1] / det
        inv_t[:, 1, 1] = jac[:, 0, 0] / det
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        # grad_basis[c, a, :] = J^{-T} grad_ref[a]
        self.grad_basis = np.einsum("cij,aj->cai", inv_t, ref)
        self.basis = rule.points  # (Q, 3)
        self.wq = rule.weights[None, :] * self.area[:, None]  # (C, Q)
        self.cells = mesh.cells

    @property
    def num_dofs(self) -> int:
        return self.mesh.num_dofs

    def quad_coords(self) -> np.ndarray:
        """Physical quadrature point coordinates, shape (C, Q, 2)."""
        return np.einsum("qa,cai->cqi", self.basis, self.mesh.cell_coords)

    def local(self, dofs):
        """Gather nodal values per cell; trailing axis is the local vertex."""
        return dofs[..., self.cells]

    def at_quad(self, local):
        return np.einsum("...ca,qa->...cq", local, self.basis)

    def grad(self, local):
        return np.einsum("...ca,cai->...ci", local, self.grad_basis)

    def integrate(self, values) -> float:
        values = np.asarray(values)
        if values.ndim == 1:
            return float(values @ self.area)
        return float(np.sum(values * self.wq))

    def scatter(self, local: np.ndarray) -> np.ndarray:
        """Sum per-cell contributions ``(C, 3)`` into a global vector."""
        return np.bincount(self.cells.ravel(), weights=local.ravel(), minlength=self.num_dofs)

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        local = np.einsum("cq,qa,qb->cab", self.wq, self.basis, self.basis)
        return self._assemble(local)

    @cached_property
    def stiffness_matrix(self) -> sp.csr_matrix:
        local = np.einsum("c,cai,cbi->cab", self.area, self.grad_basis, self.grad_basis)
        return self._assemble(local)

    def _assemble(self, local: np.ndarray) -> sp.csr_matrix:
        rows = np.repeat(self.cells, 3, axis=1).ravel()
        cols = np.tile(self.cells, (1, 3)).ravel()
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(self.num_dofs,) * 2)

    @cached_property
    def basis_integrals(self) -> np.ndarray:
        return self.scatter(np.broadcast_to(self.area[:, None] / 3.0, self.cells.shape).copy())


_SPACES: dict[tuple[int, int], P1Space] = {}


def space_for(mesh: PeriodicMesh, rule: QuadratureRule = DEFAULT_RULE) -> P1Space:
    key = (id(mesh), id(rule))
    sp_ = _SPACES.get(key)
    if sp_ is None or sp_.mesh is not mesh:
        sp_ = P1Space(mesh, rule)
        _SPACES[key] = sp_
    return sp_


def interpolate_nodal(f: Callable, mesh: PeriodicMesh) -> ScalarField:
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    vals = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("interpolated function is not finite at every vertex")
    return ScalarField(mesh, vals)


def integrate(expr, mesh: PeriodicMesh, rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Integrate over the torus with the given rule.

    ``expr`` is a ScalarField, an array of values at quadrature points
    ``(C, Q)`` (or per-cell constants ``(C,)``), or a callable ``f(x, y)``
    evaluated at the physical quadrature points.
    """
    V = space_for(mesh, rule)
    if isinstance(expr, ScalarField):
        if expr.mesh is not mesh:
            raise MeshError("field and mesh differ")
        return V.integrate(V.at_quad(V.local(expr.dofs)))
    if callable(expr):
        xq = V.quad_coords()
        return V.integrate(expr(xq[..., 0], xq[..., 1]))
    return V.integrate(expr)


def _vector_local(V: P1Space, f: VectorField):
    if f.mesh is not V.mesh:
        raise MeshError("fields live on different meshes")
    loc = V.local(f.dofs)  # (2, C, 3)
    return V.at_quad(loc), V.grad(loc)  # (2, C, Q), (2, C, 2) -> grad[k, c, j] = d_j f_k


def convection(u: VectorField, v: VectorField, w: VectorField) -> float:
    """c(u, v, w) = <(u . grad) v, w>."""
    V = space_for(u.mesh)
    uq, _ = _vector_local(V, u)
    _, gv = _vector_local(V, v)
    wq, _ = _vector_local(V, w)
    adv = np.einsum("jcq,kcj->kcq", uq, gv)
    return V.integrate(np.sum(adv * wq, axis=0))


def c_skw(u: VectorField, v: VectorField, w: VectorField) -> float:
    """Skew-symmetric convection form, vanishing whenever v == w."""
    if not (u.mesh is v.mesh is w.mesh):
        raise MeshError("fields live on different meshes")
    V = space_for(u.mesh)
    uq, _ = _vector_local(V, u)
    vq, gv = _vector_local(V, v)
    wq, gw = _vector_local(V, w)
    adv_v = np.einsum("jcq,kcj->kcq", uq, gv)
    adv_w = np.einsum("jcq,kcj->kcq", uq, gw)
    return V.integrate(0.5 * np.sum(adv_v * wq - adv_w * vq, axis=0))


def l2_norm_sq(f: ScalarField) -> float:
    V = space_for(f.mesh)
    return V.integrate(V.at_quad(V.local(f.dofs)) ** 2)


def h1_seminorm_sq(f: ScalarField) -> float:
    V = space_for(f.mesh)
    g = V.grad(V.local(f.dofs))
    return V.integrate(np.sum(g**2, axis=-1))


class ErrorNorms(NamedTuple):
    e_a: float
    e_b: float
    e_mu: float
    e_u: float
    e_theta: float


def _prolong_to(field: ScalarField, mesh: PeriodicMesh, nesting: NestingMap | None) -> ScalarField:
    if field.mesh is mesh:
        return field
    if nesting is None or nesting.coarse is not field.mesh or nesting.fine is not mesh:
        raise MeshError("coarse field is not nested in the fine mesh")
    return ScalarField(mesh, nesting.prolong(field.dofs))


def h1_l2_error_norms(fine, coarse, nesting: NestingMap | None = None) -> ErrorNorms:
    """Squared two-grid error quantities between a fine and a coarse solution.

    ``fine`` and ``coarse`` are objects with ``phi, mu, theta, u`` attributes
    (e.g. :class:`chnst.scheme.State`).  Coarse fields are prolonged through
    ``nesting``; the returned values are sums of squared norms::

        e_a = |dphi|_H1^2 + |du|_L2^2 + |dtheta|_L2^2
        e_b = |dmu|_H1^2 + |du|_H1^2 + |dtheta|_H1^2

    with ``e_mu, e_u, e_theta`` the three parts of ``e_b``.
    """
    mesh = fine.phi.mesh

    def diff(a: ScalarField, b: ScalarField) -> ScalarField:
        return ScalarField(mesh, a.dofs - _prolong_to(b, mesh, nesting).dofs)

    dphi = diff(fine.phi, coarse.phi)
    dmu = diff(fine.mu, coarse.mu)
    dth = diff(fine.theta, coarse.theta)
    dux = diff(fine.u.x, coarse.u.x)
    duy = diff(fine.u.y, coarse.u.y)

    def h1(f):
        return l2_norm_sq(f) + h1_seminorm_sq(f)

    u_l2 = l2_norm_sq(dux) + l2_norm_sq(duy)
    e_mu = h1(dmu)
    e_u = h1(dux) + h1(duy)
    e_th = h1(dth)
    e_a = h1(dphi) + u_l2 + l2_norm_sq(dth)
    return ErrorNorms(e_a=e_a, e_b=e_mu + e_u + e_th, e_mu=e_mu, e_u=e_u, e_theta=e_th)
