"""Pointwise thermodynamic closures in the inverse temperature theta.

The free energy density is ``log(theta) + (2*theta - 1) * W(phi)`` with the
double well ``W(phi) = phi^2 (1 - phi)^2``; the gradient energy
``gamma/2 |grad phi|^2`` is added where needed.  All functions are written
with plain arithmetic so they accept complex arguments, which the scheme uses
for complex-step differentiation.  Positivity checks look at the real part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ModelError(ValueError):
    def __init__(self, message: str, keys: tuple[str, ...] = ()):
        super().__init__(message)
        self.keys = keys


POTENTIALS = ("log-doublewell",)
VISCOSITIES = ("quadratic",)


@dataclass(frozen=True)
class ModelParams:
    gamma: float = 1e-3
    epsilon: float = 10.0
    delta: float = 1.0
    L11: float = 1e-2
    L12: float = 0.0
    L22: float = 1e-2
    viscosity: str = "quadratic"
    eta0: float = 1e-3
    eta1: float = 1.0 / 40.0
    potential: str = "log-doublewell"
    c_split: float = 1.0
    theta_min: float = 1e-6

    def __post_init__(self):
        if not self.gamma > 0:
            raise ModelError(f"(A1) interface parameter gamma must be positive, got {self.gamma}", ("gamma",))
        if self.viscosity not in VISCOSITIES:
            raise ModelError(f"unknown viscosity {self.viscosity!r}; choose from {VISCOSITIES}", ("viscosity",))
        if not (self.eta0 > 0 and self.eta1 >= 0):
            raise ModelError(
                f"(A2) viscosity eta0 + eta1*(phi+1)^2 must be strictly positive: "
                f"need eta0 > 0 and eta1 >= 0, got eta0={self.eta0}, eta1={self.eta1}",
                ("eta0", "eta1"),
            )
        if not (self.L11 > 0 and self.L22 > 0 and self.L11 * self.L22 > self.L12**2):
            raise ModelError(
                "(A3) diffusion matrix [[L11, -L12], [-L12, L22]] must be positive definite: "
                f"need L11 > 0, L22 > 0 and L11*L22 > L12^2, got L11={self.L11}, "
                f"L12={self.L12}, L22={self.L22}",
                ("L11", "L12", "L22"),
            )
        if self.potential not in POTENTIALS:
            raise ModelError(f"unknown potential {self.potential!r}; choose from {POTENTIALS}", ("potential",))
        if not self.c_split >= 1.0:
            raise ModelError(f"(A4) convexity shift c_split must be >= 1, got {self.c_split}", ("c_split",))
        if self.epsilon < 0 or self.delta < 0:
            raise ModelError("stabilization weights epsilon and delta must be nonnegative", ("epsilon", "delta"))
        if not self.theta_min > 0:
            raise ModelError("theta_min must be positive", ("theta_min",))

    @property
    def diffusion_matrix(self) -> np.ndarray:
        return np.array([[self.L11, -self.L12], [-self.L12, self.L22]])


def _check_theta(theta):
    if np.any(np.real(theta) <= 0):
        raise ModelError("inverse temperature must be positive")


def double_well(phi):
    return phi**2 * (1.0 - phi) ** 2


def double_well_prime(phi):
    return 2.0 * phi * (1.0 - phi) * (1.0 - 2.0 * phi)


def psi(phi, theta):
    """Bulk free energy without the gradient term."""
    _check_theta(theta)
    return np.log(theta) + (2.0 * theta - 1.0) * double_well(phi)


def dphi_psi(phi, theta):
    _check_theta(theta)
    return (2.0 * theta - 1.0) * double_well_prime(phi)


def psi_split(phi, theta, c_split: float = 1.0):
    """Return ``(psi_vex, psi_cav)`` at a common theta.

    With ``a = 2 theta - 1`` and ``W_c = W + c/2 phi^2`` convex: for ``a >= 0``
    the convex part is ``log theta + a W_c`` and the concave part ``-a c/2 phi^2``;
    for ``a < 0`` the quadratic becomes the convex part and ``a W_c`` the concave one.
    """
    _check_theta(theta)
    a = 2.0 * theta - 1.0
    wc = double_well(phi) + 0.5 * c_split * phi**2
    we = 0.5 * c_split * phi**2
    pos = np.real(a) >= 0
    vex = np.log(theta) + np.where(pos, a * wc, -a * we)
    cav = np.where(pos, -a * we, a * wc)
    return vex, cav


def dphi_psi_split(phi_new, phi_old, theta_new, c_split: float = 1.0):
    """Convex part implicit in phi_new, concave part explicit in phi_old."""
    _check_theta(theta_new)
    a = 2.0 * theta_new - 1.0
    pos = np.real(a) >= 0
    implicit = a * (double_well_prime(phi_new) + c_split * (phi_new - phi_old))
    explicit = a * (double_well_prime(phi_old) + c_split * (phi_old - phi_new))
    return np.where(pos, implicit, explicit)


def dphi_psi_vex(phi, theta, c_split: float = 1.0):
    _check_theta(theta)
    a = 2.0 * theta - 1.0
    return np.where(np.real(a) >= 0, a * (double_well_prime(phi) + c_split * phi), -a * c_split * phi)


def d2theta_psi(phi, theta):
    _check_theta(theta)
    return -1.0 / theta**2


def internal_energy(phi, theta):
    _check_theta(theta)
    return 1.0 / theta + 2.0 * double_well(phi)


def entropy_pointwise(phi, theta, grad_phi_sq, gamma: float):
    """Entropy density; ``grad_phi_sq`` is ``|grad phi|^2``."""
    _check_theta(theta)
    return 1.0 - np.log(theta) + double_well(phi) - 0.5 * gamma * grad_phi_sq


def korteweg_stress(grad_phi, theta, gamma: float) -> np.ndarray:
    """(gamma/theta) grad_phi (x) grad_phi; trailing axes are the 2x2 tensor."""
    _check_theta(theta)
    g = np.asarray(grad_phi)
    return (gamma / np.asarray(theta))[..., None, None] * g[..., :, None] * g[..., None, :]


def viscosity(phi, theta=None, params: ModelParams | None = None):
    p = params or ModelParams()
    return p.eta0 + p.eta1 * (phi + 1.0) ** 2
