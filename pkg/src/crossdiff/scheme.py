"""Semi-discrete finite volume scheme: nonlocal fields, upwind fluxes, rhs.

Each species is transported by the velocity ``nu dU + dV_k`` (with
``U = -(rho + eta)``), split into positive and negative parts and upwinded,
plus the porous-medium flux ``-(eps/2) (rho_{i+1}^2 - rho_i^2) / dx_{i+1/2}``.
Boundary fluxes are zero, so the mesh-weighted rhs telescopes to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    DEFAULT_QUADRATURE_ORDER,
    ConvolutionMatrix,
    KernelSpec,
    ZeroKernel,
    precompute_weights,
)
from .mesh import Mesh1D
from .state import State, discrete_gradient, energy_bound_constant


def positive_part(z):
    return np.maximum(z, 0.0)


def negative_part(z):
    return np.minimum(z, 0.0)


@dataclass(frozen=True)
class KernelSet:
    """The four interaction potentials, indexed like ``W_kl``."""

    w11: KernelSpec = ZeroKernel()
    w12: KernelSpec = ZeroKernel()
    w21: KernelSpec = ZeroKernel()
    w22: KernelSpec = ZeroKernel()

    def __iter__(self):
        return iter((self.w11, self.w12, self.w21, self.w22))

    @property
    def all_zero(self) -> bool:
        return all(k.is_zero for k in self)

    def lipschitz_norms(self, diameter: float) -> tuple[float, float, float, float]:
        return tuple(k.lipschitz_bound(diameter) for k in self)


@dataclass(frozen=True)
class InteractionMatrices:
    w11: ConvolutionMatrix
    w12: ConvolutionMatrix
    w21: ConvolutionMatrix
    w22: ConvolutionMatrix

    @classmethod
    def build(cls, kernels: KernelSet, mesh: Mesh1D, quadrature_order=DEFAULT_QUADRATURE_ORDER):
        return cls(*(precompute_weights(k, mesh, quadrature_order) for k in kernels))

    @property
    def mesh(self) -> Mesh1D:
        return self.w11.mesh

    @property
    def all_zero(self) -> bool:
        return all(m.is_zero for m in (self.w11, self.w12, self.w21, self.w22))


@dataclass
class FieldSet:
    v1: np.ndarray
    v2: np.ndarray
    u: np.ndarray
    dv1: np.ndarray
    dv2: np.ndarray
    du: np.ndarray
    drho: np.ndarray
    deta: np.ndarray


@dataclass
class FluxField:
    """Interface fluxes at ``x_{1/2}, ..., x_{N+1/2}`` (N+1 entries each)."""

    f: np.ndarray
    g: np.ndarray


def nonlocal_potentials(rho, eta, matrices: InteractionMatrices):
    """``(V1, V2)`` with ``V1_i = -sum_j dx_j (W11^{i-j} rho_j + W12^{i-j} eta_j)``."""
    mesh = matrices.mesh
    n = mesh.n_cells
    if matrices.all_zero:
        return np.zeros(n), np.zeros(n)
    mr = mesh.widths * rho
    me = mesh.widths * eta
    v1 = -(matrices.w11.matvec(mr) + matrices.w12.matvec(me))
    v2 = -(matrices.w22.matvec(me) + matrices.w21.matvec(mr))
    return v1, v2


def assemble_fields(state: State, matrices: InteractionMatrices, mesh: Mesh1D) -> FieldSet:
    if not (state.mesh.same_as(mesh) and matrices.mesh.same_as(mesh)):
        raise ValueError("state, interaction matrices and mesh must share one mesh")
    rho, eta = state.rho, state.eta
    v1, v2 = nonlocal_potentials(rho, eta, matrices)
    u = -(rho + eta)
    drho = discrete_gradient(rho, mesh)
    deta = discrete_gradient(eta, mesh)
    return FieldSet(
        v1=v1,
        v2=v2,
        u=u,
        dv1=discrete_gradient(v1, mesh),
        dv2=discrete_gradient(v2, mesh),
        du=-(drho + deta),
        drho=drho,
        deta=deta,
    )


def _upwind_flux(c, dvel, du, nu, eps, dxh):
    """Interior fluxes for one species ``c`` with interaction gradient ``dvel``."""
    left = nu * positive_part(du) + positive_part(dvel)
    right = nu * negative_part(du) + negative_part(dvel)
    return left * c[:-1] + right * c[1:] - 0.5 * eps * (c[1:] ** 2 - c[:-1] ** 2) / dxh


def assemble_fluxes(state: State, fields: FieldSet, eps: float, nu: float, mesh: Mesh1D) -> FluxField:
    n = mesh.n_cells
    f = np.zeros(n + 1)
    g = np.zeros(n + 1)
    dxh = mesh.half_widths
    f[1:-1] = _upwind_flux(state.rho, fields.dv1, fields.du, nu, eps, dxh)
    g[1:-1] = _upwind_flux(state.eta, fields.dv2, fields.du, nu, eps, dxh)
    return FluxField(f, g)


def rhs(state: State, fluxes: FluxField, mesh: Mesh1D):
    """``d rho_i/dt = -(F_{i+1/2} - F_{i-1/2}) / dx_i`` and likewise for eta."""
    drho = -np.diff(fluxes.f) / mesh.widths
    deta = -np.diff(fluxes.g) / mesh.widths
    return drho, deta


class Model:
    """Mesh, coefficients and precomputed interaction weights of one problem."""

    def __init__(
        self,
        mesh: Mesh1D,
        eps: float,
        nu: float,
        kernels: KernelSet = KernelSet(),
        quadrature_order: int = DEFAULT_QUADRATURE_ORDER,
    ):
        if eps < 0 or nu < 0:
            raise ValueError(f"eps and nu must be nonnegative, got eps={eps}, nu={nu}")
        self.mesh = mesh
        self.eps = float(eps)
        self.nu = float(nu)
        self.kernels = kernels
        self.matrices = InteractionMatrices.build(kernels, mesh, quadrature_order)

    def interaction_gradients(self, rho, eta):
        v1, v2 = nonlocal_potentials(rho, eta, self.matrices)
        return discrete_gradient(v1, self.mesh), discrete_gradient(v2, self.mesh)

    def fields(self, state: State) -> FieldSet:
        return assemble_fields(state, self.matrices, self.mesh)

    def fluxes(self, state: State) -> FluxField:
        return assemble_fluxes(state, self.fields(state), self.eps, self.nu, self.mesh)

    def rhs(self, state: State):
        return rhs(state, self.fluxes(state), self.mesh)

    def time_derivative(self, rho, eta, t=0.0):
        return self.rhs(State(rho, eta, self.mesh, t))

    def kernel_norms(self):
        return self.kernels.lipschitz_norms(self.mesh.length)

    def energy_bound(self, masses) -> float | None:
        return energy_bound_constant(self.eps, masses, self.kernel_norms(), self.mesh.length)

    def entropy_rate(self, state: State) -> float:
        """Exact ``dS/dt = sum dx_i (1 + log c_i) dc_i/dt`` along the rhs.

        Requires strictly positive densities.
        """
        if state.min_value() <= 0:
            raise ValueError("entropy rate needs strictly positive densities")
        dr, de = self.rhs(state)
        w = self.mesh.widths
        return float(w @ ((1 + np.log(state.rho)) * dr + (1 + np.log(state.eta)) * de))
