"""Plane-strain linear elasticity on the finite-cell domain.

Residual::

    R(d, phi) = int a(x) sigma(d) : eps(v) - F_point . v - t(phi) . v

with ``a = 1`` on ``{phi > 0}`` and ``alpha_out`` elsewhere.  The objective is
the strain energy ``int_{phi > 0} sigma(d) : eps(d)``.  An optional traction
load (fluid forces on the interface) is linear in the fluid state and is
passed in as a matrix ``T`` with ``load = T w``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cutcell import IN
from ..mesh import Assembler, CartesianGrid, FeSpaceQ1, q1_gradient, q1_shape_grad
from .base import LinearFcmProblem, PdeState
from .fcm import Materials, cell_integrals, shape_partials, side_integrals


def strain_matrix(xi, eta, hx: float, hy: float) -> np.ndarray:
    """B with rows (e_xx, e_yy, 2 e_xy) acting on interleaved corner dofs."""
    G = q1_shape_grad(xi, eta, hx, hy)
    B = np.zeros(G.shape[:-2] + (3, 8))
    B[..., 0, 0::2] = G[..., 0]
    B[..., 1, 1::2] = G[..., 1]
    B[..., 2, 0::2] = G[..., 1]
    B[..., 2, 1::2] = G[..., 0]
    return B


def stiffness_kernel(grid: CartesianGrid, Dm: np.ndarray):
    def kernel(xi, eta):
        B = strain_matrix(xi, eta, grid.hx, grid.hy)
        return np.swapaxes(B, -1, -2) @ Dm @ B
    return kernel


def strains(dc, xi, eta, hx, hy):
    """Strain components at points from corner displacements ``dc`` (n, 8)."""
    uxx, uxy = q1_gradient(dc[:, 0::2], xi, eta, hx, hy)
    uyx, uyy = q1_gradient(dc[:, 1::2], xi, eta, hx, hy)
    return uxx, uyy, uxy + uyx


def energy_density(Dm, ea, eb):
    """``eps_a^T D eps_b`` for strain triples (works on dual numbers)."""
    return (Dm[0, 0] * ea[0] * eb[0] + Dm[0, 1] * (ea[0] * eb[1] + ea[1] * eb[0])
            + Dm[1, 1] * ea[1] * eb[1] + Dm[2, 2] * ea[2] * eb[2])


def vector_space(grid: CartesianGrid, fixed_dofs, values=0.0) -> FeSpaceQ1:
    fixed = np.unique(np.asarray(fixed_dofs, int))
    return FeSpaceQ1(grid, 2, fixed, np.broadcast_to(values, fixed.shape))


def mbb_supports(grid: CartesianGrid) -> np.ndarray:
    """Symmetry rollers: u_x = 0 on the left edge, u_y = 0 at the bottom-right node."""
    left = grid.edge_nodes("left")
    br = grid.node_index(grid.nx, 0)
    return np.concatenate([2 * left, [2 * br + 1]])


def clamped_edge(grid: CartesianGrid, edge: str) -> np.ndarray:
    nodes = grid.edge_nodes(edge)
    return np.concatenate([2 * nodes, 2 * nodes + 1])


@dataclass
class ElasticityProblem(LinearFcmProblem):
    """Elasticity with point loads ``{node: (fx, fy)}`` and fixed dofs."""

    grid: CartesianGrid
    fixed_dofs: np.ndarray
    point_loads: dict = field(default_factory=dict)
    materials: Materials = field(default_factory=lambda: Materials(alpha_out=0.001))
    kind = "elasticity"

    def __post_init__(self):
        self.space = vector_space(self.grid, self.fixed_dofs)
        self.dofs = self.space.cell_dofs
        self.assembler = Assembler(self.dofs, self.space.n_dofs)
        self.Dm = self.materials.plane_strain()
        self._kernel = stiffness_kernel(self.grid, self.Dm)
        self.load = np.zeros(self.space.n_dofs)
        for node, (fx, fy) in self.point_loads.items():
            self.load[2 * node] += fx
            self.load[2 * node + 1] += fy
        # the traction load of a coupled problem; set per solve
        self.extra_load = None

    @property
    def alpha(self) -> float:
        return self.materials.alpha_out

    def stiffness(self, decomp, side=None):
        if side == IN:
            Ke = side_integrals(decomp, self._kernel, IN)
        else:
            Ke = cell_integrals(decomp, self._kernel, 1.0, self.alpha)
        return self.assembler.matrix(Ke)

    def assemble(self, decomp):
        b = self.load.copy()
        if self.extra_load is not None:
            b += self.extra_load
        return self.stiffness(decomp), b

    def objective(self, decomp, u):
        return float(u @ (self.stiffness(decomp, IN) @ u))

    def objective_partials(self, state: PdeState):
        g = self.grid
        K_in = self.stiffness(state.decomp, IN)
        dc = state.u[self.dofs]

        def integrand(cells, xi, eta):
            e = strains(dc[cells], xi, eta, g.hx, g.hy)
            return energy_density(self.Dm, e, e)

        return 2.0 * (K_in @ state.u), shape_partials(state.decomp, integrand, 1.0, 0.0)

    def residual_shape(self, state: PdeState, lam: np.ndarray) -> np.ndarray:
        """``lam^T dR/dphi`` of the stiffness part; the traction part is added by the coupler."""
        g = self.grid
        dc = state.u[self.dofs]
        lc = lam[self.dofs]

        def integrand(cells, xi, eta):
            ed = strains(dc[cells], xi, eta, g.hx, g.hy)
            el = strains(lc[cells], xi, eta, g.hx, g.hy)
            return energy_density(self.Dm, ed, el)

        return shape_partials(state.decomp, integrand, 1.0, self.alpha)


def mbb_problem(grid: CartesianGrid, materials: Materials | None = None, force: float = 1.0) -> ElasticityProblem:
    """Half MBB beam: downward load at the top-left node, symmetry rollers."""
    materials = materials or Materials(alpha_out=0.001)
    top_left = int(grid.node_index(0, grid.ny))
    return ElasticityProblem(grid, mbb_supports(grid), {top_left: (0.0, -force)}, materials)
