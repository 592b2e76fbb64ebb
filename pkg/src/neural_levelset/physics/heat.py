"""Steady heat conduction on the finite-cell domain.

Residual (test function v, Dirichlet rows removed)::

    R(theta, phi) = int a(x) (kappa grad theta . grad v - f v)

with ``a = 1`` on ``{phi > 0}`` and ``a = alpha_out`` elsewhere.  The
objective is the integral of the temperature over the material region.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cutcell import IN
from ..mesh import Assembler, CartesianGrid, FeSpaceQ1, q1_gradient, q1_shape, q1_shape_grad, q1_value
from .base import LinearFcmProblem, PdeState
from .fcm import Materials, cell_integrals, shape_partials, side_integrals


def laplace_kernel(grid: CartesianGrid):
    def kernel(xi, eta):
        G = q1_shape_grad(xi, eta, grid.hx, grid.hy)
        return G @ np.swapaxes(G, -1, -2)
    return kernel


def shape_kernel(xi, eta):
    return q1_shape(xi, eta)


def dirichlet_space(grid: CartesianGrid, edges, value: float = 0.0) -> FeSpaceQ1:
    nodes = np.unique(np.concatenate([grid.edge_nodes(e) for e in edges])) if edges else np.zeros(0, int)
    return FeSpaceQ1(grid, 1, nodes, np.full(nodes.size, value))


@dataclass
class HeatProblem(LinearFcmProblem):
    """Heat benchmark: Dirichlet ``theta = 0`` on the listed edges, insulated elsewhere."""

    grid: CartesianGrid
    materials: Materials = field(default_factory=lambda: Materials(alpha_out=0.01))
    dirichlet_edges: tuple = ("top", "left")
    kind = "heat"

    def __post_init__(self):
        self.space = dirichlet_space(self.grid, self.dirichlet_edges)
        self.assembler = Assembler(self.grid.cell_nodes, self.grid.n_nodes)
        self._lap = laplace_kernel(self.grid)

    @property
    def alpha(self) -> float:
        return self.materials.alpha_out

    def assemble(self, decomp):
        m, a = self.materials, self.alpha
        Ke = cell_integrals(decomp, self._lap, m.kappa, a * m.kappa)
        Fe = cell_integrals(decomp, shape_kernel, m.source, a * m.source)
        return self.assembler.matrix(Ke), self.assembler.vector(Fe)

    def objective_load(self, decomp) -> np.ndarray:
        """``dJ/dtheta``: J is linear, ``J = load . theta``."""
        return self.assembler.vector(side_integrals(decomp, shape_kernel, IN))

    def objective(self, decomp, u):
        return float(self.objective_load(decomp) @ u)

    def objective_partials(self, state: PdeState):
        tc = state.u[self.grid.cell_nodes]

        def integrand(cells, xi, eta):
            return q1_value(tc[cells], xi, eta)

        return self.objective_load(state.decomp), shape_partials(state.decomp, integrand, 1.0, 0.0)

    def residual_shape(self, state: PdeState, lam: np.ndarray) -> np.ndarray:
        g = self.grid
        m = self.materials
        tc = state.u[g.cell_nodes]
        lc = lam[g.cell_nodes]

        def integrand(cells, xi, eta):
            tx, ty = q1_gradient(tc[cells], xi, eta, g.hx, g.hy)
            lx, ly = q1_gradient(lc[cells], xi, eta, g.hx, g.hy)
            return m.kappa * (tx * lx + ty * ly) - m.source * q1_value(lc[cells], xi, eta)

        return shape_partials(state.decomp, integrand, 1.0, self.alpha)
