"""One-way fluid-structure support problem.

A channel carries Stokes flow past a fixed beam that rests on a designable
support.  Each design is evaluated by a staggered solve: Brinkman flow on
the whole channel, then FCM elasticity of the solid loaded by the interface
traction.  The objective is the strain energy of the solid.  The backward
pass runs the elasticity adjoint first and then the fluid adjoint, whose
right-hand side is ``T^T lam_d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..levelset import DesignRegion
from ..mesh import CartesianGrid
from .base import PdeState
from .elasticity import ElasticityProblem, clamped_edge
from .fcm import Materials, check_nonempty
from .stokes import StokesBrinkman, traction_matrix, traction_shape
from .. import cutcell


@dataclass(frozen=True)
class FsiLayout:
    """Geometry of the support benchmark on a ``2 x 1`` channel."""

    beam: tuple = (0.9, 1.1, 0.5, 0.8)
    design: tuple = (0.5, 1.5, 0.0, 0.5)

    @staticmethod
    def box_sdf(X, box) -> np.ndarray:
        """Signed distance to an axis-aligned box, positive inside."""
        x0, x1, y0, y1 = box
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        qx = np.abs(X[:, 0] - cx) - 0.5 * (x1 - x0)
        qy = np.abs(X[:, 1] - cy) - 0.5 * (y1 - y0)
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        inside = np.minimum(np.maximum(qx, qy), 0)
        return -(outside + inside)

    def region(self, grid: CartesianGrid) -> DesignRegion:
        X = grid.node_coords
        x0, x1, y0, y1 = self.design
        tol = 1e-12
        mask = (X[:, 0] >= x0 - tol) & (X[:, 0] <= x1 + tol) & (X[:, 1] >= y0 - tol) & (X[:, 1] <= y1 + tol)
        return DesignRegion(mask, self.box_sdf(X, self.beam))

    def target_volume(self, volume_fraction: float) -> float:
        x0, x1, y0, y1 = self.design
        bx0, bx1, by0, by1 = self.beam
        return volume_fraction * (x1 - x0) * (y1 - y0) + (bx1 - bx0) * (by1 - by0)


@dataclass
class FsiProblem:
    grid: CartesianGrid
    materials: Materials = field(default_factory=lambda: Materials(alpha_out=0.001))
    mean_velocity: float = 0.01
    layout: FsiLayout = field(default_factory=FsiLayout)
    freeze_fluid: bool = False
    kind = "fsi_support"

    def __post_init__(self):
        self.fluid = StokesBrinkman(self.grid, self.materials, self.mean_velocity)
        self.solid = ElasticityProblem(self.grid, clamped_edge(self.grid, "bottom"), {}, self.materials)

    def traction(self, decomp):
        return traction_matrix(decomp, self.solid.dofs, self.fluid.dofs, self.solid.space.n_dofs,
                               self.fluid.space.n_dofs)

    def solve(self, phi: np.ndarray) -> PdeState:
        phi = np.asarray(phi, float)
        decomp = cutcell.decompose(self.grid, phi, dual=True)
        check_nonempty(decomp)
        flow = self.fluid.solve(decomp)
        T = self.traction(decomp)
        self.solid.extra_load = T @ flow.w
        try:
            state = self.solid.solve(phi)
        finally:
            self.solid.extra_load = None
        state.extra.update(flow=flow, traction=T)
        return state

    def gradient(self, state: PdeState) -> np.ndarray:
        flow, T = state.extra["flow"], state.extra["traction"]
        dJ_dd, dJ_dphi = self.solid.objective_partials(state)
        lam_d = self.solid.adjoint(state, dJ_dd)
        # R_d = K d - T w: the load term enters with a minus sign
        g = dJ_dphi - self.solid.residual_shape(state, lam_d)
        g += traction_shape(state.decomp, self.solid.dofs, self.fluid.dofs, lam_d, flow.w)
        state.extra["adjoint"] = lam_d
        if not self.freeze_fluid:
            lam_w = self.fluid.adjoint(flow, T.T @ lam_d)
            g -= self.fluid.residual_shape(state.decomp, flow, lam_w)
            state.extra["fluid_adjoint"] = lam_w
        return g


def fsi_grid(nx: int = 32, ny: int = 16) -> CartesianGrid:
    return CartesianGrid(nx, ny, 2.0, 1.0)
