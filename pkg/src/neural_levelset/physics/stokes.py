"""Stokes flow with Brinkman penalization and the interface traction load.

Equal-order Q1/Q1 on the whole background grid, dofs interleaved per node as
``(u_x, u_y, p)``.  Residual::

    R(w, phi) = int alpha(x) u . psi + mu grad u : grad psi - p div psi
                - (div u) q - h^2 grad p . grad q

with ``alpha = alpha_u`` on ``{phi > 0}`` and zero in the fluid.  The traction
of the fluid on the solid, ``int_Gamma (n . grad u - p n) . v`` with ``n``
pointing from the solid into the fluid, is linear in ``w = (u, p)`` and is
returned as a sparse matrix from fluid dofs to displacement dofs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..cutcell import CutDecomposition
from ..dual import value
from ..mesh import GAUSS2_ETA, GAUSS2_W, GAUSS2_XI, Assembler, CartesianGrid, FeSpaceQ1, SparseSystem, eliminate, q1_gradient, q1_shape, q1_shape_grad, q1_value
from .fcm import Materials, cell_integrals, coupling_matrix, interface_partials, reference_integral, shape_partials

VEL = (0, 1)
PRES = 2


def stokes_kernel(grid: CartesianGrid, mu: float):
    h2 = grid.h ** 2

    def kernel(xi, eta):
        N = q1_shape(xi, eta)
        G = q1_shape_grad(xi, eta, grid.hx, grid.hy)
        K = np.zeros(N.shape[:-1] + (12, 12))
        lap = G @ np.swapaxes(G, -1, -2)
        for c in VEL:
            K[..., c::3, c::3] = mu * lap
            # -p div psi and -(div u) q
            K[..., c::3, PRES::3] = -G[..., :, None, c] * N[..., None, :]
            K[..., PRES::3, c::3] = -N[..., :, None] * G[..., None, :, c]
        K[..., PRES::3, PRES::3] = -h2 * lap
        return K
    return kernel


def brinkman_kernel(xi, eta):
    N = q1_shape(xi, eta)
    M = N[..., :, None] * N[..., None, :]
    K = np.zeros(N.shape[:-1] + (12, 12))
    for c in VEL:
        K[..., c::3, c::3] = M
    return K


def parabolic_inlet(y, height: float, mean_velocity: float):
    return 6.0 * mean_velocity * y * (height - y) / height ** 2


def channel_space(grid: CartesianGrid, mean_velocity: float) -> FeSpaceQ1:
    """Parabolic inflow on the left, no slip top and bottom, open outflow."""
    y = grid.node_coords[:, 1] - grid.origin[1]
    left = grid.edge_nodes("left")
    walls = np.unique(np.concatenate([grid.edge_nodes("top"), grid.edge_nodes("bottom")]))
    left = np.setdiff1d(left, walls)
    fixed = np.concatenate([3 * left, 3 * left + 1, 3 * walls, 3 * walls + 1])
    vals = np.concatenate([parabolic_inlet(y[left], grid.ly, mean_velocity), np.zeros(left.size + 2 * walls.size)])
    return FeSpaceQ1(grid, 3, fixed, vals)


@dataclass
class FluidState:
    w: np.ndarray
    system: SparseSystem

    def velocity(self) -> np.ndarray:
        return self.w.reshape(-1, 3)[:, :2]

    def pressure(self) -> np.ndarray:
        return self.w.reshape(-1, 3)[:, 2]


@dataclass
class StokesBrinkman:
    grid: CartesianGrid
    materials: Materials = field(default_factory=Materials)
    mean_velocity: float = 0.01

    def __post_init__(self):
        self.space = channel_space(self.grid, self.mean_velocity)
        self.dofs = self.space.cell_dofs
        self.assembler = Assembler(self.dofs, self.space.n_dofs)
        Ke = reference_integral(self.grid, stokes_kernel(self.grid, self.materials.mu_f))
        self._K0 = np.broadcast_to(Ke, (self.grid.n_cells, 12, 12))

    def assemble(self, decomp: CutDecomposition):
        Ke = self._K0 + cell_integrals(decomp, brinkman_kernel, self.materials.alpha_u, 0.0)
        return self.assembler.matrix(Ke), np.zeros(self.space.n_dofs)

    def solve(self, decomp: CutDecomposition) -> FluidState:
        A, b = self.assemble(decomp)
        system = eliminate(A, b, self.space, name="Stokes-Brinkman system")
        return FluidState(self.space.expand(system.solve()), system)

    def adjoint(self, state: FluidState, rhs: np.ndarray) -> np.ndarray:
        lam = np.zeros(self.space.n_dofs)
        lam[self.space.free] = state.system.solve(rhs[self.space.free], transpose=True)
        return lam

    def residual_shape(self, decomp: CutDecomposition, state: FluidState, lam: np.ndarray) -> np.ndarray:
        """``lam^T dR/dphi``: only the Brinkman term moves with the interface."""
        wc, lc = state.w[self.dofs], lam[self.dofs]

        def integrand(cells, xi, eta):
            return sum(q1_value(wc[cells][:, c::3], xi, eta) * q1_value(lc[cells][:, c::3], xi, eta) for c in VEL)

        return shape_partials(decomp, integrand, self.materials.alpha_u, 0.0)

    def divergence_norm(self, w: np.ndarray) -> tuple[float, float]:
        """L2 norms of ``div u`` and ``u`` over the grid (2x2 Gauss)."""
        g = self.grid
        wc = w[self.dofs]
        xi = np.broadcast_to(GAUSS2_XI, (g.n_cells, 4))
        eta = np.broadcast_to(GAUSS2_ETA, (g.n_cells, 4))
        ux, _ = q1_gradient(wc[:, 0::3], xi, eta, g.hx, g.hy)
        _, vy = q1_gradient(wc[:, 1::3], xi, eta, g.hx, g.hy)
        speed2 = q1_value(wc[:, 0::3], xi, eta) ** 2 + q1_value(wc[:, 1::3], xi, eta) ** 2
        wq = GAUSS2_W * g.cell_area
        return float(np.sqrt(np.sum((ux + vy) ** 2 * wq))), float(np.sqrt(np.sum(speed2 * wq)))


# --- interface traction ---------------------------------------------------------

def traction_matrix(decomp: CutDecomposition, solid_dofs: np.ndarray, fluid_dofs: np.ndarray,
                    n_solid: int, n_fluid: int) -> sp.csr_matrix:
    """Matrix ``T`` with ``(T w) . v = int_Gamma (n . grad u - p n) . v``."""
    grid = decomp.grid
    q = decomp.interface
    if q.cells.size == 0:
        return sp.csr_matrix((n_solid, n_fluid))
    xi, eta, w = value(q.xi), value(q.eta), value(q.w)
    nx, ny = value(q.nx), value(q.ny)
    N = q1_shape(xi, eta)  # (nc, q, 4)
    G = q1_shape_grad(xi, eta, grid.hx, grid.hy)  # (nc, q, 4, 2)
    dn = G[..., 0] * nx[..., None] + G[..., 1] * ny[..., None]
    blocks = np.zeros((len(q.cells), 8, 12))
    for i, n_i in enumerate((nx, ny)):
        blocks[:, i::2, i::3] = np.einsum("cq,cqa,cqb->cab", w, N, dn)
        blocks[:, i::2, PRES::3] = -np.einsum("cq,cqa,cqb->cab", w * n_i, N, N)
    return coupling_matrix(solid_dofs[q.cells], fluid_dofs[q.cells], blocks, (n_solid, n_fluid))


def traction_shape(decomp: CutDecomposition, solid_dofs, fluid_dofs, lam_d: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Nodal derivative of ``lam_d . (T(phi) w)`` with respect to phi."""
    grid = decomp.grid
    lc = lam_d[solid_dofs]
    wc = w[fluid_dofs]

    def integrand(cells, xi, eta, nx, ny):
        total = 0.0
        p = q1_value(wc[cells][:, PRES::3], xi, eta)
        for i, n_i in zip(VEL, (nx, ny)):
            gx, gy = q1_gradient(wc[cells][:, i::3], xi, eta, grid.hx, grid.hy)
            t_i = nx * gx + ny * gy - p * n_i
            total = total + t_i * q1_value(lc[cells][:, i::2], xi, eta)
        return total

    return interface_partials(decomp, integrand)


def interface_force(decomp: CutDecomposition, w: np.ndarray, fluid_dofs: np.ndarray) -> np.ndarray:
    """Total force ``int_Gamma (n . grad u - p n)`` on the solid."""
    n = decomp.grid.n_nodes
    solid_dofs = FeSpaceQ1(decomp.grid, 2).cell_dofs
    T = traction_matrix(decomp, solid_dofs, fluid_dofs, 2 * n, 3 * n)
    load = T @ w
    return np.array([load[0::2].sum(), load[1::2].sum()])
