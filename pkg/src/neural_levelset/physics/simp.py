"""Density (SIMP) baselines on the same grid and Q1 space.

The design field is mapped to a nodal density ``rho = sigmoid(F varphi + c)``
with the cone filter ``F`` and a scalar logit offset ``c`` found by bisection
so that ``int rho = V0``.  The coefficient ``alpha + (1 - alpha) rho^gamma``
is evaluated at the Gauss points of an ordinary (uncut) assembly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect
from scipy.special import expit

from .. import cutcell
from ..levelset import build_filter, volume_translate
from ..mesh import GAUSS2_ETA, GAUSS2_W, GAUSS2_XI, Assembler, CartesianGrid, SparseSystem, eliminate, q1_shape, q1_shape_grad, reference_load
from .elasticity import mbb_supports, strain_matrix, vector_space
from .fcm import Materials
from .heat import dirichlet_space


def simp_material(rho, alpha: float, gamma: float = 3.0):
    """Power-law coefficient ``alpha + (1 - alpha) rho^gamma``."""
    rho = np.asarray(rho, float)
    if np.any(rho < 0) or np.any(rho > 1) or not np.all(np.isfinite(rho)):
        raise ValueError("densities must lie in [0, 1]")
    return alpha + (1.0 - alpha) * rho ** gamma


def simp_material_derivative(rho, alpha: float, gamma: float = 3.0):
    return (1.0 - alpha) * gamma * np.asarray(rho, float) ** (gamma - 1.0)


@dataclass
class DensityTape:
    z: np.ndarray
    offset: float
    rho: np.ndarray


@dataclass
class DensityMap:
    """``varphi -> rho`` with the volume constraint built in."""

    grid: CartesianGrid
    volume_fraction: float
    filter_radius: float | None = None

    def __post_init__(self):
        if not (0.0 < self.volume_fraction < 1.0):
            raise ValueError("volume fraction must lie in (0,1)")
        if self.filter_radius is None:
            self.filter_radius = 3.0 * self.grid.h
        self.filt = build_filter(self.grid, self.filter_radius)
        g = self.grid
        self.mass = Assembler(g.cell_nodes, g.n_nodes).vector(np.broadcast_to(reference_load(g.hx, g.hy), (g.n_cells, 4)))
        self.target = self.volume_fraction * g.area

    def volume(self, rho: np.ndarray) -> float:
        return float(self.mass @ rho)

    def forward(self, varphi: np.ndarray):
        z = self.filt(np.asarray(varphi, float))
        f = lambda c: self.volume(expit(z + c)) - self.target
        lo, hi = -z.max() - 40.0, -z.min() + 40.0
        c = bisect(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
        rho = expit(z + c)
        return rho, DensityTape(z, c, rho)

    def backward(self, tape: DensityTape, g_rho: np.ndarray) -> np.ndarray:
        # d rho = s (dz + dc), with dc = -(m s . dz) / (m . s) from the volume constraint
        s = tape.rho * (1.0 - tape.rho)
        a = s * g_rho
        ms = self.mass * s
        g_z = a - ms * (a.sum() / ms.sum())
        return self.filt.transpose(g_z)


@dataclass
class SimpState:
    rho: np.ndarray
    u: np.ndarray
    system: SparseSystem
    J: float
    extra: dict = field(default_factory=dict)


class _SimpBase:
    """Gauss-point material interpolation shared by heat and elasticity."""

    alpha: float
    gamma: float

    def _gauss(self):
        g = self.grid
        self._N = q1_shape(GAUSS2_XI, GAUSS2_ETA)  # (4 q, 4 a)
        self._w = GAUSS2_W * g.cell_area

    def _coef(self, rho):
        rq = rho[self.grid.cell_nodes] @ self._N.T  # (n_cells, q)
        rq = np.clip(rq, 0.0, 1.0)
        return rq, simp_material(rq, self.alpha, self.gamma)

    def _rho_gradient(self, rho, energy_q):
        """Nodal ``-lam^T dK/drho u`` given per-point energies ``(n_cells, q)``."""
        rq, _ = self._coef(rho)
        dk = simp_material_derivative(rq, self.alpha, self.gamma)
        ge = -np.einsum("q,cq,qa->ca", self._w, dk * energy_q, self._N)
        return cutcell.scatter_partials(self.grid, np.arange(self.grid.n_cells), ge)


@dataclass
class SimpHeat(_SimpBase):
    """Heat conduction with ``k(rho)``, uniform source, ``J = int theta``."""

    grid: CartesianGrid
    materials: Materials = field(default_factory=Materials)
    dirichlet_edges: tuple = ("top", "left")
    kind = "simp_heat"

    def __post_init__(self):
        self.alpha, self.gamma = self.materials.alpha_T, self.materials.gamma
        self.space = dirichlet_space(self.grid, self.dirichlet_edges)
        self.asm = Assembler(self.grid.cell_nodes, self.grid.n_nodes)
        self._gauss()
        g = self.grid
        self._G = q1_shape_grad(GAUSS2_XI, GAUSS2_ETA, g.hx, g.hy)  # (q, 4, 2)
        self._lap_q = np.einsum("qai,qbi->qab", self._G, self._G)
        self.ones = self.asm.vector(np.broadcast_to(reference_load(g.hx, g.hy), (g.n_cells, 4)))

    def solve(self, rho: np.ndarray) -> SimpState:
        _, k = self._coef(rho)
        Ke = self.materials.kappa * np.einsum("q,cq,qab->cab", self._w, k, self._lap_q)
        A = self.asm.matrix(Ke)
        system = eliminate(A, self.materials.source * self.ones, self.space, name="SIMP heat system")
        u = self.space.expand(system.solve())
        return SimpState(rho, u, system, float(self.ones @ u))

    def gradient(self, state: SimpState) -> np.ndarray:
        lam = np.zeros(self.space.n_dofs)
        lam[self.space.free] = state.system.solve(self.ones[self.space.free], transpose=True)
        c = self.grid.cell_nodes
        gt = np.einsum("qai,ca->cqi", self._G, state.u[c])
        gl = np.einsum("qai,ca->cqi", self._G, lam[c])
        return self._rho_gradient(state.rho, self.materials.kappa * np.sum(gt * gl, -1))


@dataclass
class SimpElasticity(_SimpBase):
    """MBB compliance ``F . d`` with ``E(rho)``."""

    grid: CartesianGrid
    materials: Materials = field(default_factory=Materials)
    force: float = 1.0
    kind = "simp_mbb"

    def __post_init__(self):
        g = self.grid
        self.alpha, self.gamma = self.materials.alpha_d, self.materials.gamma
        self.space = vector_space(g, mbb_supports(g))
        self.asm = Assembler(self.space.cell_dofs, self.space.n_dofs)
        self._gauss()
        self._B = strain_matrix(GAUSS2_XI, GAUSS2_ETA, g.hx, g.hy)  # (q, 3, 8)
        self.Dm = self.materials.plane_strain()
        self._Kq = np.einsum("qsa,st,qtb->qab", self._B, self.Dm, self._B)
        self.load = np.zeros(self.space.n_dofs)
        self.load[2 * int(g.node_index(0, g.ny)) + 1] = -self.force

    def solve(self, rho: np.ndarray) -> SimpState:
        _, E = self._coef(rho)
        Ke = np.einsum("q,cq,qab->cab", self._w, E, self._Kq)
        system = eliminate(self.asm.matrix(Ke), self.load, self.space, name="SIMP elasticity system")
        u = self.space.expand(system.solve())
        return SimpState(rho, u, system, float(self.load @ u))

    def gradient(self, state: SimpState) -> np.ndarray:
        # compliance is self-adjoint: lam = d
        dc = state.u[self.space.cell_dofs]
        eps = np.einsum("qsa,ca->cqs", self._B, dc)
        energy = np.einsum("cqs,st,cqt->cq", eps, self.Dm, eps)
        return self._rho_gradient(state.rho, energy)


def density_to_levelset(grid: CartesianGrid, rho: np.ndarray, target_volume: float) -> np.ndarray:
    """0.5-contour of the density, translated to meet the volume exactly."""
    phi, _ = volume_translate(grid, np.asarray(rho, float) - 0.5, target_volume)
    return phi
