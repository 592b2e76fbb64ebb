"""Finite-cell assembly shared by the physics modules.

A bilinear form with coefficient ``a_in`` on ``{phi > 0}`` and ``a_out`` on
the rest is integrated cell by cell as

    a_out * (full cell, 2x2 Gauss) + (a_in - a_out) * (IN part, cut quadrature)

so uncut cells reuse one reference matrix and only cut cells touch the
sub-triangulation.  The derivative of the form with respect to the level set
lives entirely in the IN-part integral and is obtained from dual-number
quadrature points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .. import cutcell
from ..cutcell import IN, OUT, CutDecomposition
from ..dual import value
from ..mesh import GAUSS2_ETA, GAUSS2_W, GAUSS2_XI, CartesianGrid

# kernel(xi, eta) -> (..., k, k) matrix integrand or (..., k) vector integrand
Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


class PhysicsError(RuntimeError):
    """Raised when a discrete problem cannot be set up or solved."""


@dataclass(frozen=True)
class Materials:
    """Material constants of all benchmark problems."""

    kappa: float = 1.0
    E: float = 1.0
    nu: float = 0.3
    mu_f: float = 1.0
    alpha_u: float = 25000.0
    alpha_out: float = 1e-3
    source: float = 0.01
    gamma: float = 3.0
    alpha_T: float = 0.01
    alpha_d: float = 0.001

    def __post_init__(self):
        if not (0.0 < self.alpha_out < 1.0):
            raise ValueError("alpha_out must lie in (0, 1)")
        if not (-1.0 < self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if self.gamma < 1.0:
            raise ValueError("SIMP exponent must be >= 1")
        if min(self.kappa, self.E, self.mu_f) <= 0:
            raise ValueError("kappa, E and mu_f must be positive")

    @property
    def lame_lambda(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def lame_mu(self) -> float:
        return self.E / (2 * (1 + self.nu))

    def plane_strain(self) -> np.ndarray:
        """Constitutive matrix acting on (e_xx, e_yy, 2 e_xy)."""
        lam, mu = self.lame_lambda, self.lame_mu
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])


def gauss_points(n: int):
    xi = np.broadcast_to(GAUSS2_XI, (n, 4))
    eta = np.broadcast_to(GAUSS2_ETA, (n, 4))
    return xi, eta


def reference_integral(grid: CartesianGrid, kernel: Kernel) -> np.ndarray:
    """Full-cell integral of a coefficient-free kernel."""
    vals = kernel(GAUSS2_XI, GAUSS2_ETA)
    return np.tensordot(GAUSS2_W * grid.cell_area, vals, axes=(0, 0))


def in_part(decomp: CutDecomposition, kernel: Kernel) -> np.ndarray:
    """Integral of ``kernel`` over the IN part of every cut cell."""
    q = decomp.inside
    if q.cells.size == 0:
        ref = kernel(GAUSS2_XI[:1], GAUSS2_ETA[:1])
        return np.zeros((0,) + ref.shape[1:])
    vals = kernel(value(q.xi), value(q.eta))
    w = value(q.w)
    return np.einsum("cq,cq...->c...", w, vals)


def cell_integrals(decomp: CutDecomposition, kernel: Kernel, a_in: float, a_out: float) -> np.ndarray:
    """Per-cell integrals of ``a(x) * kernel`` with ``a`` piecewise constant."""
    grid = decomp.grid
    ref = reference_integral(grid, kernel)
    coef = np.where(decomp.tags == IN, a_in, a_out).astype(float)
    out = coef.reshape((-1,) + (1,) * ref.ndim) * ref
    cut = decomp.cut_cells
    if cut.size and a_in != a_out:
        out[cut] += (a_in - a_out) * in_part(decomp, kernel)
    return out


def side_integrals(decomp: CutDecomposition, kernel: Kernel, side: int = IN) -> np.ndarray:
    """Per-cell integrals of ``kernel`` restricted to one side."""
    a_in, a_out = (1.0, 0.0) if side == IN else (0.0, 1.0)
    return cell_integrals(decomp, kernel, a_in, a_out)


def shape_partials(decomp: CutDecomposition, integrand, a_in: float, a_out: float) -> np.ndarray:
    """Nodal derivative of ``sum_cells int a(x) integrand`` with respect to phi.

    ``integrand(cells, xi, eta)`` must accept dual quadrature points.  Only
    cut cells contribute, through their IN part.
    """
    if a_in == a_out or decomp.cut_cells.size == 0:
        return np.zeros(decomp.grid.n_nodes)
    _, (cells, partials) = cutcell.integrate_bulk(decomp, IN, integrand, dual=True)
    return (a_in - a_out) * cutcell.scatter_partials(decomp.grid, cells, partials)


def interface_partials(decomp: CutDecomposition, integrand) -> np.ndarray:
    """Nodal derivative of an interface integral ``integrand(cells, xi, eta, nx, ny)``."""
    if decomp.cut_cells.size == 0:
        return np.zeros(decomp.grid.n_nodes)
    _, (cells, partials) = cutcell.integrate_interface(decomp, integrand, dual=True)
    return cutcell.scatter_partials(decomp.grid, cells, partials)


def check_nonempty(decomp: CutDecomposition) -> None:
    if np.all(decomp.tags == OUT):
        raise PhysicsError("the material region is empty")


def coupling_matrix(rows: np.ndarray, cols: np.ndarray, blocks: np.ndarray, shape) -> sp.csr_matrix:
    """Scatter per-cell rectangular blocks ``(n, kr, kc)`` into a sparse matrix."""
    kr, kc = blocks.shape[1:]
    r = np.repeat(rows, kc, axis=1).reshape(len(rows), kr, kc)
    c = np.tile(cols, (1, kr)).reshape(len(cols), kr, kc)
    return sp.coo_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()
