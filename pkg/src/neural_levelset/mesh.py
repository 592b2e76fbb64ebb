"""Cartesian background mesh, Q1 shape functions, quadrature and sparse solves.

Node numbering is row-major with x running fastest: node ``(i, j)`` has index
``j * (nx + 1) + i``.  Cell ``(i, j)`` has index ``j * nx + i`` and its corners
are listed counter-clockwise starting from the lower-left one.  Vector fields
are interleaved node-major, i.e. dof ``2 * node + component``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)

# 2x2 Gauss rule on the reference square [0, 1]^2
_G = 0.5 / np.sqrt(3.0)
GAUSS2_XI = np.array([0.5 - _G, 0.5 + _G, 0.5 + _G, 0.5 - _G])
GAUSS2_ETA = np.array([0.5 - _G, 0.5 - _G, 0.5 + _G, 0.5 + _G])
GAUSS2_W = np.full(4, 0.25)

# degree-2 rule on triangles, barycentric coordinates, weights sum to 1
TRI3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
TRI3_W = np.full(3, 1 / 3)

# 2-point Gauss rule on [0, 1]
LINE2_T = np.array([0.5 - _G, 0.5 + _G])
LINE2_W = np.array([0.5, 0.5])

# 3-point Gauss rule on [0, 1], exact to degree 5
_x3, _w3 = np.polynomial.legendre.leggauss(3)
LINE3_T = 0.5 * (_x3 + 1.0)
LINE3_W = 0.5 * _w3


class SolverError(RuntimeError):
    """Raised when a sparse factorization or solve fails."""


@dataclass(frozen=True)
class CartesianGrid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ValueError(f"cell counts must be positive, got nx={self.nx}, ny={self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"domain lengths must be positive, got lx={self.lx}, ly={self.ly}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def shape(self) -> tuple[int, int]:
        """Nodal image shape ``(rows, cols) = (ny + 1, nx + 1)``."""
        return self.ny + 1, self.nx + 1

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.lx, self.ly))

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    @cached_property
    def node_coords(self) -> np.ndarray:
        i = np.arange(self.nx + 1)
        j = np.arange(self.ny + 1)
        x = self.origin[0] + i * self.hx
        y = self.origin[1] + j * self.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        i, j = i.ravel(), j.ravel()
        n0 = self.node_index(i, j)
        return np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])

    @cached_property
    def cell_origin(self) -> np.ndarray:
        """Lower-left corner coordinates of every cell, shape (n_cells, 2)."""
        return self.node_coords[self.cell_nodes[:, 0]]

    def edge_nodes(self, edge: str) -> np.ndarray:
        nx, ny = self.nx, self.ny
        if edge == "left":
            return self.node_index(0, np.arange(ny + 1))
        if edge == "right":
            return self.node_index(nx, np.arange(ny + 1))
        if edge == "bottom":
            return self.node_index(np.arange(nx + 1), 0)
        if edge == "top":
            return self.node_index(np.arange(nx + 1), ny)
        raise ValueError(f"unknown edge {edge!r}")

    def locate(self, point) -> tuple[int, float, float]:
        """Return ``(cell, xi, eta)`` for a point in the closed domain."""
        x = (point[0] - self.origin[0]) / self.hx
        y = (point[1] - self.origin[1]) / self.hy
        tol = 1e-12
        if not (-tol <= x <= self.nx + tol and -tol <= y <= self.ny + tol):
            raise ValueError(f"point {tuple(point)} lies outside the domain")
        i = min(max(int(np.floor(x)), 0), self.nx - 1)
        j = min(max(int(np.floor(y)), 0), self.ny - 1)
        return j * self.nx + i, x - i, y - j


def build_grid(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> CartesianGrid:
    return CartesianGrid(int(nx), int(ny), float(lx), float(ly))


# --- Q1 shape functions on the reference square -------------------------------

def q1_shape(xi, eta) -> np.ndarray:
    """Bilinear shape functions, stacked along a new last axis of length 4."""
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def q1_shape_grad(xi, eta, hx: float, hy: float) -> np.ndarray:
    """Physical gradients of the shape functions, shape ``(..., 4, 2)``."""
    xi, eta = np.broadcast_arrays(np.asarray(xi, float), np.asarray(eta, float))
    dx = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1) / hx
    dy = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1) / hy
    return np.stack([dx, dy], axis=-1)


def q1_value(c, xi, eta):
    """Evaluate a Q1 field with per-cell corner values ``c`` (shape (n, 4)).

    ``xi``/``eta`` may be arrays of shape (n, q) or Dual numbers; the corner
    values broadcast over the point axis.
    """
    c0, c1, c2, c3 = (c[:, k, None] for k in range(4))
    return c0 + (c1 - c0) * xi + (c3 - c0) * eta + (c0 - c1 + c2 - c3) * (xi * eta)


def q1_gradient(c, xi, eta, hx: float, hy: float):
    """Physical gradient ``(gx, gy)`` of a Q1 field with corner values ``c``."""
    c0, c1, c2, c3 = (c[:, k, None] for k in range(4))
    a = c0 - c1 + c2 - c3
    gx = ((c1 - c0) + a * eta) * (1.0 / hx)
    gy = ((c3 - c0) + a * xi) * (1.0 / hy)
    return gx, gy


def reference_laplace(hx: float, hy: float) -> np.ndarray:
    G = q1_shape_grad(GAUSS2_XI, GAUSS2_ETA, hx, hy)
    return np.einsum("q,qai,qbi->ab", GAUSS2_W * hx * hy, G, G)


def reference_mass(hx: float, hy: float) -> np.ndarray:
    N = q1_shape(GAUSS2_XI, GAUSS2_ETA)
    return np.einsum("q,qa,qb->ab", GAUSS2_W * hx * hy, N, N)


def reference_load(hx: float, hy: float) -> np.ndarray:
    return np.full(4, 0.25 * hx * hy)


def interpolate_at(grid: CartesianGrid, coefficients: np.ndarray, point) -> float:
    """Bilinear interpolation of a scalar nodal field at ``point``."""
    coefficients = np.asarray(coefficients, float)
    if coefficients.shape != (grid.n_nodes,):
        raise ValueError("coefficient vector does not match the grid")
    cell, xi, eta = grid.locate(point)
    c = coefficients[grid.cell_nodes[cell]][None, :]
    return float(q1_value(c, np.array([[xi]]), np.array([[eta]]))[0, 0])


# --- FE spaces and sparse systems ---------------------------------------------

@dataclass
class FeSpaceQ1:
    """Nodal Q1 space with ``n_components`` values per node and Dirichlet data."""

    grid: CartesianGrid
    n_components: int = 1
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        order = np.argsort(self.fixed, kind="stable")
        self.fixed = np.asarray(self.fixed, dtype=int)[order]
        self.fixed_values = np.broadcast_to(np.asarray(self.fixed_values, float), self.fixed.shape)[order].copy()
        if np.unique(self.fixed).size != self.fixed.size:
            raise ValueError("duplicate Dirichlet dofs")
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)

    @property
    def n_dofs(self) -> int:
        return self.grid.n_nodes * self.n_components

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        nodes = self.grid.cell_nodes
        k = self.n_components
        return (nodes[:, :, None] * k + np.arange(k)).reshape(len(nodes), -1)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[self.fixed] = True
        return mask

    def expand(self, free_values: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[self.free] = free_values
        u[self.fixed] = self.fixed_values
        return u

    def lifting(self) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[self.fixed] = self.fixed_values
        return u


class Assembler:
    """Scatter element matrices into a global CSR matrix with a fixed pattern."""

    def __init__(self, cell_dofs: np.ndarray, n_dofs: int):
        self.cell_dofs = cell_dofs
        self.n_dofs = n_dofs
        k = cell_dofs.shape[1]
        self.rows = np.repeat(cell_dofs, k, axis=1).ravel()
        self.cols = np.tile(cell_dofs, (1, k)).ravel()

    def matrix(self, element_matrices: np.ndarray) -> sp.csr_matrix:
        A = sp.coo_matrix((element_matrices.ravel(), (self.rows, self.cols)), shape=(self.n_dofs, self.n_dofs))
        A = A.tocsr()
        A.eliminate_zeros()
        return A

    def vector(self, element_vectors: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell_dofs.ravel(), weights=element_vectors.ravel(), minlength=self.n_dofs)


class SparseSystem:
    """Free-dof block of a linear system after Dirichlet elimination.

    The factorization is computed lazily and kept, so adjoint (transposed)
    solves reuse the forward LU factors.
    """

    def __init__(self, matrix, rhs=None, name: str = "system"):
        self.matrix = sp.csc_matrix(matrix)
        self.rhs = None if rhs is None else np.asarray(rhs, float)
        self.name = name
        self._lu = None

    @property
    def lu(self):
        if self._lu is None:
            try:
                self._lu = splu(self.matrix, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverError(f"factorization of {self.name} failed: {exc}") from exc
        return self._lu

    def solve(self, rhs=None, transpose: bool = False) -> np.ndarray:
        b = self.rhs if rhs is None else np.asarray(rhs, float)
        if b.size == 0:
            return np.zeros(0)
        trans = "T" if transpose else "N"
        A = self.matrix.T if transpose else self.matrix
        x = self.lu.solve(b, trans=trans)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"solve of {self.name} produced non-finite values")
        bnorm = np.linalg.norm(b)
        r = b - A @ x
        if np.linalg.norm(r) > 1e-10 * bnorm:
            x = x + self.lu.solve(r, trans=trans)
            r = b - A @ x
            res = np.linalg.norm(r) / bnorm
            if res > 1e-6:
                raise SolverError(f"{self.name} is singular or too ill-conditioned: relative residual {res:.2e}")
            if res > 1e-8:
                log.warning("%s: relative residual %.2e after refinement", self.name, res)
        return x


def solve_sparse(system: SparseSystem, transpose: bool = False) -> np.ndarray:
    return system.solve(transpose=transpose)


def eliminate(A: sp.spmatrix, b: np.ndarray, space: FeSpaceQ1, name: str = "system") -> SparseSystem:
    """Row/column elimination of Dirichlet dofs with symmetric lifting."""
    A = sp.csr_matrix(A)
    free, fixed = space.free, space.fixed
    A_ff = A[free][:, free]
    rhs = b[free].copy()
    if fixed.size and np.any(space.fixed_values):
        rhs -= A[free][:, fixed] @ space.fixed_values
    return SparseSystem(A_ff, rhs, name=name)
