"""Cut-cell decomposition of a nodal level set and quadrature on the pieces.

Every cut quadrilateral is split into four triangles through its centroid
(centroid value = mean of the corners).  On each triangle the level set is
linear, so its zero line is straight; mixed-sign triangles are split into the
lone-vertex triangle and a quadrilateral made of two triangles.  All vertex
positions, weights and normals are computed with :class:`~.dual.Dual`
numbers seeded on the four corner values, which gives the exact derivative
of any cut-cell integral with respect to the cell-local level-set values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dual as D
from .dual import Dual
from .mesh import GAUSS2_ETA, GAUSS2_W, GAUSS2_XI, LINE3_T, LINE3_W, TRI3_BARY, TRI3_W, CartesianGrid

IN, OUT, CUT = 1, -1, 0

# reference coordinates of the 4 corners followed by the centroid
_REF_XI = np.array([0.0, 1.0, 1.0, 0.0, 0.5])
_REF_ETA = np.array([0.0, 0.0, 1.0, 1.0, 0.5])
# triangle t uses corners t, t+1 and the centroid (index 4), counter-clockwise
_TRI_VERTS = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])


def default_snap(grid: CartesianGrid) -> float:
    return 1e-10 * grid.h


def snap_levelset(phi: np.ndarray, delta0: float) -> np.ndarray:
    """Move values with ``|phi| < delta0`` to ``+delta0`` (ties resolve to IN)."""
    if delta0 <= 0:
        raise ValueError("snap threshold must be positive")
    phi = np.array(phi, dtype=float)
    phi[np.abs(phi) < delta0] = delta0
    return phi


def cell_tags(grid: CartesianGrid, phi: np.ndarray) -> np.ndarray:
    pc = phi[grid.cell_nodes]
    tags = np.full(grid.n_cells, CUT, dtype=int)
    tags[np.all(pc > 0, axis=1)] = IN
    tags[np.all(pc < 0, axis=1)] = OUT
    return tags


@dataclass
class CutQuadrature:
    """Quadrature points on cut cells, padded with zero weights.

    ``xi``/``eta`` are reference coordinates in the cell, ``w`` physical
    weights.  With dual data every entry is a :class:`Dual` whose partials
    refer to the 4 corner level-set values of the cell.
    """

    cells: np.ndarray
    xi: object
    eta: object
    w: object


@dataclass
class InterfaceQuadrature(CutQuadrature):
    nx: object = None
    ny: object = None


@dataclass
class CutDecomposition:
    grid: CartesianGrid
    phi: np.ndarray
    tags: np.ndarray
    cut_cells: np.ndarray
    inside: CutQuadrature
    outside: CutQuadrature
    interface: InterfaceQuadrature
    is_dual: bool
    triangles: dict
    segments: np.ndarray

    def side(self, side: int) -> CutQuadrature:
        return self.inside if side == IN else self.outside

    def full_cells(self, side: int) -> np.ndarray:
        return np.flatnonzero(self.tags == side)

    def cut_fraction(self) -> np.ndarray:
        """In-side area fraction of every cell."""
        frac = (self.tags == IN).astype(float)
        frac[self.cut_cells] = D.value(self.inside.w).sum(axis=1) / self.grid.cell_area
        return frac


def _triangle_data(grid: CartesianGrid, pc, dual: bool):
    """Sub-triangle vertex data for the cut cells with corner values ``pc``."""
    nc = pc.shape[0]
    corner = Dual.seed(pc) if dual else pc
    center = D.dsum(corner, 1) * 0.25
    phi5 = D.stack([corner[:, 0], corner[:, 1], corner[:, 2], corner[:, 3], center], axis=1)
    idx = np.broadcast_to(_TRI_VERTS.reshape(1, 12), (nc, 12))
    phv = D.take_along(phi5, idx, 1).reshape(nc, 4, 3)
    xi = np.broadcast_to(_REF_XI[_TRI_VERTS], (nc, 4, 3))
    eta = np.broadcast_to(_REF_ETA[_TRI_VERTS], (nc, 4, 3))

    pos = D.value(phv) > 0
    npos = pos.sum(-1)
    mixed = (npos == 1) | (npos == 2)
    lone = np.where(npos == 1, np.argmax(pos, -1), np.argmin(pos, -1))
    lone = np.where(mixed, lone, 0)
    rot = (lone[..., None] + np.arange(3)) % 3
    phv = D.take_along(phv, rot, 2)
    xi = np.take_along_axis(xi, rot, 2)
    eta = np.take_along_axis(eta, rot, 2)
    a_in = np.take_along_axis(pos, rot, 2)[..., 0]

    pa, pb, pcc = phv[..., 0], phv[..., 1], phv[..., 2]
    tab = pa / D.where(mixed, pa - pb, 1.0)
    tac = pa / D.where(mixed, pa - pcc, 1.0)
    tab = D.where(mixed, tab, 0.0)
    tac = D.where(mixed, tac, 0.0)
    A = (xi[..., 0], eta[..., 0])
    B = (xi[..., 1], eta[..., 1])
    C = (xi[..., 2], eta[..., 2])
    P = (A[0] + tab * (B[0] - A[0]), A[1] + tab * (B[1] - A[1]))
    Q = (A[0] + tac * (C[0] - A[0]), A[1] + tac * (C[1] - A[1]))
    return dict(A=A, B=B, C=C, P=P, Q=Q, mixed=mixed, a_in=a_in, tab=tab, tac=tac)


def _tri_area(v0, v1, v2, cell_area):
    return 0.5 * cell_area * ((v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]))


def _subtriangles(t):
    """Three sub-triangles per triangle with their in/out indicators."""
    A, B, C, P, Q, mixed, a_in = t["A"], t["B"], t["C"], t["P"], t["Q"], t["mixed"], t["a_in"]
    T1 = (A, (D.where(mixed, P[0], B[0]), D.where(mixed, P[1], B[1])),
          (D.where(mixed, Q[0], C[0]), D.where(mixed, Q[1], C[1])))
    T2 = (P, B, C)
    T3 = (P, C, Q)
    in_mask = [a_in, mixed & ~a_in, mixed & ~a_in]
    out_mask = [~a_in, mixed & a_in, mixed & a_in]
    return [T1, T2, T3], in_mask, out_mask


def _flatten(x, nc):
    """(nc, a, b) -> (nc, a * b); explicit size so that nc = 0 works."""
    shape = D.value(x).shape
    return x.reshape(nc, int(np.prod(shape[1:])))


def _side_quadrature(cells, tris, masks, cell_area) -> CutQuadrature:
    nc = len(cells)
    xs, es, ws = [], [], []
    for (v0, v1, v2), m in zip(tris, masks):
        area = _tri_area(v0, v1, v2, cell_area) * m
        for b, wq in zip(TRI3_BARY, TRI3_W):
            xs.append(v0[0] * b[0] + v1[0] * b[1] + v2[0] * b[2])
            es.append(v0[1] * b[0] + v1[1] * b[1] + v2[1] * b[2])
            ws.append(area * wq)
    # (nc, 4 triangles, 9 points) -> (nc, 36)
    xi, eta, w = (_flatten(D.stack(v, axis=2), nc) for v in (xs, es, ws))
    return CutQuadrature(cells, xi, eta, w)


def _interface_quadrature(grid, cells, t) -> InterfaceQuadrature:
    nc = len(cells)
    P, Q, mixed, a_in = t["P"], t["Q"], t["mixed"], t["a_in"]
    dx = (Q[0] - P[0]) * grid.hx
    dy = (Q[1] - P[1]) * grid.hy
    L2 = dx * dx + dy * dy
    ok = mixed & (D.value(L2) > 0)
    L = D.where(ok, D.sqrt(D.where(ok, L2, 1.0)), 0.0)
    Ls = D.where(ok, L, 1.0)
    sgn = np.where(a_in, 1.0, -1.0)
    # outward normal of the counter-clockwise lone triangle along P->Q
    nrm_x = dy / Ls * sgn
    nrm_y = -dx / Ls * sgn
    xs, es, ws, nxs, nys = [], [], [], [], []
    for s, wq in zip(LINE3_T, LINE3_W):
        xs.append(P[0] + s * (Q[0] - P[0]))
        es.append(P[1] + s * (Q[1] - P[1]))
        ws.append(L * wq)
        nxs.append(nrm_x)
        nys.append(nrm_y)
    pack = lambda items: _flatten(D.stack(items, axis=2), nc)
    return InterfaceQuadrature(cells, pack(xs), pack(es), pack(ws), pack(nxs), pack(nys))


def decompose(grid: CartesianGrid, phi: np.ndarray, dual: bool = True, delta0: float | None = None) -> CutDecomposition:
    """Classify cells and build cut-cell quadratures for a nodal level set.

    ``phi`` is snapped with ``delta0`` (default ``1e-10 * h``) first, so exact
    zeros never reach the geometry code.
    """
    phi = np.asarray(phi, float)
    if phi.shape != (grid.n_nodes,):
        raise ValueError("level set does not match the grid")
    phi = snap_levelset(phi, default_snap(grid) if delta0 is None else delta0)
    tags = cell_tags(grid, phi)
    cut = np.flatnonzero(tags == CUT)
    pc = phi[grid.cell_nodes[cut]]
    t = _triangle_data(grid, pc, dual)
    tris, in_mask, out_mask = _subtriangles(t)
    ca = grid.cell_area
    inside = _side_quadrature(cut, tris, in_mask, ca)
    outside = _side_quadrature(cut, tris, out_mask, ca)
    iface = _interface_quadrature(grid, cut, t)
    triangles, segments = _export_geometry(grid, cut, tris, in_mask, out_mask, t)
    return CutDecomposition(grid, phi, tags, cut, inside, outside, iface, dual, triangles, segments)


def _export_geometry(grid, cut, tris, in_mask, out_mask, t):
    origin = grid.cell_origin[cut][:, None, :]
    scale = np.array([grid.hx, grid.hy])

    def phys(v):
        return origin + np.stack(np.broadcast_arrays(D.value(v[0]), D.value(v[1])), -1) * scale

    out = {}
    for name, masks in (("in", in_mask), ("out", out_mask)):
        polys = []
        for (v0, v1, v2), m in zip(tris, masks):
            area = D.value(_tri_area(v0, v1, v2, 1.0))
            keep = m & (area > 0)
            tri = np.stack([phys(v0), phys(v1), phys(v2)], axis=2)  # (nc, 4, 3, 2)
            polys.append(tri[keep])
        out[name] = np.concatenate(polys) if polys else np.zeros((0, 3, 2))
    P, Q = phys(t["P"]), phys(t["Q"])
    seg = np.stack([P, Q], axis=2)[t["mixed"]]
    return out, seg


# --- fast in-volume ------------------------------------------------------------

def in_area(grid: CartesianGrid, phi: np.ndarray, dual: bool = False, delta0: float | None = None):
    """Area of ``{phi > 0}`` under the sub-triangle interpolant.

    With ``dual=True`` also returns the nodal gradient of the area.
    """
    phi = snap_levelset(phi, default_snap(grid) if delta0 is None else delta0)
    tags = cell_tags(grid, phi)
    cut = np.flatnonzero(tags == CUT)
    pc = phi[grid.cell_nodes[cut]]
    t = _triangle_data(grid, pc, dual)
    # every centroid triangle covers a quarter of the cell
    lone = t["tab"] * t["tac"]
    frac = D.where(t["mixed"], D.where(t["a_in"], lone, 1.0 - lone), t["a_in"].astype(float))
    cut_area = D.dsum(frac, 1) * (0.25 * grid.cell_area)
    area = np.count_nonzero(tags == IN) * grid.cell_area + float(D.value(cut_area).sum())
    if not dual:
        return area
    grad = scatter_partials(grid, cut, cut_area.d)
    return area, grad


# --- integration ------------------------------------------------------------------

Integrand = Callable[[np.ndarray, object, object], object]


def scatter_partials(grid: CartesianGrid, cells: np.ndarray, partials: np.ndarray) -> np.ndarray:
    """Assemble per-cell corner partials (n, 4) into a nodal vector."""
    return np.bincount(grid.cell_nodes[cells].ravel(), weights=np.asarray(partials).ravel(), minlength=grid.n_nodes)


def _full_cell_integral(grid, cells, integrand):
    if cells.size == 0:
        return 0.0
    xi = np.broadcast_to(GAUSS2_XI, (len(cells), 4))
    eta = np.broadcast_to(GAUSS2_ETA, (len(cells), 4))
    vals = np.asarray(integrand(cells, xi, eta), float)
    return float(np.sum(vals * (GAUSS2_W * grid.cell_area)))


def integrate_bulk(decomp: CutDecomposition, side: int, integrand: Integrand, dual: bool = False):
    """Integrate ``integrand(cells, xi, eta)`` over the IN or OUT region.

    Returns the value, and with ``dual=True`` also ``(cells, partials)`` where
    ``partials[k]`` is the derivative of cell ``cells[k]``'s contribution with
    respect to its 4 corner level-set values.
    """
    grid = decomp.grid
    total = _full_cell_integral(grid, decomp.full_cells(side), integrand)
    q = decomp.side(side)
    if q.cells.size:
        vals = integrand(q.cells, q.xi, q.eta)
        contrib = D.dsum(vals * q.w, 1)
        total += float(D.value(contrib).sum())
    else:
        contrib = None
    if not dual:
        return total
    if not decomp.is_dual:
        raise ValueError("decomposition was built without dual numbers")
    partials = contrib.d if contrib is not None else np.zeros((0, 4))
    return total, (q.cells, partials)


def integrate_interface(decomp: CutDecomposition, integrand, dual: bool = False):
    """Integrate ``integrand(cells, xi, eta, nx, ny)`` over the interface."""
    q = decomp.interface
    if q.cells.size == 0:
        return (0.0, (q.cells, np.zeros((0, 4)))) if dual else 0.0
    vals = integrand(q.cells, q.xi, q.eta, q.nx, q.ny)
    contrib = D.dsum(vals * q.w, 1)
    total = float(D.value(contrib).sum())
    if not dual:
        return total
    return total, (q.cells, contrib.d)


def bulk_partials_nodal(decomp, side, integrand):
    value, (cells, partials) = integrate_bulk(decomp, side, integrand, dual=True)
    return value, scatter_partials(decomp.grid, cells, partials)


def unit(cells, xi, eta, *normal):
    return np.ones(np.shape(D.value(xi)))
