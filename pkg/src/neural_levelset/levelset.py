"""Level-set processing: smoothing, reinitialization and volume translation.

``process`` maps the raw nodal vector produced by the parameterization to the
level set used by the physics, and ``pipeline_backward`` pulls a gradient with
respect to that level set back to the raw vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import cutcell
from .dual import Dual, add_rows, stack, take_rows, value, where
from .mesh import (GAUSS2_ETA, GAUSS2_W, GAUSS2_XI, LINE2_T, LINE2_W, Assembler, CartesianGrid, SparseSystem, q1_gradient,
                   q1_shape, q1_shape_grad, q1_value)

log = logging.getLogger(__name__)


class PipelineError(ValueError):
    pass


# --- smoothing ------------------------------------------------------------------

@dataclass
class SmoothingFilter:
    matrix: sp.csr_matrix
    radius: float

    def __call__(self, phi: np.ndarray) -> np.ndarray:
        return self.matrix @ phi

    def transpose(self, g: np.ndarray) -> np.ndarray:
        return self.matrix.T @ g


def build_filter(grid: CartesianGrid, radius: float) -> SmoothingFilter:
    """Cone filter ``w_ij = max(0, r - |x_i - x_j|)`` with normalized rows."""
    if radius <= 0:
        raise ValueError("filter radius must be positive")
    mi = int(np.ceil(radius / grid.hx))
    mj = int(np.ceil(radius / grid.hy))
    I, J = np.meshgrid(np.arange(grid.nx + 1), np.arange(grid.ny + 1))
    I, J = I.ravel(), J.ravel()
    rows, cols, vals = [], [], []
    for dj in range(-mj, mj + 1):
        for di in range(-mi, mi + 1):
            w = radius - np.hypot(di * grid.hx, dj * grid.hy)
            if w <= 0:
                continue
            i2, j2 = I + di, J + dj
            ok = (i2 >= 0) & (i2 <= grid.nx) & (j2 >= 0) & (j2 <= grid.ny)
            rows.append(grid.node_index(I[ok], J[ok]))
            cols.append(grid.node_index(i2[ok], j2[ok]))
            vals.append(np.full(ok.sum(), w))
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.n_nodes,) * 2)
    W = sp.diags(1.0 / np.asarray(W.sum(axis=1)).ravel()) @ W
    return SmoothingFilter(sp.csr_matrix(W), radius)


def smooth(phi_n: np.ndarray, filt: SmoothingFilter) -> np.ndarray:
    return filt(phi_n)


# --- reinitialization -------------------------------------------------------------

_N = q1_shape(GAUSS2_XI, GAUSS2_ETA)  # (4 points, 4 shapes)
_RAMP_WIDTH = 0.5


def _outflow_ramp(s):
    """C1 ramp: 0 for inflow (``s <= 0``), 1 once ``s >= _RAMP_WIDTH``."""
    t = where(value(s) <= 0.0, 0.0, where(value(s) >= _RAMP_WIDTH, 1.0, s * (1.0 / _RAMP_WIDTH)))
    return t * t * (3.0 - 2.0 * t)


@dataclass
class ReinitResult:
    phi: np.ndarray
    iterations: int
    converged: bool
    jacobian: SparseSystem
    interface: cutcell.CutDecomposition
    phi_f: np.ndarray


class Reinitializer:
    """Steady stabilized reinitialization solved with Picard iterations.

    The residual for test function ``v`` is::

        int_Omega (w.grad(phi) v + nu grad(phi).grad(v) - S v)
            + (penalty / h) int_Gamma phi v  -  int_dOmega q v

    with ``w = S grad(phi)/|grad(phi)|`` and viscosity ``nu = c_a h |w|``.
    Gamma is the zero contour of the input ``phi_f`` and stays fixed.

    ``sign_source="input"`` evaluates the regularized sign on the input,
    ``S = phi_f / sqrt(phi_f^2 + h^2 |grad phi_f|^2)``, which is invariant to
    the scale of ``phi_f`` and cannot flip during the iteration.  With
    ``"iterate"`` it is ``phi/sqrt(phi^2 + h^2)`` of the current iterate.

    ``boundary="input"`` sets the outer flux ``q = nu (n.grad phi_f)/|grad phi_f|``
    on outflow edges (faded out by a C1 ramp where characteristics enter),
    which a distance function satisfies; ``"natural"`` uses ``q = 0`` and
    leaves a boundary layer of width ~c_a h at outflow edges.

    A Picard step freezes the direction and magnitude of ``w`` at the previous
    iterate.  After the Picard loop a few Newton steps with the exact Jacobian
    remove the remaining fixed-point error, so the output is the discrete
    solution up to round-off and the same Jacobian serves the adjoint.
    """

    def __init__(self, grid: CartesianGrid, c_a: float = 3.0, penalty: float = 1.0, tol: float = 1e-6,
                 max_iter: int = 50, newton_steps: int = 8, grad_floor: float = 1e-12,
                 boundary: str = "input", sign_source: str = "input"):
        if sign_source not in ("input", "iterate"):
            raise ValueError(f"unknown sign source {sign_source!r}")
        if boundary not in ("natural", "input"):
            raise ValueError(f"unknown boundary mode {boundary!r}")
        self.grid = grid
        self.c_a = c_a
        self.penalty = penalty
        self.tol = tol
        self.max_iter = max_iter
        self.newton_steps = newton_steps
        self.grad_floor = grad_floor
        self.boundary = boundary
        self.sign_source = sign_source
        self._gamma = penalty / grid.h
        self.assembler = Assembler(grid.cell_nodes, grid.n_nodes)
        self._dN = q1_shape_grad(GAUSS2_XI, GAUSS2_ETA, grid.hx, grid.hy)  # (4, 4, 2)
        self._w = GAUSS2_W * grid.cell_area
        self._edges = self._boundary_edges()

    def _boundary_edges(self):
        """Per side: cells, edge points, weights, shape values and outward normal."""
        g = self.grid
        t = LINE2_T
        i, j = np.arange(g.nx), np.arange(g.ny)
        sides = [
            (i, t, np.zeros(2), g.hx, (0.0, -1.0)),
            (j * g.nx + g.nx - 1, np.ones(2), t, g.hy, (1.0, 0.0)),
            ((g.ny - 1) * g.nx + i, t, np.ones(2), g.hx, (0.0, 1.0)),
            (j * g.nx, np.zeros(2), t, g.hy, (-1.0, 0.0)),
        ]
        return [(cells, xi[None, :], eta[None, :], LINE2_W * length, q1_shape(xi, eta), n)
                for cells, xi, eta, length, n in sides]

    def _gnorm(self, gx, gy):
        """Floored gradient norm and ``|grad phi| / floored norm`` (no partials)."""
        n2 = gx * gx + gy * gy
        val = np.sqrt(np.asarray(value(n2)))
        safe = val > self.grad_floor
        ratio = np.where(safe, 1.0, val / self.grad_floor)
        if isinstance(n2, Dual):
            r = (n2 * safe + (1.0 - safe)).sqrt()
            return Dual(np.where(safe, r.val, self.grad_floor), r.d * safe[..., None]), ratio
        return np.maximum(val, self.grad_floor), ratio

    def _coefficients(self, pk, pf, xi, eta):
        """Sign, ``S/|grad phi|``, frozen gradient and viscosity at points."""
        g = self.grid
        h = g.h
        gx, gy = q1_gradient(pk, xi, eta, g.hx, g.hy)
        if self.sign_source == "input":
            fq = q1_value(pf, xi, eta)
            fx, fy = q1_gradient(pf, xi, eta, g.hx, g.hy)
            S = fq / (fq * fq + h * h * (fx * fx + fy * fy) + 1e-300) ** 0.5
        else:
            pq = q1_value(pk, xi, eta)
            S = pq / (pq * pq + h * h) ** 0.5
        gn, ratio = self._gnorm(gx, gy)
        nu = abs(S) * (self.c_a * h * ratio)
        return S, S / gn, gx, gy, nu

    def element_terms(self, pk, pc, pf):
        """Per-cell residual (shape ``(n_cells, 4)``, Dual if an input is).

        ``pk`` supplies the frozen coefficients, ``pc`` the unknown and ``pf``
        the input level set.  Passing the same Dual seed for ``pk`` and ``pc``
        gives the exact Jacobian, seeding only ``pc`` gives the Picard matrix
        and seeding ``pf`` gives the input sensitivity used by the adjoint.
        """
        g = self.grid
        xi, eta = GAUSS2_XI[None, :], GAUSS2_ETA[None, :]
        S, s_over_gn, gxk, gyk, nu = self._coefficients(pk, pf, xi, eta)
        gx, gy = q1_gradient(pc, xi, eta, g.hx, g.hy)
        adv = s_over_gn * (gxk * gx + gyk * gy) - S
        terms = []
        for a in range(4):
            ta = adv * (self._w * _N[:, a]) + nu * gx * (self._w * self._dN[:, a, 0]) \
                + nu * gy * (self._w * self._dN[:, a, 1])
            terms.append(ta.sum(1))
        R = stack(terms, -1)
        if self.boundary == "natural":
            return R
        for cells, bxi, beta, bw, N, n in self._edges:
            pfb = take_rows(pf, cells)
            bS, _, _, _, bnu = self._coefficients(take_rows(pk, cells), pfb, bxi, beta)
            fx, fy = q1_gradient(pfb, bxi, beta, g.hx, g.hy)
            gn, _ = self._gnorm(fx, fy)
            cos = (fx * n[0] + fy * n[1]) / gn
            flux = bnu * cos * _outflow_ramp(np.sign(value(bS)) * cos)
            contrib = stack([(flux * (bw * N[:, a])).sum(1) for a in range(4)], -1)
            R = add_rows(R, cells, -1.0 * contrib)
        return R

    def interface_matrix(self, decomp) -> sp.csr_matrix:
        q = decomp.interface
        if q.cells.size == 0:
            return sp.csr_matrix((self.grid.n_nodes,) * 2)
        xi, eta, w = (np.asarray(getattr(a, "val", a)) for a in (q.xi, q.eta, q.w))
        N = q1_shape(xi, eta)
        Ke = self._gamma * np.einsum("nq,nqa,nqb->nab", w, N, N)
        asm = Assembler(self.grid.cell_nodes[q.cells], self.grid.n_nodes)
        return asm.matrix(Ke)

    def picard_system(self, phi, phi_f):
        cn = self.grid.cell_nodes
        pc = phi[cn]
        R = self.element_terms(pc, Dual.seed(pc), phi_f[cn])
        Fe = np.einsum("nab,nb->na", R.d, pc) - R.val
        return self.assembler.matrix(R.d), self.assembler.vector(Fe)

    def residual(self, phi, phi_f, G):
        cn = self.grid.cell_nodes
        pc = phi[cn]
        return self.assembler.vector(self.element_terms(pc, pc, phi_f[cn])) + G @ phi

    def jacobian(self, phi, phi_f, G) -> sp.csr_matrix:
        cn = self.grid.cell_nodes
        pc = Dual.seed(phi[cn])
        return self.assembler.matrix(self.element_terms(pc, pc, phi_f[cn]).d) + G

    def __call__(self, phi_f: np.ndarray) -> ReinitResult:
        grid = self.grid
        phi_f = np.asarray(phi_f, dtype=float)
        decomp = cutcell.decompose(grid, phi_f, dual=True)
        if decomp.segments.shape[0] == 0:
            raise PipelineError("reinitialization undefined for single-phase field")
        G = self.interface_matrix(decomp)
        phi = phi_f.copy()
        tol = self.tol * grid.diagonal
        converged = False
        it = 0
        change = np.inf
        for it in range(1, self.max_iter + 1):
            A, b = self.picard_system(phi, phi_f)
            new = SparseSystem(A + G, b, name="reinitialization (Picard)").solve()
            change = np.max(np.abs(new - phi))
            phi = new
            if change < tol:
                converged = True
                break
        if not converged:
            log.warning("reinitialization did not converge in %d Picard iterations (last change %.3e)",
                        self.max_iter, change)
        for _ in range(self.newton_steps):
            R = self.residual(phi, phi_f, G)
            step = SparseSystem(self.jacobian(phi, phi_f, G), name="reinitialization Jacobian").solve(-R)
            phi = phi + step
            if np.max(np.abs(step)) < 1e-13 * grid.diagonal:
                break
        Jsys = SparseSystem(self.jacobian(phi, phi_f, G), name="reinitialization Jacobian")
        return ReinitResult(phi, it, converged, Jsys, decomp, phi_f)

    def vjp(self, result: ReinitResult, g_s: np.ndarray) -> np.ndarray:
        """Pull ``dJ/dphi_s`` back to ``dJ/dphi_f``.

        One transpose solve gives the multiplier; the input enters through the
        interface location and, for ``sign_source="input"``, the sign field.
        """
        lam = result.jacobian.solve(g_s, transpose=True)
        phi_s = result.phi
        cn = self.grid.cell_nodes

        def integrand(cells, xi, eta, nx, ny):
            return q1_value(phi_s[cn[cells]], xi, eta) * q1_value(lam[cn[cells]], xi, eta)

        _, (cells, partials) = cutcell.integrate_interface(result.interface, integrand, dual=True)
        g_f = -self._gamma * cutcell.scatter_partials(self.grid, cells, partials)
        if self.sign_source == "input":
            pc = phi_s[cn]
            R = self.element_terms(pc, pc, Dual.seed(result.phi_f[cn]))
            g_f -= self.assembler.vector(np.einsum("na,nab->nb", lam[cn], R.d))
        return g_f


# --- volume translation --------------------------------------------------------------

@dataclass
class DesignRegion:
    """Restrict the design to masked nodes; other nodes take fixed values."""

    mask: np.ndarray
    fixed: np.ndarray

    def apply(self, phi):
        return np.where(self.mask, phi, self.fixed)

    def backward(self, g):
        return np.where(self.mask, g, 0.0)


def volume_translate(grid: CartesianGrid, phi_s: np.ndarray, target: float, region: DesignRegion | None = None,
                     max_steps: int = 100, tol: float = 1e-6):
    """Find ``b`` with ``vol({phi_s + b > 0}) = target`` by bisection.

    The bracket is ``[-max phi_s, -min phi_s]``.  Bisection runs until the
    volume error is at round-off level (never looser than ``tol * |Omega|``).
    """
    if not (0.0 < target < grid.area):
        raise ValueError(f"target volume {target} must lie in (0, {grid.area})")
    phi_s = np.asarray(phi_s, float)
    design = phi_s if region is None else phi_s[region.mask]
    if np.ptp(design) == 0:
        raise PipelineError("volume translation needs a non-constant level set")

    def residual(b):
        phi = phi_s + b
        if region is not None:
            phi = region.apply(phi)
        return cutcell.in_area(grid, phi) - target

    lo, hi = -float(design.max()), -float(design.min())
    # a node exactly at zero snaps inside, so widen by a hair
    span = hi - lo
    lo -= 1e-9 * span
    hi += 1e-9 * span
    f_lo, f_hi = residual(lo), residual(hi)
    if f_lo > 0 or f_hi < 0:
        raise PipelineError(f"volume bracket failed: V(lo)-V0={f_lo:.3e}, V(hi)-V0={f_hi:.3e}")
    best_b, best_f = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = residual(mid)
        if abs(f) < abs(best_f):
            best_b, best_f = mid, f
        if f == 0.0 or abs(f) < 1e-15 * grid.area:
            break
        if f < 0:
            lo = mid
        else:
            hi = mid
    if abs(best_f) > tol * grid.area:
        raise PipelineError(f"volume translation stalled at residual {best_f:.3e}")
    phi_b = phi_s + best_b
    return phi_b, best_b


# --- full pipeline ----------------------------------------------------------------------

@dataclass
class PipelineTape:
    phi_n: np.ndarray
    phi_f: np.ndarray
    phi_s: np.ndarray
    phi_b: np.ndarray
    bias: float
    reinit: ReinitResult
    phi: np.ndarray


@dataclass
class LevelSetPipeline:
    grid: CartesianGrid
    volume_fraction: float
    filter_radius: float | None = None
    c_a: float = 3.0
    penalty: float = 1.0
    reinit_tol: float = 1e-6
    reinit_max_iter: int = 50
    boundary: str = "input"
    sign_source: str = "input"
    region: DesignRegion | None = None
    target_volume: float | None = None
    filt: SmoothingFilter = field(init=False)

    def __post_init__(self):
        if self.filter_radius is None:
            self.filter_radius = 3.0 * self.grid.h
        self.filt = build_filter(self.grid, self.filter_radius)
        self.reinit = Reinitializer(self.grid, self.c_a, self.penalty, self.reinit_tol, self.reinit_max_iter,
                                   boundary=self.boundary, sign_source=self.sign_source)
        if self.target_volume is None:
            self.target_volume = self.volume_fraction * self.grid.area

    def process(self, varphi: np.ndarray):
        varphi = np.asarray(varphi, float)
        if varphi.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} nodal values, got {varphi.shape}")
        phi_n = varphi.copy()  # nodal values are the Q1 coefficients
        phi_f = self.filt(phi_n)
        rr = self.reinit(phi_f)
        phi_b, b = volume_translate(self.grid, rr.phi, self.target_volume, self.region)
        phi = phi_b if self.region is None else self.region.apply(phi_b)
        return phi, PipelineTape(phi_n, phi_f, rr.phi, phi_b, b, rr, phi)

    def backward(self, tape: PipelineTape, dJ_dphi: np.ndarray) -> np.ndarray:
        g = np.asarray(dJ_dphi, float)
        if self.region is not None:
            g = self.region.backward(g)
        # implicit function theorem for the volume constraint V(phi_s, b) = 0
        _, dV = cutcell.in_area(self.grid, tape.phi, dual=True)
        if self.region is not None:
            dV = self.region.backward(dV)
        dV_db = dV.sum()
        if dV_db == 0:
            raise PipelineError("volume is insensitive to translation (empty interface)")
        g_s = g - (g.sum() / dV_db) * dV
        g_f = self.reinit.vjp(tape.reinit, g_s)
        return self.filt.transpose(g_f)


def process(pipeline: LevelSetPipeline, varphi):
    return pipeline.process(varphi)


def pipeline_backward(pipeline: LevelSetPipeline, tape: PipelineTape, dJ_dphi):
    return pipeline.backward(tape, dJ_dphi)
