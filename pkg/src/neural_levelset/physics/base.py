"""Common forward/adjoint skeleton for single-field FCM problems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .. import cutcell
from ..cutcell import CutDecomposition
from ..mesh import CartesianGrid, FeSpaceQ1, SparseSystem, eliminate
from .fcm import check_nonempty


@dataclass
class PdeState:
    """Everything the backward pass needs from one forward solve."""

    phi: np.ndarray
    decomp: CutDecomposition
    u: np.ndarray
    system: SparseSystem
    J: float
    extra: dict = field(default_factory=dict)


class LinearFcmProblem:
    """Linear problem ``A(phi) u = b(phi)`` with objective ``J(u, phi)``.

    Subclasses provide ``grid``, ``space`` and the four hooks ``assemble``,
    ``objective``, ``objective_partials`` and ``residual_shape``.  The residual
    is ``R = A u - b`` so that ``dJ/dphi = dJ/dphi|_u - lam^T dR/dphi`` with
    ``A^T lam = dJ/du``.
    """

    kind = "linear"
    grid: CartesianGrid
    space: FeSpaceQ1

    def assemble(self, decomp: CutDecomposition) -> tuple[sp.csr_matrix, np.ndarray]:
        raise NotImplementedError

    def objective(self, decomp: CutDecomposition, u: np.ndarray) -> float:
        raise NotImplementedError

    def objective_partials(self, state: PdeState) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(dJ/du, dJ/dphi)`` at fixed state / fixed level set."""
        raise NotImplementedError

    def residual_shape(self, state: PdeState, lam: np.ndarray) -> np.ndarray:
        """Nodal vector ``lam^T dR/dphi``."""
        raise NotImplementedError

    def decompose(self, phi: np.ndarray) -> CutDecomposition:
        decomp = cutcell.decompose(self.grid, phi, dual=True)
        check_nonempty(decomp)
        return decomp

    def solve(self, phi: np.ndarray) -> PdeState:
        phi = np.asarray(phi, float)
        decomp = self.decompose(phi)
        A, b = self.assemble(decomp)
        system = eliminate(A, b, self.space, name=f"{self.kind} system")
        u = self.space.expand(system.solve())
        return PdeState(phi, decomp, u, system, self.objective(decomp, u))

    def adjoint(self, state: PdeState, dJ_du: np.ndarray) -> np.ndarray:
        lam = np.zeros(self.space.n_dofs)
        lam[self.space.free] = state.system.solve(dJ_du[self.space.free], transpose=True)
        return lam

    def gradient(self, state: PdeState) -> np.ndarray:
        """Total derivative ``dJ/dphi`` at the nodes."""
        dJ_du, dJ_dphi = self.objective_partials(state)
        lam = self.adjoint(state, dJ_du)
        state.extra["adjoint"] = lam
        return dJ_dphi - self.residual_shape(state, lam)
