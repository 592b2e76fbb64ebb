"""Forward map with a tape, and the full backward pass ``dJ/dp``.

Forward: parameters -> nodal design field -> (level set | density) ->
physics solve -> objective.  Backward, in order: objective partials and the
PDE adjoint(s) inside the physics object, the design-map backward (volume
constraint, reinitialization adjoint, filter transpose) and the network
backward.  Factorizations from the forward solve are reused.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import Model
from .network import make_rng


class TapeError(RuntimeError):
    """Backward pass requested on a missing or failed forward pass."""


@dataclass
class GradientTape:
    model: Model
    p: np.ndarray
    varphi: np.ndarray | None = None
    net_cache: object = None
    design_tape: object = None
    design: np.ndarray | None = None  # level set phi or density rho
    state: object = None
    J: float = float("nan")
    volume_residual: float = float("nan")
    valid: bool = False
    timings: dict = field(default_factory=dict)


def forward_and_tape(p: np.ndarray, model: Model) -> tuple[float, GradientTape]:
    p = np.asarray(p, float)
    if p.shape != (model.param.size,):
        raise ValueError(f"expected {model.param.size} parameters, got {p.shape}")
    tape = GradientTape(model, p.copy())
    t0 = time.perf_counter()
    tape.varphi, tape.net_cache = model.param.forward(p)
    tape.design, tape.design_tape = model.design_forward(tape.varphi)
    tape.state = model.problem.solve(tape.design)
    tape.J = float(tape.state.J)
    if not np.isfinite(tape.J):
        raise FloatingPointError("objective is not finite")
    tape.volume_residual = model.volume(tape.design) - model.target_volume
    tape.valid = True
    tape.timings["forward"] = time.perf_counter() - t0
    return tape.J, tape


def backward(tape: GradientTape, seed: float = 1.0) -> np.ndarray:
    """``seed * dJ/dp`` from a valid tape."""
    if tape is None or not tape.valid:
        raise TapeError("backward needs a valid tape from forward_and_tape")
    model = tape.model
    t0 = time.perf_counter()
    g_field = seed * model.problem.gradient(tape.state)
    g_varphi = model.design_backward(tape.design_tape, g_field)
    g = model.param.backward(tape.p, g_varphi, tape.net_cache)
    tape.timings["backward"] = time.perf_counter() - t0
    return g


def value_and_grad(p: np.ndarray, model: Model):
    J, tape = forward_and_tape(p, model)
    return J, backward(tape), tape


def objective(p: np.ndarray, model: Model) -> float:
    return forward_and_tape(p, model)[0]


# --- finite-difference validation ----------------------------------------------------

@dataclass
class GradcheckRow:
    direction: int
    analytic: float
    fd: float
    rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    rows: list
    tolerance: float
    eps: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def max_error(self) -> float:
        return max((r.rel_error for r in self.rows), default=0.0)


def relative_error(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def gradcheck(model: Model, p: np.ndarray, n_directions: int = 5, eps: float = 1e-4, tol: float = 1e-3,
              seed: int = 0) -> GradcheckReport:
    """Directional derivatives ``g . v`` against central differences.

    Directions are unit vectors drawn from the run's generator; ``eps`` is the
    step along each direction.
    """
    rng = make_rng(seed + 7919)
    _, g, _ = value_and_grad(p, model)
    rows = []
    for k in range(n_directions):
        v = rng.standard_normal(p.size)
        v /= np.linalg.norm(v)
        fd = (objective(p + eps * v, model) - objective(p - eps * v, model)) / (2 * eps)
        a = float(g @ v)
        err = relative_error(a, fd)
        rows.append(GradcheckRow(k, a, fd, err, err < tol))
    return GradcheckReport(rows, tol, eps)
