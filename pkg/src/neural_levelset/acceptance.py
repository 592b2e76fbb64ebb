"""Acceptance battery: thirteen end-to-end checks, each with its own tolerance.

Every check returns a :class:`CriterionResult`; :func:`run_battery` runs a
selection and :func:`format_table` prints one pass/fail line per check.
Runtime limits are part of the pass condition where a check states one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import cutcell
from .adjoint import backward, forward_and_tape, gradcheck, objective, relative_error, value_and_grad
from .config import make_config
from .levelset import Reinitializer
from .mesh import CartesianGrid, build_grid, q1_gradient
from .model import Model
from .network import (DecoderConfig, ParamLayout, conv2d, conv2d_backward, init_params, layer_backward,
                      layer_forward, make_rng, network_backward, network_forward, normalize,
                      normalize_backward, param_count, resize, resize_backward)
from .optimize import multi_seed, run
from .physics.fcm import Materials
from .physics.fsi import FsiLayout, FsiProblem, fsi_grid
from .physics.heat import HeatProblem
from .physics.stokes import interface_force


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s)"


class _Context:
    """Shared state so checks 5 and 10 reuse the same heat runs."""

    def __init__(self, workers: int = 1):
        self.workers = workers
        self.heat_runs = None
        self.heat_seconds = 0.0

    def heat(self):
        if self.heat_runs is None:
            cfg = make_config("heat", n_seeds=5)
            t0 = time.perf_counter()
            self.heat_runs = (multi_seed(cfg, 5, 200, workers=self.workers), cfg)
            self.heat_seconds = time.perf_counter() - t0
        return self.heat_runs


# --- geometry ---------------------------------------------------------------------------

def geometry_oracle(ctx=None):
    g = build_grid(64, 64)
    X = g.node_coords
    r = 0.3
    phi = r - np.hypot(X[:, 0] - 0.5, X[:, 1] - 0.5)
    t0 = time.perf_counter()
    d = cutcell.decompose(g, phi, dual=False)
    area = cutcell.in_area(g, phi)
    perim = cutcell.integrate_interface(d, cutcell.unit)
    dt = time.perf_counter() - t0
    ea = abs(area - np.pi * r * r) / (np.pi * r * r)
    ep = abs(perim - 2 * np.pi * r) / (2 * np.pi * r)
    ok = ea < 1e-3 and ep < 1e-2 and dt < 1.0
    return ok, f"area err {ea:.2e} (< 1e-3), perimeter err {ep:.2e} (< 1e-2), {dt:.3f} s (< 1 s)"


def conservation(ctx=None):
    rng = make_rng(2024)
    worst = 0.0
    for k in range(100):
        nx, ny = rng.integers(2, 24, size=2)
        g = CartesianGrid(int(nx), int(ny), float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 3)))
        phi = rng.standard_normal(g.n_nodes)
        d = cutcell.decompose(g, phi, dual=False)
        a_in = cutcell.integrate_bulk(d, cutcell.IN, cutcell.unit)
        a_out = cutcell.integrate_bulk(d, cutcell.OUT, cutcell.unit)
        worst = max(worst, abs(a_in + a_out - g.area))
    return worst <= 1e-12, f"max |IN + OUT - |Omega|| = {worst:.2e} over 100 fields (<= 1e-12)"


def _patch_area(grid: CartesianGrid, phi: np.ndarray, node: int):
    """Area of the cells around ``node`` as a function of a perturbation of ``phi[node]``.

    Only these cells depend on the node, and differencing a small local area
    avoids the cancellation of differencing the whole-domain area.
    """
    P = phi.reshape(grid.shape)
    ix, jy = node % (grid.nx + 1), node // (grid.nx + 1)
    i0, i1 = max(ix - 1, 0), min(ix + 1, grid.nx)
    j0, j1 = max(jy - 1, 0), min(jy + 1, grid.ny)
    sub = CartesianGrid(i1 - i0, j1 - j0, (i1 - i0) * grid.hx, (j1 - j0) * grid.hy)
    local = P[j0:j1 + 1, i0:i1 + 1].copy()
    delta0 = cutcell.default_snap(grid)

    def area(d):
        q = local.copy()
        q[jy - j0, ix - i0] += d
        return cutcell.in_area(sub, q.ravel(), delta0=delta0)

    return area


def cut_derivative(ctx=None):
    g = build_grid(16, 16)
    phi = make_rng(3).standard_normal(g.n_nodes)
    _, da = cutcell.in_area(g, phi, dual=True)
    eps = 1e-4
    worst, checked = 0.0, 0
    for i in range(g.n_nodes):
        if abs(phi[i]) < 4 * eps:
            continue  # degenerate: the stencil would cross the node's sign change
        f = _patch_area(g, phi, i)
        fd = (8 * (f(eps) - f(-eps)) - (f(2 * eps) - f(-2 * eps))) / (12 * eps)
        if max(abs(fd), abs(da[i])) < 1e-14:
            continue  # node not touching any cut cell: both exactly zero
        worst = max(worst, relative_error(da[i], fd))
        checked += 1
    return worst <= 1e-6, f"max rel err {worst:.2e} over {checked} nodes (<= 1e-6)"


def reinit_plane(ctx=None):
    g = build_grid(32, 32)
    X = g.node_coords
    x0 = 0.47
    res = Reinitializer(g)(3.0 * (X[:, 0] - x0))
    phi = res.phi
    # |grad phi| at cell centres of cells whose centre is > 2h from the interface
    c = g.cell_origin + 0.5 * np.array([g.hx, g.hy])
    far = np.abs(c[:, 0] - x0) > 2 * g.h
    pc = phi[g.cell_nodes][far]
    gx, gy = q1_gradient(pc, np.full((far.sum(), 1), 0.5), np.full((far.sum(), 1), 0.5), g.hx, g.hy)
    err = np.sqrt(np.mean((np.hypot(gx, gy) - 1.0) ** 2))
    # zero contour along every grid row
    P = phi.reshape(g.shape)
    xs = []
    for row in P:
        k = np.nonzero(np.sign(row[:-1]) != np.sign(row[1:]))[0][0]
        t = row[k] / (row[k] - row[k + 1])
        xs.append((k + t) * g.hx)
    shift = np.max(np.abs(np.array(xs) - x0))
    ok = err <= 0.1 and shift < 0.5 * g.h
    return ok, f"L2(|grad phi| - 1) = {err:.3f} (<= 0.1), contour shift {shift / g.h:.2e} h (< 0.5 h)"


# --- physics ----------------------------------------------------------------------------

def volume_constraint(ctx):
    res, cfg = ctx.heat()
    area = cfg.grid.area
    worst = max(np.max(np.abs(r.volume_residual)) for r in res.records)
    n = sum(r.iterations for r in res.records)
    return worst <= 1e-6 * area, f"max |vol - V0| = {worst:.2e} over {n} iterates (<= {1e-6 * area:.0e})"


def fcm_convergence(ctx=None):
    g = build_grid(16, 16)
    X = g.node_coords
    ref_grid = CartesianGrid(8, 16, 0.5, 1.0, origin=(0.5, 0.0))
    ref = HeatProblem(ref_grid, Materials(alpha_out=0.01), dirichlet_edges=("top",)).solve(np.ones(ref_grid.n_nodes)).u
    inside = X[:, 0] >= 0.5 - 1e-12
    errs = []
    for a in (1e-2, 1e-3, 1e-4):
        u = HeatProblem(g, Materials(alpha_out=a)).solve(X[:, 0] - 0.5).u
        errs.append(np.max(np.abs(u[inside] - ref)) / np.max(np.abs(ref)))
    ok = errs[0] > errs[1] > errs[2]
    return ok, "rel. max error " + ", ".join(f"{e:.2e}" for e in errs) + " for alpha_out 1e-2, 1e-3, 1e-4"


def node_crossing(ctx=None):
    t0 = time.perf_counter()
    g = build_grid(16, 16)
    X = g.node_coords
    prob = HeatProblem(g, Materials(alpha_out=0.01))
    eps = np.linspace(-0.1 * g.h, 0.1 * g.h, 41)
    step = 1e-3 * (eps[1] - eps[0])

    def levelset(e):
        return X[:, 0] - (0.5 + e)

    J, dJ, fd = [], [], []
    for e in eps:
        st = prob.solve(levelset(e))
        J.append(st.J)
        dJ.append(-prob.gradient(st).sum())  # d phi / d eps = -1 at every node
        fd.append((prob.solve(levelset(e + step)).J - prob.solve(levelset(e - step)).J) / (2 * step))
    J, dJ, fd = map(np.array, (J, dJ, fd))
    rel = np.array([relative_error(a, b) for a, b in zip(dJ, fd)])
    # continuity: neighbouring values differ by no more than a slope bound allows
    jumps = np.abs(np.diff(J))
    bound = 10 * np.maximum(np.abs(dJ[:-1]), np.abs(dJ[1:])) * (eps[1] - eps[0])
    continuous = bool(np.all(jumps <= bound))
    bad = np.nonzero(rel > 1e-3)[0]
    dt = time.perf_counter() - t0
    ok = continuous and bad.size == 0 and dt < 30
    where = ", ".join(f"eps={eps[i] / g.h:+.3f}h" for i in bad) or "none"
    return ok, (f"continuous={continuous}, max rel err {rel.max():.2e} (<= 1e-3), "
                f"{41 - bad.size}/41 samples match, failing at: {where}")


# --- gradients --------------------------------------------------------------------------

def full_chain(ctx=None):
    t0 = time.perf_counter()
    cfg = make_config("heat", mesh={"nx": 12, "ny": 12})
    model = Model(cfg)
    rep = gradcheck(model, model.init_params(0), n_directions=5, eps=1e-4, tol=1e-3)
    pcfg = make_config("heat", parameterization="pixel-ls", mesh={"nx": 8, "ny": 8})
    pm = Model(pcfg)
    p = pm.init_params(0)
    _, g, _ = value_and_grad(p, pm)
    eps = 1e-5
    worst = 0.0
    for i in range(p.size):
        e = np.zeros(p.size)
        e[i] = eps
        fd = (objective(p + e, pm) - objective(p - e, pm)) / (2 * eps)
        if abs(g[i]) < 1e-12:
            continue  # relative error is meaningless for vanishing entries
        worst = max(worst, relative_error(g[i], fd))
    dt = time.perf_counter() - t0
    ok = rep.passed and worst <= 1e-3 and dt < 120
    return ok, (f"network 5 directions max rel err {rep.max_error:.2e}, pixel {p.size} coordinates "
                f"max rel err {worst:.2e} (<= 1e-3)")


def backward_cost(ctx=None):
    model = Model(make_config("heat"))
    p = model.init_params(0)
    forward_and_tape(p, model)  # warm caches
    fw, bw = [], []
    for _ in range(3):
        _, tape = forward_and_tape(p, model)
        backward(tape)
        fw.append(tape.timings["forward"])
        bw.append(tape.timings["backward"])
    f, b = min(fw), min(bw)
    return b <= 3 * f, f"forward {f:.3f} s, backward {b:.3f} s, ratio {b / f:.2f} (<= 3)"


# --- optimization -----------------------------------------------------------------------

def _optimization_checks(res, ratio=0.75):
    msgs, ok = [], not res.failures
    for r in res.records:
        if not r.final_J < r.initial_J:
            ok = False
            msgs.append(f"seed {r.seed} did not improve")
        if np.any(np.diff(r.best_so_far) > 0):
            ok = False
            msgs.append(f"seed {r.seed} best-so-far increases")
    b = res.best
    q = b.final_J / b.initial_J
    ok = ok and q <= ratio
    msgs.insert(0, f"best seed {b.seed}: final/initial {q:.3f} (<= {ratio}), "
                   f"all seeds improved: {all(r.final_J < r.initial_J for r in res.records)}")
    return ok, msgs


def heat_optimization(ctx):
    res, _ = ctx.heat()
    ok, msgs = _optimization_checks(res)
    msgs.append(f"5-seed runtime {ctx.heat_seconds:.0f} s (< 900 s)")
    return ok and ctx.heat_seconds < 900, "; ".join(msgs)


def mbb_optimization(ctx):
    cfg = make_config("mbb", n_seeds=5)
    res = multi_seed(cfg, 5, 300, workers=ctx.workers)
    ok, msgs = _optimization_checks(res)
    simp = Model(make_config("mbb", parameterization="pixel-simp"))
    rec = run(simp, 0, 300)
    q = rec.final_levelset_J / res.best.final_J
    msgs.append(f"pixel-simp contour J {rec.final_levelset_J:.4g} / nn-ls {res.best.final_J:.4g} = {q:.2f} (<= 2)")
    return ok and q <= 2.0, "; ".join(msgs)


def fsi_smoke(ctx=None):
    t0 = time.perf_counter()
    g = fsi_grid(32, 16)
    layout = FsiLayout()
    prob = FsiProblem(g, layout=layout)
    empty = layout.region(g).apply(-np.ones(g.n_nodes))
    flow = prob.fluid.solve(cutcell.decompose(g, empty))
    div, un = prob.fluid.divergence_norm(flow.w)
    div_ok = div < 1e-2 * un
    # closed interface (circle) with u = 0, p = 1
    X = g.node_coords
    circle = 0.3 - np.hypot(X[:, 0] - 1.0, X[:, 1] - 0.5)
    w = np.zeros(prob.fluid.space.n_dofs)
    w[2::3] = 1.0
    force = interface_force(cutcell.decompose(g, circle), w, prob.fluid.dofs)
    f_ok = np.max(np.abs(force)) <= 1e-10
    model = Model(make_config("fsi_support"))
    rep = gradcheck(model, model.init_params(0), n_directions=5, eps=1e-4, tol=1e-2)
    dt = time.perf_counter() - t0
    ok = div_ok and f_ok and rep.passed and dt < 300
    return ok, (f"||div u|| / ||u|| = {div / un:.3f} (< 1e-2), closed-interface force {np.max(np.abs(force)):.1e} "
                f"(<= 1e-10), gradcheck max rel err {rep.max_error:.2e} (<= 1e-2)")


# --- network ----------------------------------------------------------------------------

def _enumerate_params(cfg: DecoderConfig) -> int:
    """Independent count: walk the tensors one by one."""
    n = cfg.latent
    first = cfg.channels[0] * cfg.heights[0] * cfg.widths[0]
    n += first * cfg.latent + first
    for cin, cout in zip(cfg.channels[:-1], cfg.channels[1:]):
        n += cout * cin * 5 * 5 + cout
    return n


def network_battery(ctx=None):
    t0 = time.perf_counter()
    rng = make_rng(11)
    problems = []
    # parameter count
    full_heat = DecoderConfig(64, (16, 128, 64, 32, 16, 1), (12, 12, 24, 46, 96, 96), (12, 12, 24, 46, 96, 96))
    if param_count(full_heat) != 470465 or ParamLayout(full_heat).size != 470465:
        problems.append("full-size count")
    for _ in range(5):
        n = int(rng.integers(1, 4))
        ch = tuple(int(c) for c in rng.integers(1, 6, n)) + (1,)
        hs = tuple(int(c) for c in np.sort(rng.integers(2, 9, n + 1)))
        ws = tuple(int(c) for c in np.sort(rng.integers(2, 9, n + 1)))
        cfg = DecoderConfig(int(rng.integers(1, 9)), ch, hs, ws)
        if param_count(cfg) != _enumerate_params(cfg):
            problems.append(f"count {cfg}")
    # determinism
    small = DecoderConfig(4, (3, 2, 1), (3, 5, 9), (4, 7, 13))
    p = init_params(small, 5)
    if not (np.array_equal(p, init_params(small, 5)) and
            np.array_equal(network_forward(p, small), network_forward(p.copy(), small))):
        problems.append("determinism")
    # per-layer gradients (central FD, step 1e-5, tolerance 1e-5)
    h = 1e-5

    def check(f, x, g_analytic, tol, label, n=20):
        worst = 0.0
        for i in rng.choice(x.size, size=min(n, x.size), replace=False):
            e = np.zeros(x.size)
            e[i] = h
            fd = (f((x.ravel() + e).reshape(x.shape)) - f((x.ravel() - e).reshape(x.shape))) / (2 * h)
            worst = max(worst, relative_error(g_analytic.ravel()[i], fd))
        if worst > tol:
            problems.append(f"{label} gradient {worst:.1e}")
        return worst

    x = rng.standard_normal((2, 4, 5))
    K = rng.standard_normal((3, 2, 5, 5))
    c = rng.standard_normal(3)
    W = rng.standard_normal((3, 4, 5))
    gx, gK, gc = conv2d_backward(W, x, K)
    errs = [check(lambda v: np.sum(W * conv2d(v, K, c)), x, gx, 1e-5, "conv input"),
            check(lambda v: np.sum(W * conv2d(x, v, c)), K, gK, 1e-5, "conv kernel"),
            check(lambda v: np.sum(W * conv2d(x, K, v)), c, gc, 1e-5, "conv bias")]
    R = rng.standard_normal((2, 7, 9))
    errs.append(check(lambda v: np.sum(R * resize(v, 7, 9)), x, resize_backward(R, (4, 5)), 1e-5, "resize"))
    y, cache = normalize(x)
    G = rng.standard_normal(x.shape)
    errs.append(check(lambda v: np.sum(G * normalize(v)[0]), x, normalize_backward(G, y, cache), 1e-5, "normalize"))
    out, lcache = layer_forward(x, K, c, 7, 9)
    Go = rng.standard_normal(out.shape)
    gl, _, _ = layer_backward(Go, K, lcache)
    errs.append(check(lambda v: np.sum(Go * layer_forward(v, K, c, 7, 9)[0]), x, gl, 1e-5, "layer"))
    single = DecoderConfig(3, (2, 1), (3, 6), (4, 8))
    ps = init_params(single, 1)
    Gs = rng.standard_normal(single.n_outputs)
    errs.append(check(lambda v: Gs @ network_forward(v, single), ps, network_backward(ps, single, Gs), 1e-5,
                      "single-layer network"))
    # composed network: 5 random directions at 1e-4
    pd = init_params(small, 2)
    Gd = rng.standard_normal(small.n_outputs)
    gd = network_backward(pd, small, Gd)
    worst = 0.0
    for _ in range(5):
        v = rng.standard_normal(pd.size)
        fd = (Gd @ network_forward(pd + h * v, small) - Gd @ network_forward(pd - h * v, small)) / (2 * h)
        worst = max(worst, relative_error(gd @ v, fd))
    if worst > 1e-4:
        problems.append(f"composed gradient {worst:.1e}")
    # normalization moments
    z, _ = normalize(3.0 + 5.0 * rng.standard_normal((4, 9, 11)))
    mean_err = np.max(np.abs(z.mean(axis=(1, 2))))
    var_err = np.max(np.abs(z.var(axis=(1, 2)) - 1))
    if mean_err >= 1e-10 or var_err > 1e-6:
        problems.append("normalization moments")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 30
    detail = (f"layer grads max {max(errs):.1e} (<= 1e-5), composed {worst:.1e} (<= 1e-4), "
              f"moments {mean_err:.0e}/{var_err:.0e}")
    return ok, detail + ("; failed: " + ", ".join(problems) if problems else "")


CRITERIA = {
    1: ("geometry oracle", geometry_oracle),
    2: ("area conservation", conservation),
    3: ("cut-cell derivative", cut_derivative),
    4: ("reinitialization", reinit_plane),
    5: ("volume constraint", volume_constraint),
    6: ("FCM alpha_out convergence", fcm_convergence),
    7: ("node-crossing differentiability", node_crossing),
    8: ("full-chain gradient", full_chain),
    9: ("backward-pass cost", backward_cost),
    10: ("heat optimization", heat_optimization),
    11: ("MBB optimization", mbb_optimization),
    12: ("FSI smoke test", fsi_smoke),
    13: ("network battery", network_battery),
}


def run_criterion(number: int, ctx: _Context | None = None) -> CriterionResult:
    name, fn = CRITERIA[number]
    ctx = ctx or _Context()
    t0 = time.perf_counter()
    try:
        passed, detail = fn(ctx)
    except Exception as exc:  # a crash is a failure with its reason
        passed, detail = False, f"error: {type(exc).__name__}: {exc}"
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0)


def run_battery(numbers=None, workers: int = 1, echo=None) -> list[CriterionResult]:
    ctx = _Context(workers)
    out = []
    for k in numbers or sorted(CRITERIA):
        r = run_criterion(k, ctx)
        if echo is not None:
            echo(r.line())
        out.append(r)
    return out


def format_table(results) -> str:
    lines = [r.line() for r in results]
    n_ok = sum(r.passed for r in results)
    lines.append(f"{n_ok}/{len(results)} criteria passed")
    return "\n".join(lines)
