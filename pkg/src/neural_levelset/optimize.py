"""ADAM design loop, multi-seed restarts and run records."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .adjoint import backward, forward_and_tape
from .config import RunConfig, write_config
from .model import Model
from .network import save_params

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """A run failed; ``record`` holds everything up to the failure."""

    def __init__(self, message: str, record: "RunRecord | None" = None):
        super().__init__(message)
        self.record = record


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, p: np.ndarray, g: np.ndarray) -> tuple[AdamState, np.ndarray]:
    g = np.asarray(g, float)
    if g.shape != p.shape:
        raise ValueError(f"gradient has shape {g.shape}, parameters {p.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient at ADAM step {state.t + 1}")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    p_new = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps), p_new


@dataclass
class RunRecord:
    seed: int
    J: list = field(default_factory=list)
    volume_residual: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    checkpoint: str | None = None
    snapshot: str | None = None
    converged: bool = False
    error: str | None = None
    final_levelset_J: float | None = None
    p: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.J)

    @property
    def initial_J(self) -> float:
        return self.J[0]

    @property
    def final_J(self) -> float:
        return self.J[-1]

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.J, float))

    def rows(self):
        return [(i, J, v, ms) for i, (J, v, ms) in enumerate(zip(self.J, self.volume_residual, self.wall_ms))]


def converged(J: list, window: int, tol: float) -> bool:
    """Relative improvement of the best-so-far value over the last ``window`` iterations."""
    if len(J) <= window:
        return False
    best = np.minimum.accumulate(np.asarray(J, float))
    old, new = best[-window - 1], best[-1]
    return (old - new) <= tol * abs(old)


def _persist(record: RunRecord, model: Model, tape, p, out: Path | None):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    io.write_log(out / "log.csv", record.rows())
    cfg = model.config
    record.checkpoint = str(save_params(out / "params.bin", p, model.param.config, record.seed,
                                        {"problem": cfg.problem, "parameterization": cfg.parameterization}))
    if tape is not None and tape.valid:
        io.write_vtk(out / "final.vtk", model.grid, io.solution_fields(model, tape))
        record.snapshot = str(out / "final.vtk")
        phi = tape.design
        if model.kind == "density":
            from .physics.simp import density_to_levelset
            phi = density_to_levelset(model.grid, tape.design, model.target_volume)
        io.write_pgm(out / "final.pgm", model.grid, phi)


def run(model: Model, seed: int, iterations: int | None = None, out_dir=None, p0: np.ndarray | None = None,
        callback=None) -> RunRecord:
    """ADAM loop ``forward -> log -> converged? -> backward -> step``."""
    cfg = model.config
    o = cfg.optimizer
    iterations = o.iterations if iterations is None else int(iterations)
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    out = None if out_dir is None else Path(out_dir)
    p = model.init_params(seed) if p0 is None else np.array(p0, float)
    state = AdamState.zeros(p.size, o.learning_rate, o.beta1, o.beta2, o.epsilon)
    record = RunRecord(seed)
    tape = last_good = None
    try:
        for it in range(iterations + 1):
            t0 = time.perf_counter()
            J, tape = forward_and_tape(p, model)
            last_good = (tape, p)
            record.J.append(J)
            record.volume_residual.append(tape.volume_residual)
            stop = it == iterations or converged(record.J, o.window, o.tolerance)
            if not stop:
                g = backward(tape)
                state, p = adam_step(state, p, g)
            record.wall_ms.append(1e3 * (time.perf_counter() - t0))
            if callback is not None:
                callback(it, record)
            if stop:
                record.converged = it < iterations
                break
    except Exception as exc:
        record.error = f"iteration {len(record.J)}: {type(exc).__name__}: {exc}"
        if len(record.wall_ms) < len(record.J):
            record.J.pop()
            record.volume_residual.pop()
        if last_good is not None:
            _persist(record, model, last_good[0], last_good[1], out)
        raise OptimizationError(f"seed {seed} failed at {record.error}", record) from exc
    record.p = p
    if model.kind == "density":
        record.final_levelset_J = model.evaluate_levelset(tape.design)
    _persist(record, model, tape, p, out)
    return record


@dataclass
class MultiSeedResult:
    best: RunRecord
    records: list
    failures: dict

    def ranking(self) -> list[tuple[int, int, float, float]]:
        """``(rank, seed, initial J, final J)`` sorted by final J."""
        ok = sorted(self.records, key=lambda r: r.final_J)
        return [(i + 1, r.seed, r.initial_J, r.final_J) for i, r in enumerate(ok)]

    def summary(self) -> str:
        lines = ["rank seed initial_J final_J"]
        lines += [f"{k} {s} {a:.10g} {b:.10g}" for k, s, a, b in self.ranking()]
        for s, err in sorted(self.failures.items()):
            lines.append(f"failed seed {s}: {err}")
        lines.append(f"best seed {self.best.seed} final J {self.best.final_J:.10g}")
        return "\n".join(lines) + "\n"


def _run_seed(cfg: RunConfig, seed: int, iterations, out_dir):
    model = Model(cfg)
    try:
        return run(model, seed, iterations, out_dir)
    except OptimizationError as exc:
        return exc.record or RunRecord(seed, error=str(exc))


def multi_seed(cfg: RunConfig, n_seeds: int | None = None, iterations: int | None = None, out_dir=None,
               workers: int = 1) -> MultiSeedResult:
    """Independent runs with seeds ``cfg.seed ... cfg.seed + n - 1``; best = lowest final J."""
    n = cfg.n_seeds if n_seeds is None else int(n_seeds)
    if n < 1:
        raise ValueError("n_seeds must be at least 1")
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        write_config(cfg, out / "config.toml")
    seeds = [cfg.seed + k for k in range(n)]
    dirs = [None if out is None else out / f"seed_{s}" for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_seed, [cfg] * n, seeds, [iterations] * n, dirs))
    else:
        records = [_run_seed(cfg, s, iterations, d) for s, d in zip(seeds, dirs)]
    good = [r for r in records if r.error is None and r.J]
    failures = {r.seed: r.error for r in records if r.error is not None}
    if not good:
        raise OptimizationError("all seeds failed: " + "; ".join(f"{s}: {e}" for s, e in failures.items()))
    best = min(good, key=lambda r: r.final_J)
    result = MultiSeedResult(best, good, failures)
    if out is not None:
        (out / "summary.txt").write_text(result.summary())
    return result
