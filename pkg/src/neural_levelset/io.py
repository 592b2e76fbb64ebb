"""Result export: legacy-VTK ASCII fields, PGM masks and CSV logs."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import CartesianGrid

LOG_COLUMNS = ("iteration", "J", "volume_residual", "wall_ms")


class ExportError(OSError):
    pass


def _open(path, mode="w", **kw):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, **kw)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror}") from exc


def write_vtk(path, grid: CartesianGrid, point_data: dict, title: str = "neural level set") -> Path:
    """Structured-points file; scalars are ``(n_nodes,)``, vectors ``(n_nodes, 2)``.

    Values are written with 17 significant digits so they re-read bit-exactly.
    """
    n = grid.n_nodes
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1",
             f"ORIGIN {grid.origin[0]:.17g} {grid.origin[1]:.17g} 0",
             f"SPACING {grid.hx:.17g} {grid.hy:.17g} 1", f"POINT_DATA {n}"]
    for name, values in point_data.items():
        v = np.asarray(values, float)
        if v.shape == (n,):
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{x:.17g}" for x in v]
        elif v.shape == (n, 2):
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.17g} {b:.17g} 0" for a, b in v]
        else:
            raise ValueError(f"field {name!r} has shape {v.shape}, expected ({n},) or ({n}, 2)")
    with _open(path) as fh:
        fh.write("\n".join(lines) + "\n")
    return Path(path)


def write_pgm(path, grid: CartesianGrid, phi: np.ndarray) -> Path:
    """Binary PGM of ``phi > 0`` at node resolution, top row = largest ``y``."""
    mask = (np.asarray(phi).reshape(grid.shape) > 0).astype(np.uint8) * 255
    img = mask[::-1]
    with _open(path, "wb") as fh:
        fh.write(f"P5\n{grid.nx + 1} {grid.ny + 1}\n255\n".encode())
        fh.write(img.tobytes())
    return Path(path)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, size, _maxval, pixels = data.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in size.split())
    return np.frombuffer(pixels[: w * h], dtype=np.uint8).reshape(h, w)


def write_log(path, rows) -> Path:
    """CSV convergence log with :data:`LOG_COLUMNS`."""
    with _open(path, newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for it, J, vol, ms in rows:
            w.writerow([it, f"{J:.17g}", f"{vol:.17g}", f"{ms:.3f}"])
    return Path(path)


def write_gradcheck(path, report) -> Path:
    with _open(path, newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "analytic", "fd", "rel_error", "pass"])
        for r in report.rows:
            w.writerow([r.direction, f"{r.analytic:.17g}", f"{r.fd:.17g}", f"{r.rel_error:.3e}", int(r.passed)])
    return Path(path)


def solution_fields(model, tape) -> dict:
    """Point data for the VTK export of one evaluated design."""
    grid = model.grid
    out = {}
    if model.kind == "levelset":
        out["phi"] = tape.design
    else:
        out["rho"] = tape.design
    u = tape.state.u
    kind = model.config.problem
    if kind == "heat":
        out["theta"] = u
    else:
        out["d"] = u.reshape(grid.n_nodes, 2)
    flow = getattr(tape.state, "extra", {}).get("flow")
    if flow is not None:
        out["u"] = flow.velocity()
        out["p"] = flow.pressure()
    return out
