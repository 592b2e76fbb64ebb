"""Command-line entry point: ``run``, ``multiseed``, ``gradcheck``, ``export``, ``benchsuite``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .adjoint import forward_and_tape, gradcheck
from .config import DOMAIN, METHODS, PROBLEMS, ConfigError, make_config, parse_config, write_config
from .model import Model
from .network import load_params
from .optimize import MultiSeedResult, OptimizationError, multi_seed, run

log = logging.getLogger("neural_levelset")


def _load(args):
    cfg = parse_config(args.config)
    if getattr(args, "output", None):
        cfg = replace(cfg, output_dir=str(args.output))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _progress(verbose: bool):
    if not verbose:
        return None

    def cb(it, record):
        if it % 10 == 0:
            log.info("seed %d iteration %d J %.6g", record.seed, it, record.J[-1])
    return cb


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(cfg.output_dir)
    write_config(cfg, out / "config.toml")
    model = Model(cfg)
    try:
        record = run(model, cfg.seed, args.iterations, out / f"seed_{cfg.seed}", callback=_progress(args.verbose))
    except OptimizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    result = MultiSeedResult(record, [record], {})
    (out / "summary.txt").write_text(result.summary())
    print(result.summary(), end="")
    print(f"outputs in {out}")
    return 0


def cmd_multiseed(args) -> int:
    cfg = _load(args)
    try:
        result = multi_seed(cfg, args.n_seeds, args.iterations, cfg.output_dir, workers=args.workers)
    except OptimizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(result.summary(), end="")
    print(f"outputs in {cfg.output_dir}")
    return 1 if result.failures else 0


def _mesh_overrides(problem: str, mesh):
    if not mesh:
        return {}
    nx = mesh[0]
    if len(mesh) > 1:
        ny = mesh[1]
    else:
        lx, ly = DOMAIN[problem]
        ny = max(2, round(nx * ly / lx))
    return {"mesh": {"nx": nx, "ny": ny}}


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = parse_config(args.config)
    else:
        cfg = make_config(args.problem, parameterization=args.method, **_mesh_overrides(args.problem, args.mesh))
    model = Model(cfg)
    p = model.init_params(args.seed)
    report = gradcheck(model, p, args.directions, args.eps, args.tol, seed=args.seed)
    path = io.write_gradcheck(args.output, report)
    for r in report.rows:
        print(f"direction {r.direction}: analytic {r.analytic:.10e} fd {r.fd:.10e} rel {r.rel_error:.2e} "
              f"{'ok' if r.passed else 'FAIL'}")
    print(f"max relative error {report.max_error:.2e} (tolerance {report.tolerance:g}); report in {path}")
    return 0 if report.passed else 1


def cmd_export(args) -> int:
    cfg = parse_config(args.config)
    model = Model(cfg)
    p, decoder, header = load_params(args.checkpoint)
    if p.size != model.param.size or decoder != model.param.config:
        print(f"error: checkpoint ({p.size} parameters, decoder {decoder}) does not match the configuration "
              f"({model.param.size} parameters, decoder {model.param.config})", file=sys.stderr)
        return 1
    _, tape = forward_and_tape(p, model)
    out = Path(args.output)
    io.write_vtk(out / "design.vtk", model.grid, io.solution_fields(model, tape))
    phi = tape.design
    if model.kind == "density":
        from .physics.simp import density_to_levelset
        phi = density_to_levelset(model.grid, tape.design, model.target_volume)
    io.write_pgm(out / "design.pgm", model.grid, phi)
    print(f"J = {tape.J:.10g} (seed {header.get('seed')}); wrote {out / 'design.vtk'} and {out / 'design.pgm'}")
    return 0


def cmd_benchsuite(args) -> int:
    from .acceptance import format_table, run_battery
    numbers = None
    if args.only:
        numbers = [int(k) for k in args.only.split(",")]
    results = run_battery(numbers, workers=args.workers, echo=print if args.verbose else None)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neural-levelset",
                                     description="Level-set topology optimization with a neural reparameterization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one optimization run")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--iterations", type=int, help="override the iteration cap")
    p.add_argument("--output", help="override the output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("multiseed", help="independent runs over consecutive seeds, best is kept")
    p.add_argument("--config", required=True)
    p.add_argument("--n-seeds", type=int, help="override the configured seed count")
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--iterations", type=int)
    p.add_argument("--output")
    p.add_argument("--workers", type=int, default=1, help="concurrent seeds")
    p.set_defaults(func=cmd_multiseed)

    p = sub.add_parser("gradcheck", help="directional derivatives against central differences")
    p.add_argument("--problem", choices=PROBLEMS, default="heat")
    p.add_argument("--method", choices=METHODS, default="nn-ls")
    p.add_argument("--mesh", type=int, nargs="+", metavar="N", help="nx [ny]; ny follows the domain aspect if omitted")
    p.add_argument("--config", help="use a configuration file instead of --problem/--method/--mesh")
    p.add_argument("--directions", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="gradcheck.csv", help="CSV report path")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export", help="re-evaluate a checkpoint and write VTK and PGM files")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True, help="params.bin written by a run")
    p.add_argument("--output", default=".")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("benchsuite", help="run the acceptance battery and print a pass/fail table")
    p.add_argument("--scale", choices=("desk",), default="desk", help="the battery is defined at desk scale")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_benchsuite)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
