"""Command line: ``amtopo run|bench|audit``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .audit import downward_minima, overhang_violation
from .export import write_history, write_vtk
from .fem import SolverError
from .field import characteristic, ersatz_factor, initialize_levelset, to_elements
from .optimizer import Optimizer

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("amtopo")

# config keys exposed as --flags on every subcommand
_OVERRIDABLE = [f for f in fields(cfgmod.OptimizationConfig) if f.name != "problem"]


def _add_overrides(parser: argparse.ArgumentParser, skip=()) -> None:
    group = parser.add_argument_group("config overrides")
    for f in _OVERRIDABLE:
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = {"int": int, "float": float}.get(f.type, str)
            group.add_argument(flag, dest=f.name, type=kind, default=None, metavar=f.name.upper())


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amtopo", description="Level-set topology optimization with printability constraints.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize the design described by a JSON config")
    run.add_argument("config")
    _add_overrides(run)

    bench = sub.add_parser("bench", help="optimize a built-in benchmark")
    bench.add_argument("problem", choices=[k for k in cfgmod.PROBLEM_DEFAULTS if k != "custom"])
    bench.add_argument("--out", dest="output_dir", default=None, metavar="DIR")
    _add_overrides(bench, skip=("output_dir",))

    audit = sub.add_parser("audit", help="evaluate objective and constraints without optimizing")
    audit.add_argument("config")
    audit.add_argument("--phi", help="level-set values (.npy, nodal) to audit instead of the initial design")
    _add_overrides(audit)
    return p


def _overrides(args) -> dict:
    return {f.name: getattr(args, f.name) for f in _OVERRIDABLE if getattr(args, f.name, None) is not None}


def _output_dir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fields(opt: Optimizer, phi, ev) -> dict:
    mesh, s = opt.problem.mesh, opt.settings
    out = {
        "phi": phi,
        "chi": to_elements(mesh, characteristic(phi, s.xi)),
        "ersatz": to_elements(mesh, ersatz_factor(phi, s.w, s.c)),
        "sensitivity": ev.dJ,
    }
    for name, data in ev.fields.items():
        out[name] = np.asarray(data).reshape(mesh.n_nodes, -1).squeeze()
    return out


def _optimize(cfg) -> int:
    problem = cfgmod.build_problem(cfg)
    settings = cfgmod.build_settings(cfg, problem)
    out = _output_dir(cfg)
    cfgmod.dump_config(cfg, out / "config.json")

    def snapshot(it, phi, ev):
        write_vtk(problem.mesh, _fields(opt, phi, ev), out / f"design_{it:04d}.vtk")

    settings.snapshot_callback = snapshot
    opt = Optimizer(problem, settings)
    t0 = time.perf_counter()
    result = opt.run(callback=lambda rec: log.info(
        "it %3d  J=%.6g  obj=%.6g  V=%.4f  audit=%.3f", rec.iteration, rec.J, rec.objective, rec.volume, rec.overhang_audit,
    ))
    elapsed = time.perf_counter() - t0
    final = result.phi if result.converged or result.best_phi is None else result.best_phi
    ev = opt.evaluate(final, sensitivities=True)
    write_vtk(problem.mesh, _fields(opt, final, ev), out / "design_final.vtk")
    write_history(result.history, out / "history.csv")
    np.save(out / "phi_final.npy", final)
    summary = {
        "converged": result.converged,
        "iterations": len(result.history),
        "best_iteration": result.best_iteration,
        "objective": ev.terms["objective"],
        "volume": ev.volume,
        "overhang_audit": overhang_violation(problem.mesh, final, problem.build_direction, cfg.theta0),
        "downward_minima": downward_minima(problem.mesh, final, problem.build_direction),
        "runtime_s": elapsed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _audit(cfg, phi_path: str | None) -> int:
    problem = cfgmod.build_problem(cfg)
    settings = cfgmod.build_settings(cfg, problem)
    opt = Optimizer(problem, settings)
    mesh = problem.mesh
    if phi_path:
        phi = np.load(phi_path)
        if phi.shape != (mesh.n_nodes,):
            raise cfgmod.ConfigError(f"--phi has shape {phi.shape}, expected ({mesh.n_nodes},)")
    else:
        phi = initialize_levelset(mesh, settings.init)
        for nodes, val in opt.fixed_nodes():
            phi[nodes] = val
    ev = opt.evaluate(phi, sensitivities=False)
    report = {
        "J": ev.J,
        **{k: float(v) for k, v in ev.terms.items()},
        "volume": ev.volume,
        "overhang_audit": overhang_violation(mesh, phi, problem.build_direction, cfg.theta0),
        "downward_minima": downward_minima(mesh, phi, problem.build_direction),
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "bench":
            over = _overrides(args)
            side = over.pop("side", None)
            if args.output_dir is None and not os.environ.get(cfgmod.OUTPUT_ENV):
                over["output_dir"] = str(Path("output") / args.problem)
            elif args.output_dir is not None:
                over["output_dir"] = args.output_dir
            cfg, _ = cfgmod.benchmark(args.problem, side, **over)
            return _optimize(cfg)
        cfg = cfgmod.with_overrides(cfgmod.load_config(args.config), **_overrides(args))
        if args.command == "run":
            return _optimize(cfg)
        return _audit(cfg, args.phi)
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"amtopo: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"amtopo: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
