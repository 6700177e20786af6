"""Command-line entry point: ``trellis solve | bench | order``.

Exit codes: 0 success, 2 convergence failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .comm import CommError, default_ranks, launch
from .harness.bench import BenchmarkRow, build_problem, rows_to_csv, run_benchmark
from .harness.factory import build_solver
from .harness.mmio import MatrixMarketError
from .krylov import KrylovBreakdown
from .paramlist import ParameterError, ParameterList
from .timeint import make_stepper, order_verify

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3


class ConfigError(Exception):
    pass


def _config_path(name: str) -> Path:
    """A file path, or the name of a shipped config (``cg_amg`` etc.)."""
    p = Path(name)
    if p.exists():
        return p
    shipped = resources.files("trellis") / "configs" / (name if name.endswith(".json") else name + ".json")
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigError(f"config {name!r} not found")


def _problem_spec(matrix: str) -> dict:
    if not matrix.startswith("gen:"):
        return {"type": "matrix_market", "path": matrix, "tag": Path(matrix).stem}
    try:
        _, kind, dims = matrix.split(":", 2)
        sizes = [int(v) for v in dims.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad generator spec {matrix!r}; expected gen:poisson2d:NX,NY") from exc
    if kind == "poisson1d" and len(sizes) == 1:
        return {"type": "poisson1d", "n": sizes[0], "tag": kind}
    if kind in ("poisson2d", "convdiff2d") and len(sizes) in (1, 2):
        nx = sizes[0]
        ny = sizes[-1]
        return {"type": kind, "nx": nx, "ny": ny, "tag": kind}
    raise ConfigError(f"bad generator spec {matrix!r}")


def _solve_program(comm, pspec: dict, params_dict: dict):
    import time

    pb, grid = build_problem(pspec, comm)
    params = ParameterList.from_dict(params_dict)
    t0 = time.perf_counter()
    M, solve = build_solver(pb.A, params)
    t1 = time.perf_counter()
    try:
        _, rep = solve(pb.b)
        status = "converged" if rep.converged else rep.status
    except KrylovBreakdown as exc:
        rep, status = exc.report, "breakdown"
    t2 = time.perf_counter()
    return grid, rep, status, t1 - t0, t2 - t1


def cmd_solve(args) -> int:
    try:
        cfg_path = _config_path(args.config)
        params_dict = ParameterList.from_file(cfg_path).to_dict()
        pspec = _problem_spec(args.matrix)
    except (ConfigError, ParameterError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    P = args.ranks or default_ranks()
    try:
        grid, rep, status, t_setup, t_solve = launch(P, _solve_program, pspec, params_dict)[0]
    except (ParameterError, MatrixMarketError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CommError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    pre = params_dict.get("preconditioner", {}).get("type", "none")
    sol = params_dict.get("solver", {}).get("type", "gmres")
    row = BenchmarkRow(pspec.get("tag", ""), grid, P, pre, sol, str(rep.iterations),
                       f"{rep.residual:.5e}", int(round(t_setup * 1000)),
                       int(round(t_solve * 1000)), status)
    text = rows_to_csv([row])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK if status == "converged" else EXIT_NOT_CONVERGED


def cmd_bench(args) -> int:
    try:
        cfg_path = _config_path(args.config)
        with open(cfg_path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ConfigError("benchmark config must be a JSON object")
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = run_benchmark(cfg, base_dir=cfg_path.parent)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    if any(r.status in ("factory_error", "problem_error") for r in rows):
        return EXIT_CONFIG
    return EXIT_OK if all(r.status == "converged" for r in rows) else EXIT_NOT_CONVERGED


_ORDER_PROBLEMS = {
    "decay": (lambda t, x: -x, [1.0], lambda t: np.array([math.exp(-t)])),
    "oscillator": (lambda t, x: np.array([x[1], -x[0]]), [1.0, 0.0],
                   lambda t: np.array([math.cos(t), -math.sin(t)])),
}


def cmd_order(args) -> int:
    try:
        stepper = make_stepper(args.stepper)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    hs = [args.h0 / 2 ** k for k in range(args.levels)]
    print("problem,observed_order,expected_order")
    for name, (f, x0, exact) in _ORDER_PROBLEMS.items():
        slope = order_verify(stepper, f, x0, 0.0, 1.0, exact, hs)
        print(f"{name},{slope:.3f},{stepper.order}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trellis", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one system and print a CSV row")
    s.add_argument("--matrix", required=True,
                   help="Matrix Market file or gen:poisson2d:NX,NY / gen:poisson1d:N / gen:convdiff2d:NX,NY")
    s.add_argument("--config", required=True, help="parameter-list JSON (or shipped name, e.g. cg_amg)")
    s.add_argument("--ranks", type=int, default=None, help="simulated rank count (default TRELLIS_RANKS)")
    s.add_argument("--out", default=None, help="write the CSV row here")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a benchmark matrix and write CSV")
    b.add_argument("--config", required=True)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    o = sub.add_parser("order", help="observed convergence order of a time stepper")
    o.add_argument("--stepper", required=True)
    o.add_argument("--h0", type=float, default=0.1)
    o.add_argument("--levels", type=int, default=4)
    o.set_defaults(func=cmd_order)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
