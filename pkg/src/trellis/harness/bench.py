"""Benchmark matrix: problems x solver configurations x rank counts -> CSV.

Config file (JSON)::

    {"problems": [{"type": "poisson2d", "nx": 32, "ny": 32}],
     "solvers": [{"tag": "cg+amg",
                  "params": {"solver": {"type": "cg"},
                             "preconditioner": {"type": "amg"}}}],
     "ranks": [1, 4]}

Problem types: ``poisson1d`` (``n``), ``poisson2d`` (``nx``, ``ny``,
``partition``), ``convdiff2d`` (adds ``vx``, ``vy``, ``eps``) and
``matrix_market`` (``path``, relative to the config file; rhs = A 1).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from ..comm import CommError, launch
from ..core import MultiVector
from ..krylov import KrylovBreakdown
from ..paramlist import ParameterError, ParameterList
from .factory import build_solver
from .mmio import MatrixMarketError, mm_read
from .problems import ProblemInstance, gen_convection_diffusion_2d, gen_poisson_1d, gen_poisson_2d

__all__ = ["BenchmarkRow", "CSV_COLUMNS", "build_problem", "run_benchmark", "rows_to_csv",
           "load_config"]


@dataclass
class BenchmarkRow:
    problem: str
    grid: str
    ranks: int
    preconditioner: str
    solver: str
    iterations: str
    residual: str
    setup_ms: int
    solve_ms: int
    status: str


CSV_COLUMNS = tuple(f.name for f in fields(BenchmarkRow))
TIMING_COLUMNS = ("setup_ms", "solve_ms")


def build_problem(spec: dict, comm, base_dir: Path | None = None) -> tuple[ProblemInstance, str]:
    """Returns ``(problem, grid label)``.  Collective."""
    kind = spec.get("type")
    if kind == "poisson1d":
        n = int(spec["n"])
        return gen_poisson_1d(n, comm), str(n)
    if kind == "poisson2d":
        nx, ny = int(spec["nx"]), int(spec.get("ny", spec["nx"]))
        return gen_poisson_2d(nx, ny, comm, spec.get("partition", "contiguous")), f"{nx}x{ny}"
    if kind == "convdiff2d":
        nx, ny = int(spec["nx"]), int(spec.get("ny", spec["nx"]))
        pb = gen_convection_diffusion_2d(nx, ny, (float(spec.get("vx", 1.0)), float(spec.get("vy", 0.0))),
                                         float(spec.get("eps", 1.0)), comm,
                                         spec.get("partition", "contiguous"))
        return pb, f"{nx}x{ny}"
    if kind == "matrix_market":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        A = mm_read(path, comm)
        ones = MultiVector(A.row_map, local=np.ones((A.row_map.num_local, 1)))
        pb = ProblemInstance(A, A.apply(ones), ones, np.zeros((A.row_map.num_global, 0)),
                             path.stem)
        return pb, str(A.row_map.num_global)
    raise ValueError(f"unknown problem type {kind!r}")


def _problem_tag(spec: dict) -> str:
    return str(spec.get("tag", spec.get("type", "problem")))


def _run_one(comm, pspec: dict, sspec: dict, base_dir):
    pb, grid = build_problem(pspec, comm, base_dir)
    params = ParameterList.from_dict(sspec.get("params", {}))
    pre_tag = params.sublist("preconditioner").get("type", "none") \
        if params.is_sublist("preconditioner") else "none"
    sol_tag = params.sublist("solver").get("type", "gmres") if params.is_sublist("solver") else "gmres"
    # the tags above are diagnostics only; let the factory see fresh used-marks
    params = ParameterList.from_dict(sspec.get("params", {}))
    comm.barrier()
    t0 = time.perf_counter()
    try:
        _, solve = build_solver(pb.A, params)
    except (ParameterError, TypeError, ValueError) as exc:
        return dict(grid=grid, pre=pre_tag, sol=sol_tag, status="factory_error", err=str(exc))
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return dict(grid=grid, pre=pre_tag, sol=sol_tag, status="setup_error", err=str(exc))
    comm.barrier()
    t1 = time.perf_counter()
    try:
        _, rep = solve(pb.b)
    except KrylovBreakdown as exc:
        rep, status = exc.report, "breakdown"
    else:
        status = "converged" if rep.converged else rep.status
    comm.barrier()
    t2 = time.perf_counter()
    return dict(grid=grid, pre=pre_tag, sol=sol_tag, status=status, iterations=rep.iterations,
                residual=rep.residual, setup=t1 - t0, solve=t2 - t1)


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("benchmark config must be a JSON object")
    return cfg


def run_benchmark(config: Any, base_dir=None) -> list[BenchmarkRow]:
    """Run every (problem, solver, ranks) combination; failures become rows."""
    if isinstance(config, (str, Path)):
        base_dir = Path(config).parent if base_dir is None else base_dir
        config = load_config(config)
    problems = config.get("problems", [])
    solvers = config.get("solvers", [])
    ranks = config.get("ranks", [1])
    rows = []
    for pspec in problems:
        for sspec in solvers:
            for P in ranks:
                tag = str(sspec.get("tag", ""))
                try:
                    res = launch(int(P), _run_one, pspec, sspec, base_dir)[0]
                except (MatrixMarketError, OSError, KeyError, ValueError) as exc:
                    res = dict(grid="", pre=tag, sol="", status="problem_error", err=str(exc))
                except CommError as exc:
                    res = dict(grid="", pre=tag, sol="", status="comm_error", err=str(exc))
                it = res.get("iterations")
                r = res.get("residual")
                rows.append(BenchmarkRow(
                    problem=_problem_tag(pspec), grid=res["grid"], ranks=int(P),
                    preconditioner=res["pre"], solver=res["sol"],
                    iterations="" if it is None else str(int(it)),
                    residual="" if r is None else f"{float(r):.5e}",
                    setup_ms=int(round(res.get("setup", 0.0) * 1000)),
                    solve_ms=int(round(res.get("solve", 0.0) * 1000)),
                    status=res["status"]))
    return rows


def rows_to_csv(rows: list[BenchmarkRow], include_timings: bool = True) -> str:
    cols = [c for c in CSV_COLUMNS if include_timings or c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        d = dict(zip(CSV_COLUMNS, astuple(row)))
        w.writerow([d[c] for c in cols])
    return buf.getvalue()
