"""Problem generators, Matrix Market I/O, partitioning, solver factory and benchmarks."""

from .bench import BenchmarkRow, build_problem, rows_to_csv, run_benchmark
from .factory import FactoryError, UnusedParameterWarning, build_preconditioner, build_solver
from .mmio import MatrixMarketError, mm_read, mm_write
from .partition import rcb_partition
from .problems import (ProblemInstance, gen_convection_diffusion_2d, gen_poisson_1d,
                       gen_poisson_2d)

__all__ = [
    "BenchmarkRow",
    "FactoryError",
    "MatrixMarketError",
    "ProblemInstance",
    "UnusedParameterWarning",
    "build_preconditioner",
    "build_problem",
    "build_solver",
    "gen_convection_diffusion_2d",
    "gen_poisson_1d",
    "gen_poisson_2d",
    "mm_read",
    "mm_write",
    "rcb_partition",
    "rows_to_csv",
    "run_benchmark",
]
