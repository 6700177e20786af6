"""trellis: a desk-scale distributed solver stack on simulated ranks.

Distributed linear algebra over thread-simulated ranks, Krylov solvers,
smoothers and one-level Schwarz, two-level GDSW, smoothed-aggregation AMG,
forward-mode AD, Newton/Anderson nonlinear solvers and Runge-Kutta/BDF2
time integration, all configured through hierarchical parameter lists.
"""

from .comm import launch, serial_comm
from .core import CsrMatrix, Map, MultiVector, build_import, map_contiguous
from .paramlist import ParameterList

__version__ = "0.1.0"

__all__ = [
    "CsrMatrix",
    "Map",
    "MultiVector",
    "ParameterList",
    "build_import",
    "launch",
    "map_contiguous",
    "serial_comm",
]
