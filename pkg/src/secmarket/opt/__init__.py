from .model import INF, Block, LazyFamily, LinearModel, ModelError
from .mps import write_mps
from .solve import (
    FixedIntegerInfeasible,
    LpSolution,
    MipSolution,
    PoolResult,
    SolveError,
    SolverConfig,
    fix_and_resolve,
    solution_pool,
    solve_lp,
    solve_mip,
)
from .solvers import get_backend

__all__ = [
    "INF",
    "Block",
    "FixedIntegerInfeasible",
    "LazyFamily",
    "LinearModel",
    "LpSolution",
    "MipSolution",
    "ModelError",
    "PoolResult",
    "SolveError",
    "SolverConfig",
    "fix_and_resolve",
    "get_backend",
    "solution_pool",
    "solve_lp",
    "solve_mip",
    "write_mps",
]
