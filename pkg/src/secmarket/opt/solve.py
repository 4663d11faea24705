"""MIP solve, fixed-integer dual re-solve and MIP-gap solution pools."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import LinearModel
from .solvers import INFEASIBLE, LIMIT, OPTIMAL, UNBOUNDED, RawResult, get_backend

log = logging.getLogger(__name__)


class SolveError(RuntimeError):
    def __init__(self, status: str, message: str):
        super().__init__(message)
        self.status = status


class FixedIntegerInfeasible(SolveError):
    pass


@dataclass
class SolverConfig:
    backend: str | None = None
    feasibility_tol: float = 1e-6
    integrality_tol: float = 1e-5
    lazy_tol: float = 1e-7
    max_lazy_rounds: int = 100
    time_limit: float | None = None
    threads: int = 1


@dataclass
class MipSolution:
    status: str
    objective_value: float
    x: np.ndarray
    gap: float
    bound: float
    lazy_rounds: int = 0

    def value(self, model: LinearModel, block: str) -> np.ndarray:
        return self.x[model.var(block)]


@dataclass
class LpSolution:
    status: str
    objective_value: float
    x: np.ndarray
    duals: np.ndarray  # one per active row; d(objective)/d(rhs)
    improved: bool = False  # LP found a cheaper continuous completion than the incumbent

    def dual(self, model: LinearModel, block: str) -> np.ndarray:
        """Duals in block shape; rows never activated get 0."""
        rows = model.con(block)
        out = np.zeros(rows.shape)
        active = rows >= 0
        out[active] = self.duals[rows[active]]
        return out


@dataclass
class PoolResult:
    solutions: list[MipSolution]
    bound: float
    shortfall: bool = False
    requested: int = 0
    notes: list[str] = field(default_factory=list)


def _raise_for(raw: RawResult, what: str) -> None:
    if raw.status == INFEASIBLE:
        raise SolveError(INFEASIBLE, f"{what}: model is infeasible")
    if raw.status == UNBOUNDED:
        raise SolveError(UNBOUNDED, f"{what}: model is unbounded or infeasible")
    if raw.x is None:
        raise SolveError(raw.status, f"{what}: solver returned no solution (status {raw.status})")


def _solve_with_lazy(model: LinearModel, *, integer: bool, rel_gap: float, seed: int,
                     config: SolverConfig, lb=None, ub=None, alternate=False) -> tuple[RawResult, int]:
    backend = get_backend(config.backend)
    rounds = 0
    while True:
        compiled = model.compile()
        if lb is not None:
            compiled.lb, compiled.ub = lb, ub
        raw = backend.solve(compiled, integer=integer, rel_gap=rel_gap, seed=seed,
                            time_limit=config.time_limit, threads=config.threads, alternate=alternate)
        _raise_for(raw, model.name)
        added = model.separate(raw.x, config.lazy_tol) if model.lazy else 0
        if not added:
            return raw, rounds
        rounds += 1
        log.debug("%s: lazy round %d added %d rows", model.name, rounds, added)
        if rounds >= config.max_lazy_rounds:
            raise SolveError("limit", f"{model.name}: lazy row generation did not converge")


def solve_mip(model: LinearModel, rel_gap: float = 0.0, seed: int = 0,
              config: SolverConfig | None = None) -> MipSolution:
    """Solve to the requested relative gap; lazy rows are separated until none is violated.

    Violated lazy rows become permanent rows of ``model``.
    """
    config = config or SolverConfig()
    rounds = 0
    if model.lazy and model.integer.any():
        # rows violated by the relaxation are usually needed by the MIP too
        _, rounds = _solve_with_lazy(model, integer=False, rel_gap=0.0, seed=seed, config=config)
    raw, more = _solve_with_lazy(model, integer=True, rel_gap=rel_gap, seed=seed, config=config)
    rounds += more
    x = raw.x.copy()
    ints = model.integer
    x[ints] = np.round(x[ints])
    status = OPTIMAL if raw.status == OPTIMAL else raw.status
    objective = model.objective(x)
    bound = raw.dual_bound if ints.any() else objective
    gap = abs(objective - bound) / max(abs(objective), 1e-10) if ints.any() else 0.0
    return MipSolution(status, objective, x, gap, bound, rounds)


def fix_and_resolve(model: LinearModel, incumbent: MipSolution, config: SolverConfig | None = None,
                    alternate: bool = False, seed: int = 0) -> LpSolution:
    """Fix integer variables at the rounded incumbent, drop integrality and solve the LP.

    When the LP optimum matches the incumbent objective the incumbent's primal
    point is returned with the LP duals (both are optimal, so together they are
    a valid primal-dual pair); otherwise the LP's own point is kept and
    ``improved`` is set.
    """
    config = config or SolverConfig()
    ints = model.integer
    fixed = np.round(incumbent.x[ints])
    if np.any(np.abs(incumbent.x[ints] - fixed) > config.integrality_tol):
        raise FixedIntegerInfeasible(INFEASIBLE, "incumbent is not integral within tolerance")
    lb, ub = model.lb.copy(), model.ub.copy()
    lb[ints] = fixed
    ub[ints] = fixed
    try:
        raw, _ = _solve_with_lazy(model, integer=False, rel_gap=0.0, seed=seed, config=config,
                                  lb=lb, ub=ub, alternate=alternate)
    except SolveError as exc:
        raise FixedIntegerInfeasible(exc.status, f"fixed-integer LP failed: {exc}") from exc
    if raw.row_duals is None:
        raise SolveError(raw.status, "solver returned no duals for the fixed LP")
    inc_obj = model.objective(incumbent.x)
    scale = max(1.0, abs(inc_obj))
    x = raw.x
    improved = False
    if raw.objective > inc_obj + 1e-6 * scale:
        raise FixedIntegerInfeasible(
            raw.status, f"fixed LP objective {raw.objective} exceeds incumbent {inc_obj}")
    if raw.objective >= inc_obj - 1e-6 * scale:
        x = incumbent.x.copy()
        x[ints] = fixed
    else:
        improved = True
    return LpSolution(raw.status, model.objective(x), x, raw.row_duals, improved)


def solve_lp(model: LinearModel, config: SolverConfig | None = None, seed: int = 0) -> LpSolution:
    """Solve a model with integrality relaxed (exact LP for integer-free models)."""
    config = config or SolverConfig()
    raw, _ = _solve_with_lazy(model, integer=False, rel_gap=0.0, seed=seed, config=config)
    return LpSolution(raw.status, model.objective(raw.x), raw.x, raw.row_duals)


def add_no_good_cut(model: LinearModel, cols: np.ndarray, values: np.ndarray, name: str) -> None:
    """Exclude the 0/1 assignment ``values`` of ``cols``:
    sum_{x=0} x_i - sum_{x=1} x_i >= 1 - |{x=1}|."""
    cols = np.asarray(cols).ravel()
    ones = np.round(values).ravel() > 0.5
    coeffs = np.where(ones, -1.0, 1.0)
    model.add_rows(name, [("cut",)], ">=", np.zeros(cols.size, dtype=int), cols, coeffs,
                   1.0 - ones.sum())


def solution_pool(model: LinearModel, rel_gap: float, count: int, seed: int = 0,
                  cut_cols: np.ndarray | None = None, config: SolverConfig | None = None,
                  member_gap: float = 0.0) -> PoolResult:
    """Up to ``count`` solutions with distinct integer assignments, each within
    ``rel_gap`` of the best bound, found by iterated no-good cuts.

    Each member is solved to ``member_gap`` (default: optimality) under the
    cuts accumulated so far, so with the default the pool holds the best
    assignments in order of cost.  Enumeration stops at the first member that
    falls outside the gap window or when no further assignment is feasible.

    ``cut_cols`` restricts the cuts to a subset of the integer variables (the
    commitment vector in market models); default is every integer column.
    The input model is not modified.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if member_gap > rel_gap:
        raise ValueError("member_gap cannot exceed the pool gap")
    config = config or SolverConfig()
    work = model.copy()
    cut_cols = np.flatnonzero(model.integer) if cut_cols is None else np.asarray(cut_cols).ravel()
    first = solve_mip(work, member_gap, seed, config)
    bound = first.bound
    solutions = [first]
    result = PoolResult(solutions, bound, requested=count)

    def within(sol: MipSolution) -> bool:
        return sol.objective_value - bound <= rel_gap * max(abs(sol.objective_value), 1e-10) + 1e-9

    while len(solutions) < count:
        add_no_good_cut(work, cut_cols, solutions[-1].x[cut_cols], f"no_good_{len(solutions)}")
        try:
            sol = solve_mip(work, member_gap, seed, config)
            if not within(sol) and member_gap > 0:
                sol = solve_mip(work, 0.0, seed, config)
        except SolveError as exc:
            if exc.status != INFEASIBLE:
                raise
            result.notes.append("no further integer assignment is feasible")
            break
        if not within(sol):
            result.notes.append("next-best assignment lies outside the gap window")
            break
        solutions.append(sol)
    if len(solutions) < count:
        result.shortfall = True
        log.warning("solution pool: found %d of %d requested solutions", len(solutions), count)
    return result
