"""Solver backends behind a narrow contract: load, set gap/seed, solve, query.

Two backends ship with the toolkit: ``highs`` (highspy, the default) and
``scipy`` (``scipy.optimize.milp``/``linprog``, also HiGHS underneath but
driven through a different interface).  ``SECMARKET_SOLVER`` selects the
default backend.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .model import INF, CompiledModel

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT = "limit"  # stopped on a time/node limit; x may hold an incumbent
ERROR = "error"


@dataclass
class RawResult:
    status: str
    x: np.ndarray | None
    objective: float
    row_duals: np.ndarray | None = None
    mip_gap: float = 0.0
    dual_bound: float = -INF


class Backend(Protocol):
    name: str

    def solve(
        self,
        model: CompiledModel,
        *,
        integer: bool,
        rel_gap: float,
        seed: int,
        time_limit: float | None,
        threads: int,
        alternate: bool = False,
    ) -> RawResult: ...


class HighsBackend:
    name = "highs"
    # highspy itself is reentrant per Highs instance; the lock only guards
    # the shared module state touched during instance creation.
    _lock = threading.Lock()

    def solve(self, model, *, integer, rel_gap, seed, time_limit, threads, alternate=False):
        import highspy

        with self._lock:
            h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("random_seed", int(seed))
        h.setOptionValue("threads", int(threads))
        h.setOptionValue("mip_rel_gap", float(rel_gap))
        h.setOptionValue("mip_abs_gap", 0.0 if rel_gap == 0 else 1e-6)
        h.setOptionValue("mip_feasibility_tolerance", 1e-7)
        h.setOptionValue("primal_feasibility_tolerance", 1e-8)
        h.setOptionValue("dual_feasibility_tolerance", 1e-8)
        if time_limit:
            h.setOptionValue("time_limit", float(time_limit))
        if alternate:
            # primal simplex without presolve lands on a different vertex of
            # a degenerate dual face more often than the default dual simplex
            h.setOptionValue("simplex_strategy", 4)
            h.setOptionValue("presolve", "off")

        hinf = highspy.kHighsInf
        lp = highspy.HighsLp()
        lp.num_col_ = model.c.size
        lp.num_row_ = model.row_lo.size
        lp.col_cost_ = model.c
        lp.offset_ = model.offset
        lp.col_lower_ = np.where(np.isinf(model.lb), -hinf, model.lb)
        lp.col_upper_ = np.where(np.isinf(model.ub), hinf, model.ub)
        lp.row_lower_ = np.where(np.isinf(model.row_lo), -hinf, model.row_lo)
        lp.row_upper_ = np.where(np.isinf(model.row_hi), hinf, model.row_hi)
        a = model.a
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = a.indptr.astype(np.int32)
        lp.a_matrix_.index_ = a.indices.astype(np.int32)
        lp.a_matrix_.value_ = a.data
        if integer and model.integer.any():
            lp.integrality_ = [
                highspy.HighsVarType.kInteger if flag else highspy.HighsVarType.kContinuous
                for flag in model.integer
            ]
        h.passModel(lp)
        h.run()
        status = h.getModelStatus()
        ms = highspy.HighsModelStatus
        info = h.getInfo()
        sol = h.getSolution()
        has_x = bool(sol.value_valid)
        x = np.array(sol.col_value) if has_x else None
        if status == ms.kOptimal:
            code = OPTIMAL
        elif status == ms.kInfeasible:
            code = INFEASIBLE
        elif status in (ms.kUnbounded, ms.kUnboundedOrInfeasible):
            code = UNBOUNDED
        elif status in (ms.kTimeLimit, ms.kIterationLimit, ms.kSolutionLimit, ms.kInterrupt):
            code = LIMIT
        else:
            code = ERROR
        is_mip = integer and model.integer.any()
        duals = np.array(sol.row_dual) if (not is_mip and sol.dual_valid) else None
        objective = float(info.objective_function_value) if has_x else float("nan")
        gap = float(info.mip_gap) if is_mip else 0.0
        bound = float(info.mip_dual_bound) if is_mip else objective
        return RawResult(code, x, objective, duals, gap, bound)


class ScipyBackend:
    name = "scipy"

    def solve(self, model, *, integer, rel_gap, seed, time_limit, threads, alternate=False):
        from scipy.optimize import Bounds, LinearConstraint, linprog, milp

        is_mip = integer and model.integer.any()
        if is_mip:
            options = {"mip_rel_gap": rel_gap, "presolve": True}
            if time_limit:
                options["time_limit"] = time_limit
            cons = [LinearConstraint(model.a, model.row_lo, model.row_hi)] if model.row_lo.size else []
            res = milp(
                model.c,
                constraints=cons,
                integrality=model.integer.astype(int),
                bounds=Bounds(model.lb, model.ub),
                options=options,
            )
            status = {0: OPTIMAL, 1: LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, ERROR)
            if res.x is None:
                return RawResult(status, None, float("nan"))
            gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
            bound = float(getattr(res, "mip_dual_bound", res.fun))
            return RawResult(status, np.asarray(res.x), float(res.fun) + model.offset, None,
                             gap, bound + model.offset)

        # linprog wants A_ub x <= b_ub and A_eq x = b_eq; split rows accordingly
        a = model.a.tocsr()
        lo, hi = model.row_lo, model.row_hi
        eq = np.flatnonzero(lo == hi)
        up = np.flatnonzero((lo != hi) & np.isfinite(hi))
        dn = np.flatnonzero((lo != hi) & np.isfinite(lo))
        a_ub = None
        b_ub = None
        if up.size or dn.size:
            from scipy.sparse import vstack

            a_ub = vstack([a[up], -a[dn]]).tocsr()
            b_ub = np.concatenate([hi[up], -lo[dn]])
        res = linprog(
            model.c,
            A_ub=a_ub,
            b_ub=b_ub,
            A_eq=a[eq] if eq.size else None,
            b_eq=lo[eq] if eq.size else None,
            bounds=np.column_stack([np.where(np.isinf(model.lb), None, model.lb),
                                    np.where(np.isinf(model.ub), None, model.ub)]),
            method="highs-ds" if not alternate else "highs-ipm",
        )
        status = {0: OPTIMAL, 1: LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, ERROR)
        if res.x is None:
            return RawResult(status, None, float("nan"))
        duals = np.zeros(lo.size)
        if eq.size:
            duals[eq] = res.eqlin.marginals
        if up.size:
            duals[up] += res.ineqlin.marginals[: up.size]
        if dn.size:
            duals[dn] -= res.ineqlin.marginals[up.size:]
        return RawResult(status, np.asarray(res.x), float(res.fun) + model.offset, duals)


_BACKENDS: dict[str, type] = {"highs": HighsBackend, "scipy": ScipyBackend}


def get_backend(name: str | None = None) -> Backend:
    name = name or os.environ.get("SECMARKET_SOLVER", "highs")
    try:
        return _BACKENDS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown solver backend {name!r}; choose from {sorted(_BACKENDS)}") from None
