"""Out-of-market corrections: repair a day-ahead schedule so it survives every outage.

The repair is a single restricted security-constrained MILP over the full
scenario set.  Units committed day-ahead stay committed, their base output
may move by at most their 10-minute ramp, other units may be started, and
the objective is the deterministic (base-case) operating cost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contingency import realized_cost
from .markets import ScenarioSet, Schedule, base_cost, build_escuc, decode_schedule
from .network import Network
from .opt import SolverConfig, solve_mip
from .opt.solve import SolveError
from .opt.solvers import INFEASIBLE
from .sensitivity import SensitivityFactors


class OmcInfeasible(RuntimeError):
    """The day-ahead schedule cannot be repaired inside the ramp box."""

    def __init__(self, message: str, violating: list[str]):
        super().__init__(message)
        self.violating = violating


@dataclass
class OmcResult:
    da: Schedule
    corrected: Schedule
    da_cost: float
    final_cost: float
    newly_committed: set[tuple[str, int]] = field(default_factory=set)
    mip_gap: float = 0.0

    @property
    def omc_cost(self) -> float:
        return self.final_cost - self.da_cost

    def dispatch_delta(self) -> np.ndarray:
        return self.corrected.p - self.da.p


def restricted_model(net: Network, scenarios: ScenarioSet, da: Schedule,
                     factors: SensitivityFactors | None = None, lazy_lines: bool | None = None):
    """Base-cost extensive-form model with the commitment floor and ramp box of ``da``."""
    if da.u.shape != (len(net.generators), net.horizon):
        raise ValueError("day-ahead schedule does not match the network dimensions")
    m = build_escuc(net, scenarios, "base", factors=factors, lazy_lines=lazy_lines)
    m.name = "omc"
    u, p = m.var("u"), m.var("p")
    committed = da.u > 0.5
    m.lb[u[committed]] = 1.0
    r10 = np.minimum(net.gen_array("ramp_10min"), net.gen_array("p_max"))[:, None]
    low = np.maximum(da.p - r10, 0.0)
    high = da.p + r10
    m.lb[p[committed]] = np.maximum(m.lb[p[committed]], low[committed])
    m.ub[p[committed]] = np.minimum(m.ub[p[committed]], high[committed])
    if np.any(m.lb > m.ub):
        raise OmcInfeasible("ramp box around the day-ahead dispatch is empty", [])
    m.info["kind"] = "omc"
    return m


def run_omc(net: Network, scenarios: ScenarioSet, da: Schedule, rel_gap: float = 0.0, seed: int = 0,
            factors: SensitivityFactors | None = None, config: SolverConfig | None = None) -> OmcResult:
    """Repair ``da`` into an N-1 secure schedule at least base-case cost.

    Raises ``OmcInfeasible`` listing the scenarios the day-ahead schedule
    violates when no repair exists.
    """
    factors = factors or SensitivityFactors(net)
    m = restricted_model(net, scenarios, da, factors)
    try:
        sol = solve_mip(m, rel_gap, seed, config)
    except SolveError as exc:
        if exc.status != INFEASIBLE:
            raise
        report = realized_cost(net, da, scenarios, factors, config=config)
        violating = report.violating_scenarios()
        raise OmcInfeasible(
            f"day-ahead schedule cannot be repaired; violated scenarios: {violating}", violating
        ) from exc
    corrected = decode_schedule(m, sol)
    corrected.model_kind = "omc"
    gids = [g.id for g in net.generators]
    new = np.argwhere((corrected.u > 0.5) & (da.u < 0.5))
    return OmcResult(
        da=da,
        corrected=corrected,
        da_cost=base_cost(da),
        final_cost=base_cost(corrected),
        newly_committed={(gids[g], int(t)) for g, t in new},
        mip_gap=sol.gap,
    )


def write_omc_csv(result: OmcResult, path: str | Path) -> Path:
    """Cost decomposition, newly committed units and per-unit dispatch changes."""
    path = Path(path)
    net = result.corrected.net
    delta = result.dispatch_delta()
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["section", "key", "period", "value"])
        out.writerow(["cost", "da_cost", "", f"{result.da_cost:.6f}"])
        out.writerow(["cost", "omc_cost", "", f"{result.omc_cost:.6f}"])
        out.writerow(["cost", "final_cost", "", f"{result.final_cost:.6f}"])
        for gid, t in sorted(result.newly_committed, key=lambda x: (net.gen_index[x[0]], x[1])):
            out.writerow(["newly_committed", gid, t + 1, "1"])
        for g, gen in enumerate(net.generators):
            for t in range(delta.shape[1]):
                if abs(delta[g, t]) > 1e-9:
                    out.writerow(["dispatch_delta", gen.id, t + 1, f"{delta[g, t]:.6f}"])
    return path
