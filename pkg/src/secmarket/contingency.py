"""Post-contingency violation LP and realized N-1 operating cost.

For a fixed day-ahead schedule and one outage, each period is an
independent LP: redispatch units inside their scheduled reserve box, allow
load shedding and load surplus at every bus, respect emergency line ratings
on the post-outage topology, and minimize total shedding plus surplus.

The violation LP usually has many optimal dispatches with different costs,
so a second pass holds the violation at its optimum and minimizes energy
cost.  This makes the realized cost reproducible.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .markets import (
    BASE,
    LINE,
    Scenario,
    ScenarioSet,
    Schedule,
    _ptdf_limit_family,
    base_energy_cost,
    commitment_cost,
)
from .network import Network
from .opt import INF, LinearModel, SolverConfig, solve_lp
from .opt.solve import SolveError
from .sensitivity import SensitivityFactors

VIOLATION_TOL = 1e-6


@dataclass
class ContingencyResult:
    scenario_id: str
    period: int
    violation: float
    post_dispatch: np.ndarray  # per generator
    load_shed: np.ndarray  # per bus
    load_surplus: np.ndarray  # per bus


@dataclass
class ScenarioAnalysis:
    """All periods of one scenario; arrays are [.., period]."""

    scenario_id: str
    violation: np.ndarray  # (T,)
    post_dispatch: np.ndarray  # (G, T)
    load_shed: np.ndarray  # (N, T)
    load_surplus: np.ndarray  # (N, T)
    energy_cost: float  # unweighted, summed over periods

    def period(self, t: int) -> ContingencyResult:
        return ContingencyResult(self.scenario_id, t, float(self.violation[t]),
                                 self.post_dispatch[:, t].copy(), self.load_shed[:, t].copy(),
                                 self.load_surplus[:, t].copy())


def _dispatch_box(net: Network, da: Schedule, scenario: Scenario, periods: np.ndarray):
    u = da.u[:, periods]
    alive = scenario.gen_indicator(net)[:, None] * u
    p_bar, r_bar = da.p[:, periods], np.maximum(da.r[:, periods], 0.0)
    pmin = net.gen_array("p_min")[:, None]
    pmax = net.gen_array("p_max")[:, None]
    lo = np.maximum(p_bar - r_bar, pmin) * alive
    hi = np.minimum(p_bar + r_bar, pmax) * alive
    return np.minimum(lo, hi), hi


def _violation_model(net: Network, da: Schedule, scenario: Scenario, periods: np.ndarray,
                     factors) -> LinearModel:
    gids = [g.id for g in net.generators]
    bus_ids = [b.id for b in net.buses]
    line_ids = [ln.id for ln in net.lines]
    labels = [f"t{t + 1}" for t in periods]
    n_g, n_b, n_t = len(gids), len(bus_ids), len(periods)
    lo, hi = _dispatch_box(net, da, scenario, periods)

    m = LinearModel(f"ca_{scenario.id}")
    p = m.add_vars("p", [gids, labels], lo, hi)
    pinj = m.add_vars("pinj", [bus_ids, labels], -INF, INF)
    shed = m.add_vars("shed", [bus_ids, labels], 0, INF, cost=1.0)
    surplus = m.add_vars("surplus", [bus_ids, labels], 0, INF, cost=1.0)
    # injection = generation - load + shed - surplus
    gen_rows = (net.gen_bus[:, None] * n_t + np.arange(n_t)[None, :]).ravel()
    all_rows = np.arange(n_b * n_t)
    m.add_rows("node_balance", [bus_ids, labels], "=",
               np.concatenate([gen_rows, all_rows, all_rows, all_rows]),
               np.concatenate([p.ravel(), shed.ravel(), surplus.ravel(), pinj.ravel()]),
               np.concatenate([np.ones(p.size), np.ones(n_b * n_t), -np.ones(n_b * n_t), -np.ones(n_b * n_t)]),
               net.load[:, periods].ravel())
    m.add_rows("system_balance", [labels], "=", np.tile(np.arange(n_t), n_b), pinj.ravel(),
               np.ones(n_b * n_t), 0.0)

    emerg = net.line_array("rating_emergency")
    mask = None
    if scenario.kind == LINE:
        ptdf = factors.post_ptdf(scenario.element)
        mask = np.ones((1, len(line_ids), n_t), dtype=bool)
        mask[0, net.line_index[scenario.element]] = False
    else:
        ptdf = factors.ptdf
    for suffix, sign in (("max", 1.0), ("min", -1.0)):
        fam = _ptdf_limit_family([ptdf], [pinj], [emerg], sign, mask)
        fam.block = f"line_{suffix}"
        m.add_lazy(fam.block, [[scenario.id], line_ids, labels], "<=", fam)
    m.info["blocks"] = {"p": p, "shed": shed, "surplus": surplus}
    return m


def analyze_scenario(net: Network, da: Schedule, scenario: Scenario, factors,
                     periods: Sequence[int] | None = None,
                     config: SolverConfig | None = None) -> ScenarioAnalysis:
    """Solve the violation LP for every requested period of one scenario.

    Periods are independent blocks of a single LP, so the optimum of each
    block equals that of its own separate LP.
    """
    periods = np.arange(da.horizon) if periods is None else np.asarray(periods, dtype=int)
    config = config or SolverConfig()
    m = _violation_model(net, da, scenario, periods, factors)
    blocks = m.info["blocks"]
    first = solve_lp(m, config)
    slack = first.x[blocks["shed"]] + first.x[blocks["surplus"]]
    violation = slack.sum(axis=0)

    # second pass: hold each period's violation at its optimum, minimize energy cost
    cp = net.gen_array("cost_energy")
    second = m.copy()
    second.cost[:] = 0.0
    second.cost[blocks["p"]] = cp[:, None]
    clean = violation <= VIOLATION_TOL * 1e-3
    for name in ("shed", "surplus"):
        second.ub[blocks[name][:, clean]] = 0.0
    dirty = np.flatnonzero(~clean)
    if dirty.size:
        n_b = blocks["shed"].shape[0]
        local = np.tile(np.repeat(np.arange(dirty.size), n_b), 2)
        cols = np.concatenate([blocks["shed"][:, dirty].T.ravel(), blocks["surplus"][:, dirty].T.ravel()])
        second.add_rows("violation_cap", [[f"t{periods[t] + 1}" for t in dirty]], "<=", local, cols,
                        np.ones(cols.size), violation[dirty] * (1 + 1e-9) + 1e-9)
    try:
        final = solve_lp(second, config)
    except SolveError:
        final = first
    x = final.x
    post = x[blocks["p"]]
    return ScenarioAnalysis(
        scenario_id=scenario.id,
        violation=violation,
        post_dispatch=post,
        load_shed=x[blocks["shed"]],
        load_surplus=x[blocks["surplus"]],
        energy_cost=float((cp[:, None] * post).sum()),
    )


def analyze(net: Network, da: Schedule, scenario: Scenario, t: int, factors=None,
            config: SolverConfig | None = None) -> ContingencyResult:
    """Violation LP for one scenario and one period."""
    factors = factors or SensitivityFactors(net)
    if not 0 <= t < da.horizon:
        raise ValueError(f"period {t} outside the schedule horizon")
    return analyze_scenario(net, da, scenario, factors, [t], config).period(0)


@dataclass
class RealizedCostReport:
    commitment_cost: float
    base_energy_cost: float  # probability-weighted
    scenario_energy_cost: float  # probability-weighted over contingency dispatches
    scenario_ids: list[str]
    violations: np.ndarray  # (scenario incl. base, period)
    scenario_costs: dict[str, float] = field(default_factory=dict)  # unweighted per contingency

    @property
    def realized_total(self) -> float:
        return self.commitment_cost + self.base_energy_cost + self.scenario_energy_cost

    @property
    def max_violation(self) -> float:
        return float(self.violations.max(initial=0.0))

    def violating_scenarios(self, tol: float = VIOLATION_TOL) -> list[str]:
        return [sid for sid, row in zip(self.scenario_ids, self.violations) if row.max() > tol]


def analyze_all(net: Network, da: Schedule, scenarios: Sequence[Scenario], factors=None,
                threads: int = 1, config: SolverConfig | None = None) -> list[ScenarioAnalysis]:
    factors = factors or SensitivityFactors(net)
    job = lambda s: analyze_scenario(net, da, s, factors, config=config)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, scenarios))
    return [job(s) for s in scenarios]


def realized_cost(net: Network, da: Schedule, scenarios: ScenarioSet, factors=None,
                  threads: int = 1, config: SolverConfig | None = None) -> RealizedCostReport:
    """Cost of operating ``da`` through every modeled outage.

    Commitment costs are counted once, base energy is weighted by the base
    probability and each contingency's redispatch energy by its probability.
    The base case is analyzed too so its violations appear in the report.
    """
    results = analyze_all(net, da, scenarios.all, factors, threads, config)
    by_id = {r.scenario_id: r for r in results}
    scen_cost = {s.id: by_id[s.id].energy_cost for s in scenarios.contingencies}
    weighted = sum(s.probability * scen_cost[s.id] for s in scenarios.contingencies)
    return RealizedCostReport(
        commitment_cost=commitment_cost(da),
        base_energy_cost=scenarios.base.probability * base_energy_cost(da),
        scenario_energy_cost=float(weighted),
        scenario_ids=scenarios.ids,
        violations=np.array([by_id[sid].violation for sid in scenarios.ids]),
        scenario_costs=scen_cost,
    )


def write_violation_csv(report: RealizedCostReport, path: str | Path) -> Path:
    path = Path(path)
    n_t = report.violations.shape[1] if report.violations.size else 0
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["scenario", *[f"t{t + 1}" for t in range(n_t)]])
        for sid, row in zip(report.scenario_ids, report.violations):
            out.writerow([sid, *(f"{v:.6f}" for v in row)])
    return path


def write_realized_csv(reports: dict[str, RealizedCostReport], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["schedule", "commitment_cost", "base_energy_cost", "scenario_energy_cost",
                      "realized_total", "max_violation"])
        for name, r in reports.items():
            out.writerow([name, *(f"{v:.6f}" for v in (r.commitment_cost, r.base_energy_cost,
                                                       r.scenario_energy_cost, r.realized_total,
                                                       r.max_violation))])
    return path


__all__ = [
    "BASE",
    "ContingencyResult",
    "RealizedCostReport",
    "ScenarioAnalysis",
    "analyze",
    "analyze_all",
    "analyze_scenario",
    "realized_cost",
    "write_realized_csv",
    "write_violation_csv",
]
