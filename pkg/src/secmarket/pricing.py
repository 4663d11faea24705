"""Nodal prices from fixed-commitment duals and energy-only market settlements."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .markets import BASE, Schedule
from .network import Network
from .opt import LinearModel, LpSolution, MipSolution, SolverConfig, fix_and_resolve

RULES = ("da-lmp", "slmp")
STABILITY_THRESHOLD = 1e-3


class PricingError(RuntimeError):
    pass


@dataclass
class PriceSurface:
    """Per-scenario nodal prices ``lmp[c, n, t]`` and the securitized price ``slmp[n, t]``.

    For the deterministic models there is one scenario (the base case) and the
    securitized price is that single LMP.
    """

    lmp: np.ndarray
    slmp: np.ndarray
    scenario_ids: list[str]
    bus_ids: list[str]
    model_kind: str

    @property
    def base_lmp(self) -> np.ndarray:
        return self.lmp[self.scenario_ids.index(BASE)]

    @property
    def horizon(self) -> int:
        return self.slmp.shape[1]


def extract_prices(lp: LpSolution, model: LinearModel) -> PriceSurface:
    """Read nodal prices off the duals of a fixed-commitment LP.

    A dual is the change in optimal cost per MW of extra load, so it is used as
    the price without sign change.
    """
    if lp.duals is None:
        raise PricingError("LP solution carries no duals; run fix_and_resolve first")
    if "node_balance" not in model.blocks:
        raise PricingError("model has no node balance rows")
    block = model.blocks["node_balance"]
    lmp = lp.dual(model, "node_balance")
    kind = str(model.info.get("kind"))
    if "demand_fix" in model.blocks:
        slmp = lp.dual(model, "demand_fix")
    else:
        slmp = lmp[0].copy()
    return PriceSurface(lmp, slmp, list(block.axes[0]), list(block.axes[1]), kind)


def verify_slmp_identity(prices: PriceSurface) -> float:
    """Largest |securitized price - sum of scenario prices| over buses and periods."""
    return float(np.max(np.abs(prices.slmp - prices.lmp.sum(axis=0)), initial=0.0))


def security_contributions(prices: PriceSurface, net: Network) -> dict[str, float]:
    """Load-weighted price contribution of each scenario, summed over buses and periods.

    Non-zero entries for contingency scenarios identify the outages that set
    the securitized price above the base-case price.
    """
    load = net.load[:, : prices.horizon]
    return {sid: float((prices.lmp[i] * load).sum()) for i, sid in enumerate(prices.scenario_ids)}


@dataclass
class SettlementReport:
    rule: str
    generator_ids: list[str]
    bus_ids: list[str]
    revenue: np.ndarray  # per generator
    variable_cost: np.ndarray  # per generator
    load_payment: np.ndarray  # per bus
    prices: np.ndarray  # (bus, period) prices used for settlement
    dual_stability: dict[str, float] | None = None
    contributions: dict[str, float] = field(default_factory=dict)

    @property
    def generation_rent(self) -> np.ndarray:
        return self.revenue - self.variable_cost

    @property
    def total_revenue(self) -> float:
        return float(self.revenue.sum())

    @property
    def total_load_payment(self) -> float:
        return float(self.load_payment.sum())

    @property
    def congestion_rent(self) -> float:
        return self.total_load_payment - self.total_revenue

    @property
    def total_generation_rent(self) -> float:
        return float(self.generation_rent.sum())

    def balance_residual(self) -> float:
        """Relative residual of payment = revenue + congestion rent."""
        scale = max(abs(self.total_load_payment), 1.0)
        return abs(self.total_load_payment - self.total_revenue - self.congestion_rent) / scale

    def summary(self) -> dict[str, float]:
        return {
            "load_payment": self.total_load_payment,
            "generator_revenue": self.total_revenue,
            "generation_rent": self.total_generation_rent,
            "congestion_rent": self.congestion_rent,
            "variable_cost": float(self.variable_cost.sum()),
        }


def settle(prices: PriceSurface, schedule: Schedule, net: Network, pricing_rule: str) -> SettlementReport:
    """Energy-only settlement of ``schedule`` at ``prices``.

    ``da-lmp`` pays each unit the base-case LMP at its bus for its scheduled
    base output (for corrected schedules, the original day-ahead prices apply
    to the corrected dispatch).  ``slmp`` pays the securitized price.
    Loads pay the same price at their bus.
    """
    if pricing_rule not in RULES:
        raise ValueError(f"pricing rule must be one of {RULES}, got {pricing_rule!r}")
    if prices.horizon != schedule.horizon:
        raise PricingError(f"price horizon {prices.horizon} != schedule horizon {schedule.horizon}")
    if prices.bus_ids != [b.id for b in net.buses]:
        raise PricingError("price surface buses do not match the network")
    price = prices.base_lmp if pricing_rule == "da-lmp" else prices.slmp
    dispatch = schedule.p
    revenue = (price[net.gen_bus] * dispatch).sum(axis=1)
    variable_cost = net.gen_array("cost_energy") * dispatch.sum(axis=1)
    load_payment = (price * net.load[:, : schedule.horizon]).sum(axis=1)
    return SettlementReport(
        rule=pricing_rule,
        generator_ids=[g.id for g in net.generators],
        bus_ids=list(prices.bus_ids),
        revenue=revenue,
        variable_cost=variable_cost,
        load_payment=load_payment,
        prices=price.copy(),
        contributions=security_contributions(prices, net),
    )


def dual_stability(model: LinearModel, incumbent: MipSolution, schedule: Schedule, net: Network,
                   pricing_rule: str, reference: SettlementReport,
                   config: SolverConfig | None = None) -> dict[str, float]:
    """Re-solve the fixed LP from a different simplex path and compare settlements.

    Returns the largest relative change over total load payment, total
    revenue and per-unit revenue, and ``stable`` = 1.0 when it is at most 0.1%.
    """
    alt = fix_and_resolve(model, incumbent, config=config, alternate=True)
    other = settle(extract_prices(alt, model), schedule, net, pricing_rule)
    scale = max(abs(reference.total_load_payment), 1.0)
    changes = [
        abs(other.total_load_payment - reference.total_load_payment) / scale,
        abs(other.total_revenue - reference.total_revenue) / scale,
        float(np.max(np.abs(other.revenue - reference.revenue), initial=0.0)) / scale,
    ]
    worst = max(changes)
    return {"max_relative_change": worst, "stable": float(worst <= STABILITY_THRESHOLD)}


# ---------------------------------------------------------------------------
# CSV output


def _f(value: float) -> str:
    return f"{value:.6f}"


def write_settlement_csv(report: SettlementReport, path: str | Path) -> Path:
    """One row per generator, one per bus, then a system summary row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["kind", "id", "revenue", "variable_cost", "generation_rent", "load_payment"])
        for i, gid in enumerate(report.generator_ids):
            out.writerow(["generator", gid, _f(report.revenue[i]), _f(report.variable_cost[i]),
                          _f(report.generation_rent[i]), ""])
        for i, bid in enumerate(report.bus_ids):
            out.writerow(["bus", bid, "", "", "", _f(report.load_payment[i])])
        s = report.summary()
        out.writerow(["system", report.rule, _f(s["generator_revenue"]), _f(s["variable_cost"]),
                      _f(s["generation_rent"]), _f(s["load_payment"])])
        out.writerow(["system", "congestion_rent", "", "", "", _f(s["congestion_rent"])])
        if report.dual_stability is not None:
            out.writerow(["diagnostic", "dual_stability_max_relative_change", "", "", "",
                          _f(report.dual_stability["max_relative_change"])])
    return path


def write_price_csv(prices: PriceSurface, path: str | Path, which: str = "slmp") -> Path:
    """Bus-by-hour price table; ``which`` is ``slmp`` or a scenario id."""
    table = prices.slmp if which == "slmp" else prices.lmp[prices.scenario_ids.index(which)]
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["bus", *[f"t{t + 1}" for t in range(prices.horizon)]])
        for i, bid in enumerate(prices.bus_ids):
            out.writerow([bid, *map(_f, table[i])])
    return path


def write_contributions_csv(prices: PriceSurface, net: Network, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["scenario", "load_weighted_price"])
        for sid, value in security_contributions(prices, net).items():
            out.writerow([sid, _f(value)])
    return path
