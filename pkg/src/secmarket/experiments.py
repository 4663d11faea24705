"""Study pipelines: pricing comparison, realized-cost comparison, and
probability-perturbation robustness with solution pools.

Pair statistics over large cross products are computed by sorting one side
and counting with binary search, so billions of pairs are never
materialized.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .contingency import RealizedCostReport, realized_cost, write_realized_csv, write_violation_csv
from .markets import (
    ScenarioSet,
    Schedule,
    base_cost,
    base_energy_cost,
    build_escuc,
    build_scuc_lodf,
    build_scuc_prxy,
    commitment_cost,
    decode_schedule,
    expected_cost,
    scenario_cost,
    scenario_energy_costs,
)
from .network import Network, network_to_dict
from .omc import OmcResult, run_omc, write_omc_csv
from .opt import SolverConfig, fix_and_resolve, solution_pool, solve_mip
from .pricing import (
    PriceSurface,
    SettlementReport,
    dual_stability,
    extract_prices,
    settle,
    verify_slmp_identity,
    write_contributions_csv,
    write_price_csv,
    write_settlement_csv,
)
from .sensitivity import SensitivityFactors

log = logging.getLogger(__name__)

TIE_RTOL = 1e-9
PI_WINDOW = (0.944, 0.948)
METRICS = ("base", "expected", "realized", "scenario")


def _f(value: float) -> str:
    return f"{value:.6f}"


# ---------------------------------------------------------------------------
# pricing study


@dataclass
class ModelOutcome:
    name: str
    schedule: Schedule
    prices: PriceSurface
    settlement: SettlementReport
    scuc_cost: float
    final_cost: float
    omc: OmcResult | None = None
    slmp_residual: float | None = None

    @property
    def omc_cost(self) -> float:
        return self.final_cost - self.scuc_cost


@dataclass
class PricingStudyReport:
    outcomes: dict[str, ModelOutcome]
    benchmark_final_cost: float  # base-objective extensive form


def _solve_priced(model, rel_gap, seed, config):
    sol = solve_mip(model, rel_gap, seed, config)
    lp = fix_and_resolve(model, sol, config)
    return sol, decode_schedule(model, sol), extract_prices(lp, model)


def run_pricing_study(net: Network, scenarios: ScenarioSet, eta: float = 0.06, rel_gap: float = 0.0,
                      seed: int = 0, factors: SensitivityFactors | None = None,
                      config: SolverConfig | None = None, stability: bool = False) -> PricingStudyReport:
    """Solve the proxy, LODF and expected-cost models, repair the first two out
    of market, price each at its own rule and settle.

    The base-objective extensive form is solved as well; its cost is the
    benchmark final cost that no repaired schedule can beat.
    """
    factors = factors or SensitivityFactors(net)
    outcomes: dict[str, ModelOutcome] = {}
    for name, build in (("scuc_prxy", build_scuc_prxy), ("scuc_lodf", build_scuc_lodf)):
        model = build(net, eta=eta, factors=factors)
        sol, sch, prices = _solve_priced(model, rel_gap, seed, config)
        omc = run_omc(net, scenarios, sch, rel_gap, seed, factors, config)
        report = settle(prices, omc.corrected, net, "da-lmp")
        if stability:
            report.dual_stability = dual_stability(model, sol, omc.corrected, net, "da-lmp", report, config)
        outcomes[name] = ModelOutcome(name, sch, prices, report, base_cost(sch), omc.final_cost, omc)
    model = build_escuc(net, scenarios, "expected", factors=factors)
    sol, sch, prices = _solve_priced(model, rel_gap, seed, config)
    report = settle(prices, sch, net, "slmp")
    if stability:
        report.dual_stability = dual_stability(model, sol, sch, net, "slmp", report, config)
    cost = base_cost(sch)
    outcomes["escuc"] = ModelOutcome("escuc", sch, prices, report, cost, cost,
                                     slmp_residual=verify_slmp_identity(prices))
    bench_model = build_escuc(net, scenarios, "base", factors=factors)
    bench = solve_mip(bench_model, rel_gap, seed, config)
    return PricingStudyReport(outcomes, base_cost(decode_schedule(bench_model, bench)))


def write_pricing_study(report: PricingStudyReport, net: Network, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "final_costs.csv", out_dir / "settlement_summary.csv"]
    with paths[0].open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["model", "scuc_cost", "omc_cost", "final_cost"])
        for o in report.outcomes.values():
            out.writerow([o.name, _f(o.scuc_cost), _f(o.omc_cost), _f(o.final_cost)])
        out.writerow(["benchmark_escuc_base", _f(report.benchmark_final_cost), _f(0.0),
                      _f(report.benchmark_final_cost)])
    with paths[1].open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["model", "rule", "load_payment", "generator_revenue", "generation_rent",
                      "congestion_rent"])
        for o in report.outcomes.values():
            s = o.settlement.summary()
            out.writerow([o.name, o.settlement.rule, _f(s["load_payment"]), _f(s["generator_revenue"]),
                          _f(s["generation_rent"]), _f(s["congestion_rent"])])
    for o in report.outcomes.values():
        paths.append(write_price_csv(o.prices, out_dir / f"prices_{o.name}.csv"))
        paths.append(write_settlement_csv(o.settlement, out_dir / f"settlement_{o.name}.csv"))
        if o.omc is not None:
            paths.append(write_omc_csv(o.omc, out_dir / f"omc_{o.name}.csv"))
        else:
            paths.append(write_contributions_csv(o.prices, net, out_dir / f"security_{o.name}.csv"))
    return paths


# ---------------------------------------------------------------------------
# realized-cost study


@dataclass
class ModeOutcome:
    mode: str
    schedule: Schedule
    da_base_cost: float
    da_expected_cost: float
    da_scenario_cost: float
    realized: RealizedCostReport


def run_realized_cost_study(net: Network, scenarios: ScenarioSet, rel_gap: float = 0.0, seed: int = 0,
                            factors: SensitivityFactors | None = None,
                            config: SolverConfig | None = None, threads: int = 1) -> dict[str, ModeOutcome]:
    """Solve both extensive-form objectives and evaluate each schedule's
    day-ahead and realized N-1 costs."""
    factors = factors or SensitivityFactors(net)
    out = {}
    for mode in ("expected", "base"):
        model = build_escuc(net, scenarios, mode, factors=factors)
        sch = decode_schedule(model, solve_mip(model, rel_gap, seed, config))
        out[mode] = ModeOutcome(
            mode, sch, base_cost(sch), expected_cost(sch, scenarios), scenario_cost(sch, scenarios),
            realized_cost(net, sch, scenarios, factors, threads, config),
        )
    return out


def write_realized_study(outcomes: dict[str, ModeOutcome], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "realized_costs.csv"
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["objective", "da_base_cost", "da_expected_cost", "da_scenario_cost",
                      "realized_scenario_cost", "realized_total"])
        for o in outcomes.values():
            out.writerow([o.mode, _f(o.da_base_cost), _f(o.da_expected_cost), _f(o.da_scenario_cost),
                          _f(o.realized.scenario_energy_cost), _f(o.realized.realized_total)])
    paths = [path, write_realized_csv({m: o.realized for m, o in outcomes.items()},
                                      out_dir / "realized_breakdown.csv")]
    for mode, o in outcomes.items():
        paths.append(write_violation_csv(o.realized, out_dir / f"violations_{mode}.csv"))
    return paths


# ---------------------------------------------------------------------------
# solution pools


@dataclass
class PoolEvaluation:
    """Cost building blocks of every pool solution, enough to re-price the
    solutions under any probability vector without re-solving."""

    mode: str
    schedules: list[Schedule]
    commitment: np.ndarray  # (n,)
    base_energy: np.ndarray  # (n,) unweighted
    scenario_energy: np.ndarray  # (n, C) unweighted, day-ahead recourse dispatch
    realized_energy: np.ndarray  # (n, C) unweighted, contingency-analysis dispatch
    max_violation: np.ndarray  # (n,)
    shortfall: bool = False

    def __len__(self) -> int:
        return len(self.schedules)

    def base_costs(self) -> np.ndarray:
        return self.commitment + self.base_energy

    def scenario_costs(self, cont_probs: np.ndarray) -> np.ndarray:
        """Rows: solutions, columns: probability vectors (``cont_probs`` is (cases, C))."""
        return self.scenario_energy @ np.atleast_2d(cont_probs).T

    def expected_costs(self, cont_probs: np.ndarray) -> np.ndarray:
        cont_probs = np.atleast_2d(cont_probs)
        pi_base = 1.0 - cont_probs.sum(axis=1)
        return (self.commitment[:, None] + self.base_energy[:, None] * pi_base[None, :]
                + self.scenario_costs(cont_probs))

    def realized_costs(self, cont_probs: np.ndarray) -> np.ndarray:
        cont_probs = np.atleast_2d(cont_probs)
        pi_base = 1.0 - cont_probs.sum(axis=1)
        return (self.commitment[:, None] + self.base_energy[:, None] * pi_base[None, :]
                + self.realized_energy @ cont_probs.T)

    def metric(self, name: str, cont_probs: np.ndarray) -> np.ndarray:
        """Cost matrix (solutions, cases) for one metric."""
        n_cases = np.atleast_2d(cont_probs).shape[0]
        if name == "base":
            return np.repeat(self.base_costs()[:, None], n_cases, axis=1)
        return {"expected": self.expected_costs, "realized": self.realized_costs,
                "scenario": self.scenario_costs}[name](cont_probs)


def evaluate_pool(mode: str, schedules: list[Schedule], net: Network, scenarios: ScenarioSet,
                  factors: SensitivityFactors | None = None, threads: int = 1,
                  config: SolverConfig | None = None) -> PoolEvaluation:
    factors = factors or SensitivityFactors(net)
    order = [s.id for s in scenarios.contingencies]
    scen, real, viol = [], [], []
    for sch in schedules:
        energy = dict(zip(sch.scenario_ids, scenario_energy_costs(sch)))
        scen.append([energy[sid] for sid in order])
        report = realized_cost(net, sch, scenarios, factors, threads, config)
        real.append([report.scenario_costs[sid] for sid in order])
        viol.append(report.max_violation)
    n_c = len(order)
    return PoolEvaluation(
        mode=mode,
        schedules=schedules,
        commitment=np.array([commitment_cost(s) for s in schedules]),
        base_energy=np.array([base_energy_cost(s) for s in schedules]),
        scenario_energy=np.array(scen).reshape(len(schedules), n_c),
        realized_energy=np.array(real).reshape(len(schedules), n_c),
        max_violation=np.array(viol),
    )


def build_pool(net: Network, scenarios: ScenarioSet, mode: str, pool_size: int, gap: float,
               seed: int = 0, factors: SensitivityFactors | None = None, threads: int = 1,
               config: SolverConfig | None = None) -> PoolEvaluation:
    factors = factors or SensitivityFactors(net)
    model = build_escuc(net, scenarios, mode, factors=factors)
    pool = solution_pool(model, gap, pool_size, seed, cut_cols=model.var("u"), config=config)
    schedules = [decode_schedule(model, s) for s in pool.solutions]
    ev = evaluate_pool(mode, schedules, net, scenarios, factors, threads, config)
    ev.shortfall = pool.shortfall
    return ev


# ---------------------------------------------------------------------------
# pair statistics


def count_lower(a: np.ndarray, b: np.ndarray, rtol: float = TIE_RTOL) -> int:
    """Number of pairs (x in a, y in b) with x strictly lower than y.

    "Strictly lower" means ``y - x > rtol * max(|x|, |y|)``; near-ties count
    as not lower for either side.  Cost: O((|a| + |b|) log |b|).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        return 0
    bmax = float(np.max(np.abs(b)))
    # everything above x + band is certainly lower-than; everything <= x is not
    band = 2.0 * rtol * np.maximum(np.abs(a), bmax) + 1e-300
    lo = np.searchsorted(b, a, side="right")
    hi = np.searchsorted(b, a + band, side="right")
    total = int((b.size - hi).sum())
    for i in np.flatnonzero(hi > lo):
        y = b[lo[i]: hi[i]]
        x = a[i]
        total += int(np.count_nonzero(y - x > rtol * np.maximum(abs(x), np.abs(y))))
    return total


def count_lower_bruteforce(a: np.ndarray, b: np.ndarray, rtol: float = TIE_RTOL) -> int:
    x = np.asarray(a, dtype=float).ravel()[:, None]
    y = np.asarray(b, dtype=float).ravel()[None, :]
    return int(np.count_nonzero(y - x > rtol * np.maximum(np.abs(x), np.abs(y))))


def difference_histogram(a: np.ndarray, b: np.ndarray, bins: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of all pairwise differences ``x - y`` (x in a, y in b).

    Bins are half-open ``[e_k, e_k+1)`` except the last, which is closed.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.sort(np.asarray(b, dtype=float).ravel())
    lo, hi = a.min() - b.max(), a.max() - b.min()
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    # pairs with x - y < e  <=>  y > x - e
    below = np.zeros(bins + 1, dtype=np.int64)
    for start in range(0, a.size, 4096):
        chunk = a[start: start + 4096]
        idx = np.searchsorted(b, chunk[:, None] - edges[None, :], side="right")
        below += (b.size - idx).sum(axis=0)
    counts = np.diff(below)
    counts[-1] += a.size * b.size - below[-1]  # differences equal to the top edge
    return counts, edges


@dataclass
class PairComparisonReport:
    """Percentages of pairs (base-objective solution, expected-objective
    solution) in which the base-objective side has the lower cost."""

    n_pairs: int
    pct_lower_base_cost: float
    pct_lower_expected_cost: float
    pct_lower_realized_cost: float
    pct_lower_scenario_cost: float
    histograms: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    sigma: float = 0.0
    n_cases: int = 1

    def pct(self, metric: str) -> float:
        return getattr(self, f"pct_lower_{metric}_cost")


def compare_pools(first: PoolEvaluation, second: PoolEvaluation, cont_probs: np.ndarray,
                  bins: int = 40, sigma: float = 0.0) -> PairComparisonReport:
    """Cross every (solution, case) of ``first`` with every (solution, case) of ``second``."""
    cont_probs = np.atleast_2d(cont_probs)
    pct, hists = {}, {}
    n_pairs = 0
    for metric in METRICS:
        a = first.metric(metric, cont_probs).ravel()
        b = second.metric(metric, cont_probs).ravel()
        n_pairs = a.size * b.size
        pct[metric] = 100.0 * count_lower(a, b) / n_pairs
        hists[metric] = difference_histogram(a, b, bins)
    return PairComparisonReport(
        n_pairs=n_pairs,
        pct_lower_base_cost=pct["base"],
        pct_lower_expected_cost=pct["expected"],
        pct_lower_realized_cost=pct["realized"],
        pct_lower_scenario_cost=pct["scenario"],
        histograms=hists,
        sigma=sigma,
        n_cases=cont_probs.shape[0],
    )


def build_pools_and_pair(net: Network, scenarios: ScenarioSet, pool_size: int, gap: float, seed: int = 0,
                         factors: SensitivityFactors | None = None, threads: int = 1,
                         config: SolverConfig | None = None
                         ) -> tuple[PairComparisonReport, dict[str, PoolEvaluation]]:
    """Pools for both objectives and their pairwise comparison at the nominal probabilities."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    factors = factors or SensitivityFactors(net)
    pools = {mode: build_pool(net, scenarios, mode, pool_size, gap, seed, factors, threads, config)
             for mode in ("base", "expected")}
    for mode, pool in pools.items():
        if pool.shortfall:
            log.warning("%s pool holds %d of %d requested solutions", mode, len(pool), pool_size)
    report = compare_pools(pools["base"], pools["expected"], scenarios.contingency_probabilities)
    return report, pools


# ---------------------------------------------------------------------------
# probability perturbation


class PerturbationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PerturbationConfig:
    sigma: float = 0.2
    n_cases: int = 2000
    window: tuple[float, float] = PI_WINDOW
    seed: int = 0
    max_attempts_per_case: int = 1000  # acceptance below 0.1% aborts

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n_cases < 1:
            raise ValueError("n_cases must be >= 1")
        if self.window[0] > self.window[1]:
            raise ValueError("empty acceptance window")


def perturbation_matrix(scenarios: ScenarioSet, cfg: PerturbationConfig) -> tuple[np.ndarray, int]:
    """Accepted contingency probability vectors, shape (n_cases, C), and the
    number of rejected draws.

    Each case draws from its own stream spawned from the master seed, so the
    result does not depend on evaluation order.
    """
    base = scenarios.contingency_probabilities
    lo, hi = cfg.window
    pi0 = 1.0 - base.sum()
    if not lo <= pi0 <= hi:
        raise PerturbationError(f"nominal base probability {pi0} lies outside the window {cfg.window}")
    out = np.empty((cfg.n_cases, base.size))
    rejected = 0
    for i in range(cfg.n_cases):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
        for _ in range(cfg.max_attempts_per_case):
            probs = base * (1.0 + rng.normal(0.0, cfg.sigma, base.size)) if cfg.sigma > 0 else base.copy()
            pi_base = 1.0 - probs.sum()
            if np.all(probs > 0) and lo <= pi_base <= hi:
                out[i] = probs
                break
            rejected += 1
        else:
            raise PerturbationError(
                f"case {i}: no acceptable draw in {cfg.max_attempts_per_case} attempts "
                f"(acceptance rate below {1 / cfg.max_attempts_per_case:.2%}); sigma={cfg.sigma}")
    if rejected:
        log.info("perturbation sigma=%s: %d draws rejected for %d cases", cfg.sigma, rejected, cfg.n_cases)
    return out, rejected


def perturb_probabilities(scenarios: ScenarioSet, cfg: PerturbationConfig) -> list[ScenarioSet]:
    """``n_cases`` perturbed scenario sets; the base probability takes the remainder."""
    probs, _ = perturbation_matrix(scenarios, cfg)
    return [scenarios.with_contingency_probabilities(p) for p in probs]


def run_perturbation_study(net: Network, scenarios: ScenarioSet, cfg: PerturbationConfig,
                           pools: dict[str, PoolEvaluation], bins: int = 40) -> PairComparisonReport:
    """Re-price fixed pool solutions under every perturbed probability vector and
    compare the two objectives over all cross pairs."""
    probs, _ = perturbation_matrix(scenarios, cfg)
    return compare_pools(pools["base"], pools["expected"], probs, bins, sigma=cfg.sigma)


def write_pair_reports(reports: Sequence[PairComparisonReport], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = out_dir / "pair_statistics.csv"
    hist = out_dir / "pair_histograms.csv"
    with summary.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sigma", "n_cases", "n_pairs", *[f"pct_lower_{m}_cost" for m in METRICS]])
        for r in reports:
            out.writerow([_f(r.sigma), r.n_cases, r.n_pairs, *[_f(r.pct(m)) for m in METRICS]])
    with hist.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sigma", "metric", "bin_low", "bin_high", "count"])
        for r in reports:
            for metric, (counts, edges) in r.histograms.items():
                for k, c in enumerate(counts):
                    out.writerow([_f(r.sigma), metric, _f(edges[k]), _f(edges[k + 1]), int(c)])
    return [summary, hist]


def write_pool_csv(pools: dict[str, PoolEvaluation], scenarios: ScenarioSet, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "pool_costs.csv"
    probs = scenarios.contingency_probabilities
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["objective", "solution", *[f"{m}_cost" for m in METRICS], "max_violation"])
        for mode, pool in pools.items():
            cols = [pool.metric(m, probs)[:, 0] for m in METRICS]
            for i in range(len(pool)):
                out.writerow([mode, i, *[_f(c[i]) for c in cols], _f(pool.max_violation[i])])
    return path


# ---------------------------------------------------------------------------
# manifest


def case_digest(net: Network) -> str:
    doc = json.dumps(network_to_dict(net), sort_keys=True).encode()
    return hashlib.sha256(doc).hexdigest()


def write_manifest(out_dir: str | Path, study: str, net: Network, settings: dict,
                   config: SolverConfig | None = None, outputs: Sequence[Path] = ()) -> Path:
    """Machine-readable record of inputs, seeds, tolerances and versions."""
    import highspy
    import scipy

    from . import __version__

    config = config or SolverConfig()
    doc = {
        "study": study,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "case": {"name": net.name, "sha256": case_digest(net)},
        "settings": settings,
        "solver": asdict(config),
        "versions": {
            "secmarket": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "highspy": getattr(highspy, "__version__", "unknown"),
        },
        "outputs": sorted(Path(p).name for p in outputs),
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path
