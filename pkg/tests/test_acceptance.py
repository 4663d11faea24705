"""Acceptance suite: one test per criterion, each recording a PASS/FAIL verdict line.

The verdicts are printed in the "acceptance criteria" section of the pytest
terminal summary.
"""

from __future__ import annotations

import os
import time

import numpy as np
import pytest

from acceptance_log import record
from builders import gen, line, network, oracle_case, reserve_import_case, single_bus
from mip_oracle import enumerate_commitments
from sensitivity_oracle import compare_outage
from settlement_oracle import rent_from_flows
from secmarket.cases import load_bundled
from secmarket.cli import main as cli_main
from secmarket.contingency import realized_cost
from secmarket.experiments import (
    PerturbationConfig,
    PoolEvaluation,
    compare_pools,
    count_lower_bruteforce,
    perturbation_matrix,
    run_perturbation_study,
    run_pricing_study,
    run_realized_cost_study,
)
from secmarket.markets import (
    base_only,
    build_escuc,
    build_scuc_lodf,
    build_scuc_prxy,
    decode_schedule,
    make_scenario_set,
    scenario_subset,
)
from secmarket.opt import fix_and_resolve, solve_mip
from secmarket.pricing import extract_prices, settle, verify_slmp_identity
from secmarket.sensitivity import SensitivityFactors

SLMP_TOL = 1e-6
VIOLATION_TOL = 1e-6
BALANCE_TOL = 1e-9


def _instances():
    toy3 = load_bundled("toy3")
    study6 = load_bundled("study6")
    oracle = oracle_case()
    reserve = reserve_import_case()
    return {
        "toy3": (toy3, make_scenario_set(toy3)),
        "oracle3": (oracle, make_scenario_set(oracle)),
        "reserve_import": (reserve, make_scenario_set(reserve)),
        "study6": (study6, make_scenario_set(study6, base_probability=0.946)),
    }


@pytest.fixture(scope="module")
def studies():
    """Pricing study, realized-cost study and contingency analysis of the OMC outputs per instance."""
    out = {}
    for name, (net, sc) in _instances().items():
        factors = SensitivityFactors(net)
        pricing = run_pricing_study(net, sc, factors=factors)
        realized = run_realized_cost_study(net, sc, factors=factors)
        omc_checks = {key: realized_cost(net, o.omc.corrected, sc, factors)
                      for key, o in pricing.outcomes.items() if o.omc is not None}
        out[name] = {"net": net, "scenarios": sc, "pricing": pricing, "realized": realized, "omc_ca": omc_checks}
    return out


def _solve_large_case(net, rel_gap):
    factors = SensitivityFactors(net)
    start = time.perf_counter()
    model = build_escuc(net, scenario_subset(net, factors), "expected", factors=factors)
    inc = solve_mip(model, rel_gap=rel_gap)
    prices = extract_prices(fix_and_resolve(model, inc), model)
    return verify_slmp_identity(prices), time.perf_counter() - start


@pytest.fixture(scope="module")
def large_case_short_horizon(case118):
    """Subset-scenario ESCUC on the 118-bus case, first two periods, 0% gap."""
    return _solve_large_case(case118.with_horizon(2), 0.0)


def test_criterion_01_slmp_identity(studies, large_case_short_horizon):
    residuals = {}
    for name, s in studies.items():
        residuals[name] = s["pricing"].outcomes["escuc"].slmp_residual
        for mode in ("expected", "base"):
            model = build_escuc(s["net"], s["scenarios"], mode)
            inc = solve_mip(model)
            prices = extract_prices(fix_and_resolve(model, inc), model)
            residuals[f"{name}/{mode}"] = verify_slmp_identity(prices)
    residuals["synthetic118-subset-2h"], seconds = large_case_short_horizon
    worst = max(residuals.values())
    # the full 24-period subset run exceeds the 30 min budget on a single core;
    # the timed run is test_criterion_01_large_case_runtime (opt-in)
    record(1, "securitized price identity", False,
           f"identity holds: max residual {worst:.2e} $/MWh over {len(residuals)} solves "
           f"(118-bus subset, 2 periods: {seconds:.0f} s); runtime target on the 24-period "
           f"118-bus subset NOT met on this host (set SECMARKET_SLOW=1 to time it)")
    assert worst <= SLMP_TOL, residuals


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("SECMARKET_SLOW") != "1", reason="takes about an hour on one core")
def test_criterion_01_large_case_runtime(case118):
    residual, seconds = _solve_large_case(case118, 0.01)
    record(1, "securitized price identity", residual <= SLMP_TOL and seconds < 30 * 60,
           f"24-period 118-bus subset at 1% gap: residual {residual:.2e} $/MWh, {seconds / 60:.1f} min")
    assert residual <= SLMP_TOL
    assert seconds < 30 * 60


def test_criterion_02_n1_feasibility(studies):
    worst = {}
    for name, s in studies.items():
        for mode, o in s["realized"].items():
            worst[f"{name}/escuc-{mode}"] = o.realized.max_violation
        for key, report in s["omc_ca"].items():
            worst[f"{name}/omc-{key}"] = report.max_violation
    top = max(worst, key=worst.get)
    ok = worst[top] <= VIOLATION_TOL
    record(2, "N-1 feasibility", ok, f"worst violation {worst[top]:.2e} MW ({top}) over {len(worst)} schedules")
    assert ok, worst


def test_criterion_03_benchmark_ordering(studies):
    slack = {}
    for name, s in studies.items():
        p = s["pricing"]
        escuc = p.benchmark_final_cost
        for key in ("scuc_prxy", "scuc_lodf"):
            slack[f"{name}/{key}"] = (p.outcomes[key].final_cost - escuc) / escuc
    worst = min(slack.values())
    ok = worst >= -1e-9
    record(3, "benchmark ordering", ok, f"min relative margin of repaired models over ESCUC {worst:.3e}")
    assert ok, slack


def test_criterion_04_objective_mode_orderings(studies):
    failures = []
    for name, s in studies.items():
        exp, base = s["realized"]["expected"], s["realized"]["base"]
        tol = 1e-9 * base.da_base_cost
        if exp.da_expected_cost > base.da_expected_cost + tol:
            failures.append(f"{name}: expected cost")
        if base.da_base_cost > exp.da_base_cost + tol:
            failures.append(f"{name}: base cost")
        if exp.da_scenario_cost > base.da_scenario_cost + tol:
            failures.append(f"{name}: scenario cost")
    ok = not failures
    record(4, "objective-mode orderings", ok,
           f"{len(studies)} instances, violations: {failures or 'none'}")
    assert ok, failures


def test_criterion_05_sensitivity_oracle(case118, factors118):
    rng = np.random.default_rng(118)
    inj = rng.normal(0.0, 50.0, len(case118.buses))
    inj[case118.bus_index[case118.reference_bus]] -= inj.sum()
    errors = [max(compare_outage(case118, factors118, lid, inj)) for lid in factors118.non_radial]
    small_worst, n_small = 0.0, 0
    for seed in range(40):
        g = np.random.default_rng(seed)
        n = int(g.integers(3, 9))
        edges = [(int(g.integers(0, i)), i) for i in range(1, n)]
        edges += [tuple(int(v) for v in g.choice(n, 2, replace=False)) for _ in range(int(g.integers(1, 7)))]
        net = network([str(i) for i in range(n)],
                      [line(f"l{k}", str(a), str(b), 10, x=float(g.uniform(0.01, 1.0)))
                       for k, (a, b) in enumerate(edges)],
                      [gen("g", "0", 10, 1)], {"0": [1.0]})
        f = SensitivityFactors(net)
        inj_small = g.normal(0.0, 10.0, n)
        inj_small[net.bus_index[net.reference_bus]] -= inj_small.sum()
        for lid in f.non_radial:
            small_worst = max(small_worst, *compare_outage(net, f, lid, inj_small))
            n_small += 1
    worst = max(max(errors), small_worst)
    ok = len(errors) == 177 and worst <= 1e-8
    record(5, "sensitivity oracle", ok,
           f"{len(errors)} large-case outages and {n_small} random-graph outages, worst relative error {worst:.2e}")
    assert ok


def test_criterion_06_bruteforce_mip_oracle():
    net = oracle_case()
    sc = make_scenario_set(net)
    builders = {
        "prxy": lambda: build_scuc_prxy(net),
        "lodf": lambda: build_scuc_lodf(net),
        "escuc-base": lambda: build_escuc(net, sc, "base"),
        "escuc-expected": lambda: build_escuc(net, sc, "expected"),
    }
    rel = {}
    for name, make in builders.items():
        best, _ = enumerate_commitments(make())
        ours = solve_mip(make(), rel_gap=0.0).objective_value
        rel[name] = abs(ours - best) / abs(best)
    worst = max(rel.values())
    ok = worst <= 1e-6
    record(6, "brute-force MIP oracle", ok, f"4 builders on 3 buses/3 units/2 periods, worst rel diff {worst:.1e}")
    assert ok, rel


def test_criterion_07_perturbation_construction(study6, study6_scenarios, case118):
    full118 = make_scenario_set(case118, base_probability=0.946)
    details = []
    ok = True
    for name, sc in (("study6", study6_scenarios), ("synthetic118", full118)):
        probs, rejected = perturbation_matrix(sc, PerturbationConfig(sigma=0.2, n_cases=2000, seed=0))
        pi_base = 1.0 - probs.sum(axis=1)
        sets = [sc.with_contingency_probabilities(p) for p in probs]
        sums = max(abs(s.probabilities.sum() - 1.0) for s in sets)
        in_window = bool(np.all((pi_base >= 0.944) & (pi_base <= 0.948)))
        zero, _ = perturbation_matrix(sc, PerturbationConfig(sigma=0.0, n_cases=3))
        exact = bool(np.all(zero == sc.contingency_probabilities))
        ok &= len(sets) == 2000 and in_window and sums <= 1e-12 and exact
        details.append(f"{name}: 2000 accepted ({rejected} redrawn), max |sum-1| {sums:.1e}")
    record(7, "perturbation construction", ok, "; ".join(details))
    assert ok


def test_criterion_08_pair_statistics(study6, study6_scenarios, study6_pools):
    exact = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        pools = []
        for mode in ("base", "expected"):
            pools.append(PoolEvaluation(
                mode, [None] * 5, rng.integers(0, 3, 5) * 10.0, rng.integers(90, 95, 5) * 10.0,
                rng.integers(90, 99, (5, 4)) * 10.0, rng.integers(90, 99, (5, 4)) * 10.0, np.zeros(5)))
        probs = rng.uniform(0.001, 0.01, (2, 4))
        report = compare_pools(pools[0], pools[1], probs)
        for metric in ("base", "expected", "realized", "scenario"):
            a, b = pools[0].metric(metric, probs), pools[1].metric(metric, probs)
            brute = 100.0 * count_lower_bruteforce(a, b) / (a.size * b.size)
            exact &= report.pct(metric) == brute

    _, pools = study6_pools
    trend = []
    for sigma in (0.0, 0.2, 0.4):
        cfg = PerturbationConfig(sigma=sigma, n_cases=2000, seed=0)
        trend.append(run_perturbation_study(study6, study6_scenarios, cfg, pools).pct_lower_expected_cost)
    monotone = all(b >= a for a, b in zip(trend, trend[1:]))
    ok = exact and monotone
    record(8, "pair-statistics oracle", ok,
           f"5x5 streamed == brute force: {exact}; base-mode lower expected cost % at sigma 0/0.2/0.4: "
           + " -> ".join(f"{v:.3f}" for v in trend))
    assert exact
    assert monotone, trend


def test_criterion_09_settlement_balance(studies):
    worst = 0.0
    runs = 0

    def check(report, net, dispatch):
        nonlocal worst, runs
        scale = max(abs(report.total_load_payment), 1.0)
        worst = max(worst, report.balance_residual(),
                    abs(rent_from_flows(net, dispatch, report.prices) - report.congestion_rent) / scale)
        runs += 1

    for s in studies.values():
        for o in s["pricing"].outcomes.values():
            settled = o.omc.corrected if o.omc is not None else o.schedule
            check(o.settlement, s["net"], settled.p)
    net = single_bus([gen("a", "1", 100, 10, ramp_10min=100), gen("b", "1", 100, 30, ramp_10min=100)], [80.0])
    rents = []
    for model in (build_scuc_prxy(net, eta=0.0), build_escuc(net, make_scenario_set(net), "expected"),
                  build_escuc(net, base_only(), "base")):
        inc = solve_mip(model)
        sch = decode_schedule(model, inc)
        prices = extract_prices(fix_and_resolve(model, inc), model)
        for rule in ("da-lmp", "slmp"):
            report = settle(prices, sch, net, rule)
            check(report, net, sch.p)
            rents.append(report.congestion_rent)
    ok = worst <= BALANCE_TOL and all(r == 0.0 for r in rents)
    record(9, "settlement balance", ok,
           f"{runs} settlements, worst relative gap between totals and line-flow rent {worst:.1e}; "
           f"single-bus rents {sorted(set(rents))}")
    assert ok


def test_criterion_10_determinism(tmp_path):
    def run(out):
        return cli_main(["study", "perturb", "--case", "toy3", "--scenarios", "all", "--sigma", "0", "0.2", "0.4",
                         "--cases", "500", "--pool", "5", "--pool-gap", "0.5", "--seed", "7", "--out", str(out)])

    first, second = tmp_path / "first", tmp_path / "second"
    assert run(first) == 0 and run(second) == 0
    names = sorted(p.name for p in first.glob("*.csv"))
    same = all((first / n).read_bytes() == (second / n).read_bytes() for n in names)
    ok = same and len(names) == 3
    record(10, "determinism", ok, f"{len(names)} CSVs from two `study perturb` runs byte-identical: {same}")
    assert ok
