import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from builders import gen, line, network, oracle_case, parallel_pair, single_bus, triangle
from secmarket.markets import (
    BASE,
    ScenarioError,
    ScenarioSet,
    Scenario,
    base_cost,
    base_only,
    build_escuc,
    build_scuc_lodf,
    build_scuc_prxy,
    decode_schedule,
    encode_schedule,
    expected_cost,
    make_scenario_set,
    scenario_cost,
)
from secmarket.opt import SolveError, solve_mip


def solved(model):
    sol = solve_mip(model)
    return sol, decode_schedule(model, sol)


# ---------------------------------------------------------------- scenarios


def test_full_scenario_set_on_large_case(case118):
    sc = make_scenario_set(case118, base_probability=0.946)
    assert len(sc.all) == 232
    assert len(sc.of_kind("generator")) == 54
    assert len(sc.of_kind("line")) == 177
    assert sc.base.probability == pytest.approx(0.946)
    assert sc.contingency_probabilities.sum() == pytest.approx(0.054)


def test_default_rates_give_base_probability_from_remainder(case118):
    sc = make_scenario_set(case118)
    assert sc.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    assert sc.base.probability == pytest.approx(1 - 54 * 6e-4 - 177 * 1.2e-4)


def test_all_radial_network_has_generator_outages_only():
    net = network(["hub", "x", "y"], [line("a", "hub", "x", 10), line("b", "hub", "y", 10)],
                  [gen("g1", "hub", 10, 1), gen("g2", "x", 10, 1)], {"y": [1.0]})
    sc = make_scenario_set(net)
    assert sc.ids == ["base", "G:g1", "G:g2"]


def test_rates_summing_to_one_rejected():
    with pytest.raises(ScenarioError):
        make_scenario_set(triangle(), failure_rates={"G1": 0.5, "G2": 0.5})
    with pytest.raises(ScenarioError):
        ScenarioSet(Scenario(BASE, BASE, None, 0.5), ())


def test_indicators():
    net = triangle()
    for s in make_scenario_set(net).all:
        zeros = (s.gen_indicator(net) == 0).sum() + (s.line_indicator(net) == 0).sum()
        assert zeros == (0 if s.kind == BASE else 1)


# ---------------------------------------------------------------- proxy SCUC


def test_prxy_two_generator_dispatch():
    net = single_bus([gen("cheap", "1", 100, 10), gen("dear", "1", 100, 30, ramp_10min=100)], [50.0])
    _, sch = solved(build_scuc_prxy(net, eta=0.0))
    assert sch.p[:, 0] == pytest.approx([50.0, 0.0])
    assert sch.r[1, 0] >= 50.0 - 1e-6


def test_prxy_single_generator_infeasible():
    net = single_bus([gen("only", "1", 100, 10)], [50.0])
    with pytest.raises(SolveError):
        solve_mip(build_scuc_prxy(net, eta=0.0))


def test_prxy_no_output_trivially_satisfied():
    net = single_bus([gen("only", "1", 100, 10, cost_noload=5)], [0.0])
    sol, sch = solved(build_scuc_prxy(net, eta=0.0))
    assert sol.objective_value == pytest.approx(0.0)
    assert np.all(sch.p == 0)


# ---------------------------------------------------------------- LODF SCUC


def test_lodf_rows_absent_without_outage_pairs():
    net = network(["a", "b"], [line("l", "a", "b", 100)], [gen("g1", "a", 100, 1), gen("g2", "b", 100, 2)],
                  {"b": [10.0]})
    m = build_scuc_lodf(net)
    assert "lodf_max" not in m.blocks


def test_lodf_triangle_row_count():
    m = build_scuc_lodf(triangle(), lazy_lines=False)
    per_period = sum(m.lazy_candidates(n).size for n in ("lodf_max", "lodf_min")) / triangle().horizon
    assert per_period == 12
    assert (m.con("lodf_max") >= 0).sum() == 6


def test_parallel_pair_outage_limit_binds():
    net = parallel_pair()
    _, prxy = solved(build_scuc_prxy(net, eta=0.0))
    _, lodf = solved(build_scuc_lodf(net, eta=0.0))
    assert prxy.p[:, 0] == pytest.approx([100.0, 0.0])
    # each line doubles after its twin trips, so pre-contingency flow is held at 60/2 per line
    assert lodf.p[:, 0] == pytest.approx([60.0, 40.0])


# ---------------------------------------------------------------- ESCUC


def test_escuc_without_contingencies_modes_coincide():
    net = oracle_case()
    exp_sol, exp = solved(build_escuc(net, base_only(), "expected"))
    base_sol, base = solved(build_escuc(net, base_only(), "base"))
    assert exp_sol.objective_value == pytest.approx(base_sol.objective_value)
    assert exp_sol.objective_value == pytest.approx(base_cost(exp))


def test_escuc_identical_units_balanced():
    net = single_bus([gen("A", "1", 100, 10, ramp_10min=40), gen("B", "1", 100, 10, ramp_10min=40)], [80.0])
    sc = make_scenario_set(net)
    _, sch = solved(build_escuc(net, sc, "expected"))
    assert sch.u[:, 0] == pytest.approx([1.0, 1.0])
    assert sch.p[:, 0] == pytest.approx([40.0, 40.0])
    # the outaged unit produces nothing in its own scenario
    assert sch.scenario_dispatch("G:A")[0, 0] == pytest.approx(0.0)
    assert sch.scenario_dispatch("G:A")[1, 0] == pytest.approx(80.0)


def test_escuc_large_case_dimensions(case118):
    net = case118.with_horizon(1)
    sc = make_scenario_set(net, base_probability=0.946)
    m = build_escuc(net, sc, "expected")
    assert m.var("ps").shape == (231, 54, 1)
    assert m.var("pinj").shape == (232, 118, 1)


def test_decode_round_trip_and_offline_units():
    net = oracle_case()
    m = build_escuc(net, make_scenario_set(net), "expected")
    sol, sch = solved(m)
    assert encode_schedule(m, sch) == pytest.approx(sol.x)
    off = sch.u == 0
    assert off.any()
    assert np.all(sch.p[off] == 0) and np.all(np.abs(sch.r[off]) <= 1e-9)


def test_solution_satisfies_every_constraint():
    net = oracle_case()
    for m in (build_scuc_prxy(net), build_scuc_lodf(net, lazy_lines=True),
              build_escuc(net, make_scenario_set(net), "base", lazy_lines=True)):
        sol = solve_mip(m)
        assert m.max_violation(sol.x, include_lazy=True) <= 1e-6


def test_cost_functions_match_objectives():
    net = oracle_case()
    sc = make_scenario_set(net)
    exp_sol, exp = solved(build_escuc(net, sc, "expected"))
    base_sol, base = solved(build_escuc(net, sc, "base"))
    assert expected_cost(exp, sc) == pytest.approx(exp_sol.objective_value)
    assert base_cost(base) == pytest.approx(base_sol.objective_value)


def test_scenario_cost_requires_matching_set():
    net = oracle_case()
    _, sch = solved(build_escuc(net, make_scenario_set(net), "expected"))
    other = make_scenario_set(net, generator_outages=["G1"], line_outages=[])
    with pytest.raises(ScenarioError):
        scenario_cost(sch, other)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(st.floats(20.0, 170.0), min_size=2, max_size=2), st.floats(0.9, 0.99))
def test_objective_mode_and_security_orderings(load, base_probability):
    net = triangle(
        gens=[gen("G1", "1", 150, 10, p_min=20, cost_noload=100, cost_startup=50, ramp_10min=60),
              gen("G2", "2", 120, 20, p_min=10, cost_noload=50, cost_startup=20, ramp_10min=60),
              gen("G3", "3", 100, 35, cost_noload=150, ramp_10min=80)],
        load={"3": load}, rating=90.0, emergency=110.0)
    sc = make_scenario_set(net, base_probability=base_probability)
    try:
        _, exp = solved(build_escuc(net, sc, "expected"))
        _, base = solved(build_escuc(net, sc, "base"))
    except SolveError:
        return
    tol = 1e-6 * base_cost(base)
    assert expected_cost(exp, sc) <= expected_cost(base, sc) + tol
    assert base_cost(base) <= base_cost(exp) + tol
    prxy_sol, _ = solved(build_scuc_prxy(net))
    try:
        lodf_sol = solve_mip(build_scuc_lodf(net))
    except SolveError:
        return
    assert prxy_sol.objective_value <= lodf_sol.objective_value + tol
