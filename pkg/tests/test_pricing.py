import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import gen, line, network, oracle_case, single_bus, triangle
from secmarket.markets import base_only, build_escuc, build_scuc_prxy, decode_schedule, make_scenario_set
from secmarket.opt import fix_and_resolve, solve_mip
from secmarket.pricing import (
    PriceSurface,
    PricingError,
    dual_stability,
    extract_prices,
    settle,
    verify_slmp_identity,
    write_price_csv,
    write_settlement_csv,
)


def priced(model):
    inc = solve_mip(model)
    lp = fix_and_resolve(model, inc)
    return inc, decode_schedule(model, lp), extract_prices(lp, model)


def congested_pair():
    """Cheap unit at bus a behind a 10 MW line; dear unit at the load bus b."""
    return network(["a", "b"], [line("ab", "a", "b", 10, 12)],
                   [gen("cheap", "a", 100, 10), gen("dear", "b", 100, 40)], {"b": [30.0]}, reference="b")


def test_single_bus_price_is_marginal_cost():
    net = single_bus([gen("g", "1", 100, 30)], [50.0])
    _, sch, prices = priced(build_escuc(net, base_only(), "expected"))
    assert prices.base_lmp[0, 0] == pytest.approx(30.0)
    assert prices.slmp[0, 0] == pytest.approx(30.0)
    report = settle(prices, sch, net, "slmp")
    assert report.congestion_rent == 0.0
    assert report.balance_residual() <= 1e-9


def test_empty_contingency_set_slmp_equals_base_lmp():
    net = oracle_case()
    _, _, prices = priced(build_escuc(net, base_only(), "expected"))
    assert prices.slmp == pytest.approx(prices.base_lmp, abs=1e-9)
    assert verify_slmp_identity(prices) <= 1e-9


def test_uncongested_prices_uniform_across_buses():
    net = triangle(load={"3": [50.0]})
    _, _, prices = priced(build_scuc_prxy(net, eta=0.0))
    lmp = prices.base_lmp
    assert np.ptp(lmp, axis=0) == pytest.approx(0.0, abs=1e-9)


def test_congested_rent():
    net = congested_pair()
    _, sch, prices = priced(build_escuc(net, base_only(), "expected"))
    lam = prices.base_lmp[:, 0]
    assert lam == pytest.approx([10.0, 40.0])
    report = settle(prices, sch, net, "slmp")
    assert report.congestion_rent == pytest.approx((lam[1] - lam[0]) * 10.0)
    assert report.congestion_rent == pytest.approx(300.0)
    assert report.balance_residual() <= 1e-9


def test_zero_dispatch_settles_to_zero():
    net = single_bus([gen("g", "1", 100, 30)], [0.0])
    _, sch, prices = priced(build_escuc(net, base_only(), "expected"))
    s = settle(prices, sch, net, "da-lmp").summary()
    assert all(v == 0.0 for v in s.values())


def test_slmp_identity_on_contingency_model():
    net = oracle_case()
    _, _, prices = priced(build_escuc(net, make_scenario_set(net), "expected"))
    assert prices.lmp.shape[0] == 7
    assert verify_slmp_identity(prices) <= 1e-6


def test_identity_detects_perturbation():
    lmp = np.array([[[10.0, 11.0]], [[2.0, 0.0]]])
    surface = PriceSurface(lmp, lmp.sum(axis=0), ["base", "G:x"], ["1"], "escuc")
    assert verify_slmp_identity(surface) == 0.0
    lmp = lmp.copy()
    lmp[1, 0, 1] += 1.0
    assert verify_slmp_identity(PriceSurface(lmp, surface.slmp, surface.scenario_ids, ["1"], "escuc")) == 1.0


def test_rules_and_horizon_checks():
    net = congested_pair()
    _, sch, prices = priced(build_escuc(net, base_only(), "expected"))
    with pytest.raises(ValueError):
        settle(prices, sch, net, "pay-as-bid")
    short = PriceSurface(prices.lmp[:, :, :0], prices.slmp[:, :0], prices.scenario_ids, prices.bus_ids, "x")
    with pytest.raises(PricingError):
        settle(short, sch, net, "slmp")


def test_dual_stability_and_csv(tmp_path):
    net = oracle_case()
    model = build_escuc(net, make_scenario_set(net), "expected")
    inc, sch, prices = priced(model)
    report = settle(prices, sch, net, "slmp")
    report.dual_stability = dual_stability(model, inc, sch, net, "slmp", report)
    assert report.dual_stability["max_relative_change"] >= 0.0
    path = write_settlement_csv(report, tmp_path / "s.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "kind"
    assert rows[-1][1] == "dual_stability_max_relative_change"
    assert all(len(v.split(".")[1]) == 6 for v in rows[1][2:5])
    prices_path = write_price_csv(prices, tmp_path / "p.csv")
    assert prices_path.read_text().splitlines()[0] == "bus,t1,t2"


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(20.0, 170.0), min_size=2, max_size=2))
def test_settlement_balance_and_rent_sign(load):
    net = triangle(
        gens=[gen("G1", "1", 150, 10, p_min=20, cost_noload=100, ramp_10min=60),
              gen("G2", "2", 120, 20, p_min=10, cost_noload=50, ramp_10min=60),
              gen("G3", "3", 100, 35, cost_noload=150, ramp_10min=80)],
        load={"3": load}, rating=90.0, emergency=110.0)
    _, sch, prices = priced(build_escuc(net, make_scenario_set(net), "expected"))
    assert verify_slmp_identity(prices) <= 1e-6
    for rule in ("da-lmp", "slmp"):
        report = settle(prices, sch, net, rule)
        assert report.balance_residual() <= 1e-9
        cost = net.gen_array("cost_energy")
        for g in range(len(net.generators)):
            hours = sch.p[g] > 1e-9
            if np.all(report.prices[net.gen_bus[g], hours] >= cost[g]):
                assert report.generation_rent[g] >= -1e-6
