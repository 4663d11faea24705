import highspy
import numpy as np
import pytest

from builders import oracle_case
from mip_oracle import enumerate_commitments
from secmarket.markets import build_escuc, build_scuc_lodf, build_scuc_prxy, make_scenario_set
from secmarket.opt import (
    FixedIntegerInfeasible,
    LazyFamily,
    LinearModel,
    ModelError,
    SolveError,
    SolverConfig,
    fix_and_resolve,
    solution_pool,
    solve_lp,
    solve_mip,
    write_mps,
)


def binary_toy():
    m = LinearModel("toy")
    x = m.add_vars("x", [["a", "b"]], 0, 1, cost=[1.0, 2.0], integer=True)
    m.add_row_list("cover", [["c"]], ">=", [(x, [1.0, 1.0])], 1.0)
    return m


def small_lp():
    # min 3a + 2b  s.t.  a + b >= 4,  a - b <= 1,  0 <= a, b <= 3
    m = LinearModel("lp")
    v = m.add_vars("v", [["a", "b"]], 0, 3, cost=[3.0, 2.0])
    m.add_row_list("need", [["r"]], ">=", [(v, [1.0, 1.0])], 4.0)
    m.add_row_list("skew", [["r"]], "<=", [(v, [1.0, -1.0])], 1.0)
    return m


def test_binary_toy():
    m = binary_toy()
    sol = solve_mip(m)
    assert sol.objective_value == pytest.approx(1.0)
    assert sol.value(m, "x") == pytest.approx([1.0, 0.0])
    assert sol.gap <= 1e-9


def test_all_fixed_objective_is_constant():
    m = LinearModel()
    m.add_vars("x", [["a", "b", "c"]], [1, 2, 3], [1, 2, 3], cost=[1.0, -1.0, 2.0], integer=True)
    assert solve_mip(m).objective_value == pytest.approx(5.0)


def test_bound_conflict_and_duplicate_block():
    m = LinearModel()
    with pytest.raises(ModelError):
        m.add_vars("x", [["a"]], 2, 1)
    m.add_vars("x", [["a"]])
    with pytest.raises(ModelError):
        m.add_vars("x", [["a"]])


def test_infeasible_raises():
    m = LinearModel()
    x = m.add_vars("x", [["a"]], 0, 1, integer=True)
    m.add_row_list("big", [["r"]], ">=", [(x, [1.0])], 2.0)
    with pytest.raises(SolveError) as exc:
        solve_mip(m)
    assert exc.value.status == "infeasible"


def test_lp_duals_and_strong_duality():
    m = small_lp()
    lp = solve_lp(m)
    # optimum at a=1, b=3: the need row is binding with price 3, b sits on its bound
    assert lp.objective_value == pytest.approx(9.0)
    assert lp.x == pytest.approx([1.0, 3.0])
    assert lp.dual(m, "need")[0] == pytest.approx(3.0)
    assert lp.dual(m, "skew")[0] == pytest.approx(0.0)


def test_duals_are_objective_sensitivities():
    m = small_lp()
    base = solve_lp(m)
    bumped = small_lp()
    bumped._rhs[0] = bumped._rhs[0] + 0.01
    assert (solve_lp(bumped).objective_value - base.objective_value) / 0.01 == pytest.approx(
        base.dual(m, "need")[0])


def test_fix_and_resolve_without_integers_is_the_lp():
    m = small_lp()
    lp = solve_lp(m)
    again = fix_and_resolve(m, solve_mip(m))
    assert again.objective_value == pytest.approx(lp.objective_value)
    assert again.duals == pytest.approx(lp.duals)


def test_fix_and_resolve_keeps_incumbent():
    m = binary_toy()
    inc = solve_mip(m)
    lp = fix_and_resolve(m, inc)
    assert lp.objective_value == pytest.approx(inc.objective_value)
    assert not lp.improved
    assert lp.x == pytest.approx(inc.x)


def test_fix_and_resolve_rejects_fractional_and_infeasible_roundings():
    m = binary_toy()
    inc = solve_mip(m)
    frac = type(inc)(inc.status, inc.objective_value, np.array([0.5, 0.5]), 0.0, inc.bound)
    with pytest.raises(FixedIntegerInfeasible):
        fix_and_resolve(m, frac)
    zero = type(inc)(inc.status, 0.0, np.zeros(2), 0.0, inc.bound)
    with pytest.raises(FixedIntegerInfeasible):
        fix_and_resolve(m, zero)


def test_lazy_rows_only_added_when_violated():
    m = LinearModel()
    x = m.add_vars("x", [["a", "b"]], 0, 10, cost=[-1.0, -1.0])
    rhs = np.array([4.0, 20.0])
    coeffs = np.array([[1.0, 0.0], [1.0, 1.0]])
    fam = LazyFamily(
        "cap", rhs,
        activity=lambda v: coeffs @ v[x],
        rows=lambda ids: (np.repeat(np.arange(len(ids)), 2), np.tile(x, len(ids)), coeffs[ids].ravel()),
    )
    m.add_lazy("cap", [["first", "both"]], "<=", fam)
    sol = solve_lp(m)
    assert sol.objective_value == pytest.approx(-14.0)
    assert list(m.con("cap") >= 0) == [True, False]


@pytest.mark.parametrize("builder", ["prxy", "lodf", "escuc-base", "escuc-expected"])
def test_mip_matches_enumeration(builder):
    net = oracle_case()
    scenarios = make_scenario_set(net)
    model = {
        "prxy": lambda: build_scuc_prxy(net),
        "lodf": lambda: build_scuc_lodf(net),
        "escuc-base": lambda: build_escuc(net, scenarios, "base"),
        "escuc-expected": lambda: build_escuc(net, scenarios, "expected"),
    }[builder]()
    best, _ = enumerate_commitments(model)
    sol = solve_mip(model, rel_gap=0.0)
    assert sol.objective_value == pytest.approx(best, rel=1e-6)


def test_pool_count_one_equals_solve():
    m = binary_toy()
    pool = solution_pool(m, 0.5, 1)
    assert len(pool.solutions) == 1
    assert pool.solutions[0].objective_value == pytest.approx(solve_mip(m).objective_value)
    assert not pool.shortfall


def test_pool_with_two_patterns_in_window(caplog):
    # min x + y, x + y >= 1: two patterns cost 1, the third costs 2 (outside a 10% window)
    m = LinearModel()
    x = m.add_vars("x", [["a", "b"]], 0, 1, cost=1.0, integer=True)
    m.add_row_list("cover", [["c"]], ">=", [(x, [1.0, 1.0])], 1.0)
    pool = solution_pool(m, 0.1, 30)
    assert len(pool.solutions) == 2
    assert pool.shortfall
    assert "found 2 of 30" in caplog.text
    a, b = (s.x for s in pool.solutions)
    assert np.any(np.round(a) != np.round(b))
    assert m.n_rows == 1  # input model untouched


def test_pool_members_distinct_and_ordered():
    net = oracle_case()
    model = build_scuc_prxy(net)
    pool = solution_pool(model, 0.5, 6, cut_cols=model.var("u"))
    commitments = [tuple(np.round(s.x[model.var("u")]).ravel()) for s in pool.solutions]
    assert len(set(commitments)) == len(commitments)
    costs = [s.objective_value for s in pool.solutions]
    assert costs == sorted(costs)
    for c in costs:
        assert c - pool.bound <= 0.5 * c + 1e-9


def test_pool_rejects_member_gap_above_window():
    with pytest.raises(ValueError):
        solution_pool(binary_toy(), 0.01, 2, member_gap=0.05)


def test_mps_round_trip(tmp_path):
    model = build_scuc_lodf(oracle_case())
    ours = solve_mip(model).objective_value
    path = write_mps(model, tmp_path / "m.mps", materialize_lazy=True)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    assert h.readModel(str(path)) == highspy.HighsStatus.kOk
    h.run()
    assert h.getInfo().objective_function_value == pytest.approx(ours, rel=1e-9)
    text = path.read_text()
    assert "u[G1,t1]" in text and "'INTORG'" in text


def test_scipy_backend_agrees():
    net = oracle_case()
    scenarios = make_scenario_set(net)
    cfg = SolverConfig(backend="scipy")
    m1, m2 = build_escuc(net, scenarios, "expected"), build_escuc(net, scenarios, "expected")
    a = solve_mip(m1)
    b = solve_mip(m2, config=cfg)
    assert b.objective_value == pytest.approx(a.objective_value, rel=1e-7)
    la, lb = fix_and_resolve(m1, a), fix_and_resolve(m2, b, config=cfg)
    assert lb.objective_value == pytest.approx(la.objective_value, rel=1e-7)


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown solver backend"):
        solve_lp(small_lp(), SolverConfig(backend="nope"))
