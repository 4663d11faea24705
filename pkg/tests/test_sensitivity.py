import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import gen, line, network, triangle
from sensitivity_oracle import compare_outage
from secmarket.sensitivity import (
    RadialOutageError,
    SensitivityFactors,
    compute_ptdf,
    line_flows,
    sparsify,
)


def balanced_injection(net, rng):
    inj = rng.normal(0.0, 50.0, len(net.buses))
    inj[net.bus_index[net.reference_bus]] -= inj.sum()
    return inj


def test_triangle_ptdf_values():
    # equal reactances: 2/3 of a transfer takes the direct path, 1/3 the detour
    ptdf = compute_ptdf(triangle())
    assert ptdf[:, 0] == pytest.approx([1 / 3, 2 / 3, 1 / 3])
    assert ptdf[:, 1] == pytest.approx([-1 / 3, 1 / 3, 2 / 3])
    assert np.all(ptdf[:, 2] == 0.0)


def test_ptdf_column_sums_conserve_flow():
    net = triangle()
    ptdf = compute_ptdf(net)
    # injection at bus 1 withdrawn at 3: flow out of bus 1 equals 1 MW
    out_of_1 = ptdf[0, 0] + ptdf[1, 0]
    assert out_of_1 == pytest.approx(1.0)


def test_reference_column_is_zero_for_any_reference():
    net = triangle()
    for ref in ("1", "2", "3"):
        ptdf = compute_ptdf(net, ref)
        assert np.all(ptdf[:, net.bus_index[ref]] == 0.0)


def test_flows_independent_of_reference_for_balanced_injection():
    net = triangle()
    inj = np.array([100.0, 50.0, -150.0])
    flows = {ref: line_flows(compute_ptdf(net, ref), inj) for ref in ("1", "2", "3")}
    assert flows["1"] == pytest.approx(flows["3"])
    assert flows["2"] == pytest.approx(flows["3"])


def test_triangle_lodf():
    f = SensitivityFactors(triangle())
    # outage of L12: its flow moves entirely onto the path 1-3-2
    assert f.lodf_value("L13", "L12") == pytest.approx(1.0)
    assert f.lodf_value("L23", "L12") == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        f.lodf_value("L12", "L12")


def test_radial_outage_rejected():
    net = network(["1", "2", "3"], [line("a", "1", "2", 10), line("b", "1", "2", 10), line("c", "2", "3", 10)],
                  [gen("g", "1", 10, 1)], {"3": [1.0]})
    f = SensitivityFactors(net)
    with pytest.raises(RadialOutageError):
        f.post_ptdf("c")
    assert np.isnan(f.lodf[:, net.line_index["c"]]).all()
    with pytest.raises(KeyError):
        f.post_ptdf("zz")


def test_post_ptdf_cached_and_readonly():
    f = SensitivityFactors(triangle())
    a = f.post_ptdf("L12")
    assert f.post_ptdf("L12") is a
    assert not a.flags.writeable
    assert np.all(a[0] == 0.0)


def test_sparsify_threshold():
    out = sparsify(np.array([1e-11, -5e-11, 1e-9, 0.5]))
    assert list(out) == [0.0, 0.0, 1e-9, 0.5]


def test_dump_csv(tmp_path):
    paths = SensitivityFactors(triangle()).dump_csv(tmp_path)
    header = paths[1].read_text().splitlines()[0]
    assert header == "line,L12,L13,L23"
    # the diagonal of the LODF file is left blank
    assert paths[1].read_text().splitlines()[1].split(",")[1] == ""


def test_all_non_radial_outages_on_large_case(case118, factors118):
    rng = np.random.default_rng(5)
    inj = balanced_injection(case118, rng)
    outages = factors118.non_radial
    assert len(outages) == 177
    worst = max(max(compare_outage(case118, factors118, lid, inj)) for lid in outages)
    assert worst <= 1e-8


@st.composite
def meshed_graphs(draw):
    n = draw(st.integers(3, 8))
    edges = [(draw(st.integers(0, i - 1)), i) for i in range(1, n)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=8))
    edges += [(a, b) for a, b in extra if a != b]
    reactances = draw(st.lists(st.floats(0.01, 1.0), min_size=len(edges), max_size=len(edges)))
    return n, edges, reactances


@settings(max_examples=60, deadline=None)
@given(meshed_graphs(), st.integers(0, 2**32 - 1))
def test_post_outage_flows_match_rebuilt_topology(graph, seed):
    n, edges, xs = graph
    net = network([str(i) for i in range(n)],
                  [line(f"l{k}", str(a), str(b), 10, x=x) for k, ((a, b), x) in enumerate(zip(edges, xs))],
                  [gen("g", "0", 10, 1)], {"0": [1.0]})
    f = SensitivityFactors(net)
    inj = balanced_injection(net, np.random.default_rng(seed))
    for lid in f.non_radial:
        lodf_err, formula_err = compare_outage(net, f, lid, inj)
        assert lodf_err <= 1e-8
        assert formula_err <= 1e-8


def test_two_bus_single_line_carries_everything():
    net = network(["a", "b"], [line("l", "a", "b", 10)], [gen("g", "a", 10, 1)], {"b": [1.0]}, reference="b")
    assert compute_ptdf(net)[0] == pytest.approx([1.0, 0.0])


def test_parallel_twin_lodf_is_one():
    net = network(["1", "2"], [line("A", "1", "2", 10), line("B", "1", "2", 10)],
                  [gen("g", "1", 10, 1)], {"2": [1.0]})
    f = SensitivityFactors(net)
    assert f.lodf_value("A", "B") == pytest.approx(1.0)
    assert f.lodf_value("B", "A") == pytest.approx(1.0)


def test_triangle_outage_of_l13():
    net = triangle()
    f = SensitivityFactors(net)
    assert f.lodf_value("L12", "L13") == pytest.approx(1.0)
    post = f.post_ptdf("L13")
    assert post[:, 0] == pytest.approx([1.0, 0.0, 1.0])
    assert np.all(post[:, net.bus_index["3"]] == 0.0)
