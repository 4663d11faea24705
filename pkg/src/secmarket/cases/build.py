"""Deterministic generators for the bundled case files.

Run ``python -m secmarket.cases.build`` to regenerate every JSON file in this
directory.  The synthetic 118-bus case has the same element counts as the
IEEE 118-bus system (118 buses, 186 lines of which 9 radial, 54 units,
91 loads) but its own topology and parameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..network import network_from_dict
from ..sensitivity import SensitivityFactors

HERE = Path(__file__).resolve().parent

DAILY_SHAPE = np.array([
    0.67, 0.63, 0.60, 0.59, 0.59, 0.62, 0.70, 0.80, 0.88, 0.92, 0.95, 0.97,
    0.98, 0.98, 0.97, 0.96, 0.96, 0.98, 1.00, 0.99, 0.95, 0.88, 0.79, 0.72,
])


def _line(lid, a, b, x, rating, emergency=None):
    out = {"id": lid, "from": a, "to": b, "reactance_pu": round(float(x), 5), "rating_mw": round(float(rating), 1)}
    if emergency is not None:
        out["emergency_rating_mw"] = round(float(emergency), 1)
    return out


def _profile(peak: float, horizon: int = 24) -> list[float]:
    return [round(float(peak * s), 3) for s in DAILY_SHAPE[:horizon]]


# ---------------------------------------------------------------------------
# small cases


def toy2() -> dict:
    """Two buses joined by one line; cheap unit at the source, dear unit at the sink."""
    return {
        "meta": {"name": "toy2", "base_mva": 100, "reference_bus": "1", "horizon": 1},
        "buses": [{"id": "1"}, {"id": "2"}],
        "lines": [_line("L12", "1", "2", 0.1, 10, 12)],
        "generators": [
            {"id": "G1", "bus": "1", "p_min": 0, "p_max": 100, "cost_energy": 10},
            {"id": "G2", "bus": "2", "p_min": 0, "p_max": 100, "cost_energy": 30},
        ],
        "loads": [{"bus": "2", "mw": [50]}],
    }


def toy3() -> dict:
    """3-bus triangle, three units, two periods."""
    return {
        "meta": {"name": "toy3", "base_mva": 100, "reference_bus": "3", "horizon": 2},
        "buses": [{"id": "1"}, {"id": "2"}, {"id": "3"}],
        "lines": [
            _line("L12", "1", "2", 0.1, 60, 80),
            _line("L13", "1", "3", 0.1, 60, 80),
            _line("L23", "2", "3", 0.1, 60, 80),
        ],
        "generators": [
            {"id": "G1", "bus": "1", "p_min": 10, "p_max": 120, "cost_energy": 12, "cost_noload": 50,
             "cost_startup": 200, "ramp_10min": 40},
            {"id": "G2", "bus": "2", "p_min": 5, "p_max": 80, "cost_energy": 25, "cost_noload": 30,
             "cost_startup": 100, "ramp_10min": 40},
            {"id": "G3", "bus": "3", "p_min": 5, "p_max": 60, "cost_energy": 40, "cost_noload": 20,
             "cost_startup": 50, "ramp_10min": 60},
        ],
        "loads": [{"bus": "2", "mw": [40, 55]}, {"bus": "3", "mw": [50, 60]}],
    }


def study6() -> dict:
    """Desk-scale study case: six meshed buses plus one radial load bus, seven units, 24 hours.

    Cheap units sit on the west side (buses 1-2), most load on the east side
    (buses 4-7), and the west-east corridor is tight enough that line outages
    call for reserve held behind the constraint.
    """
    lines = [
        _line("L1", "1", "2", 0.06, 200, 230),
        _line("L2", "1", "3", 0.10, 160, 185),
        _line("L3", "2", "3", 0.08, 150, 175),
        _line("L4", "2", "4", 0.12, 130, 150),
        _line("L5", "3", "5", 0.10, 140, 160),
        _line("L6", "4", "5", 0.07, 100, 115),
        _line("L7", "4", "6", 0.09, 110, 125),
        _line("L8", "5", "6", 0.08, 110, 125),
        _line("L9", "6", "7", 0.05, 150, 165),
    ]
    units = [
        ("G1", "1", 60, 220, 14.0, 420, 1800, 12, 55, 6, 4),
        ("G2", "2", 40, 160, 18.0, 300, 1200, 12, 45, 4, 3),
        ("G3", "3", 30, 120, 24.0, 220, 800, 8, 40, 3, 2),
        ("G4", "4", 15, 90, 33.0, 160, 400, 4, 35, 2, 2),
        ("G5", "5", 15, 80, 38.0, 140, 300, 4, 40, 2, 1),
        ("G6", "6", 10, 60, 52.0, 90, 150, 2, 60, 1, 1),
        ("G7", "6", 5, 45, 65.0, 60, 80, 1, 45, 1, 1),
    ]
    gens = []
    for gid, bus, pmin, pmax, cp, cnl, csu, csd, r10, ut, dt in units:
        gens.append({
            "id": gid, "bus": bus, "p_min": pmin, "p_max": pmax, "cost_energy": cp,
            "cost_noload": cnl, "cost_startup": csu, "cost_shutdown": csd,
            "ramp_hourly": round(0.6 * pmax, 1), "ramp_10min": r10,
            "ramp_startup": max(pmin, round(0.5 * pmax, 1)), "ramp_shutdown": max(pmin, round(0.5 * pmax, 1)),
            "min_up": ut, "min_down": dt,
        })
    loads = {"2": 40, "3": 50, "4": 110, "5": 100, "6": 90, "7": 60}
    return {
        "meta": {"name": "study6", "base_mva": 100, "reference_bus": "1", "horizon": 24},
        "buses": [{"id": str(i)} for i in range(1, 8)],
        "lines": lines,
        "generators": gens,
        "loads": [{"bus": b, "mw": _profile(mw)} for b, mw in loads.items()],
    }


# ---------------------------------------------------------------------------
# synthetic 118-bus case


def synthetic118(seed: int = 118) -> dict:
    """118 buses, 186 lines (177 in a 2-edge-connected core plus 9 radial
    spurs), 54 units, 91 loaded buses, 24 hours."""
    rng = np.random.default_rng(seed)
    n_core, n_spur = 109, 9
    buses = [str(i) for i in range(1, n_core + n_spur + 1)]
    edges: list[tuple[int, int]] = [(i, (i + 1) % n_core) for i in range(n_core)]  # ring
    seen = {tuple(sorted(e)) for e in edges}
    while len(edges) < 177:
        a = int(rng.integers(n_core))
        hop = int(rng.choice([2, 3, 4, 5, 7, 11, 17, 29], p=[0.3, 0.2, 0.15, 0.1, 0.1, 0.07, 0.05, 0.03]))
        b = (a + hop) % n_core
        key = tuple(sorted((a, b)))
        if key not in seen:
            seen.add(key)
            edges.append((a, b))
    spur_parents = sorted(rng.choice(n_core, n_spur, replace=False).tolist())
    edges += [(p, n_core + j) for j, p in enumerate(spur_parents)]
    length = np.array([min(abs(a - b), n_core - abs(a - b)) if b < n_core else 1 for a, b in edges], dtype=float)
    reactance = np.round(0.02 + 0.03 * np.sqrt(length) * rng.uniform(0.6, 1.4, len(edges)), 5)

    # units: 10 large, 20 medium, 24 small; costs rise as size falls
    sizes = [("large", 10, (300, 420), (12, 20), 0.45), ("medium", 20, (120, 220), (20, 32), 0.35),
             ("small", 24, (30, 90), (32, 60), 0.2)]
    gen_buses = rng.choice(n_core, 54, replace=False)
    gens = []
    k = 0
    for label, count, (lo, hi), (clo, chi), min_frac in sizes:
        for _ in range(count):
            pmax = float(np.round(rng.uniform(lo, hi), 0))
            pmin = float(np.round(min_frac * pmax, 0))
            cp = float(np.round(rng.uniform(clo, chi), 2))
            ut = {"large": 8, "medium": 4, "small": 1}[label]
            gens.append({
                "id": f"G{k + 1}", "bus": buses[gen_buses[k]], "p_min": pmin, "p_max": pmax,
                "cost_energy": cp,
                "cost_noload": float(np.round(pmax * rng.uniform(1.5, 3.0), 0)),
                "cost_startup": float(np.round(pmax * {"large": 12, "medium": 6, "small": 2}[label], 0)),
                "cost_shutdown": float(np.round(pmax * 0.5, 0)),
                "ramp_hourly": float(np.round(0.5 * pmax, 1)),
                "ramp_10min": float(np.round(0.2 * pmax, 1)),
                "ramp_startup": max(pmin, float(np.round(0.5 * pmax, 1))),
                "ramp_shutdown": max(pmin, float(np.round(0.5 * pmax, 1))),
                "min_up": ut, "min_down": max(1, ut // 2),
            })
            k += 1

    # loads: every spur bus plus 82 core buses; peak total ~4200 MW
    core_loaded = sorted(rng.choice(n_core, 82, replace=False).tolist())
    loaded = core_loaded + list(range(n_core, n_core + n_spur))
    weights = rng.gamma(2.0, 1.0, len(loaded))
    peaks = 4200.0 * weights / weights.sum()
    loads = [{"bus": buses[b], "mw": _profile(pk)} for b, pk in zip(loaded, peaks)]

    doc = {
        "meta": {"name": "synthetic118", "base_mva": 100, "reference_bus": buses[gen_buses[0]], "horizon": 24},
        "buses": [{"id": b} for b in buses],
        "lines": [_line(f"L{i + 1}", buses[a], buses[b], reactance[i], 9999) for i, (a, b) in enumerate(edges)],
        "generators": gens,
        "loads": loads,
    }
    _rate_lines(doc)
    return doc


def _rate_lines(doc: dict, margin: float = 1.15, floor: float = 60.0) -> None:
    """Set ratings from peak-hour flows of a merit-order dispatch.

    The emergency rating covers the worst post-outage flow with ``margin``;
    the normal rating is 1/1.1 of that, but never below the base flow with
    the same margin.  A few heavily loaded corridors are then tightened to
    create congestion.
    """
    net = network_from_dict(doc)
    fac = SensitivityFactors(net)
    load = net.load
    t_peak = int(np.argmax(load.sum(axis=0)))
    demand = load[:, t_peak].sum()
    order = np.argsort(net.gen_array("cost_energy"))
    pmax = net.gen_array("p_max")
    disp = np.zeros_like(pmax)
    rest = demand
    for g in order:  # merit order up to 85% of capacity, then spread remainder
        take = min(rest, 0.85 * pmax[g])
        disp[g] = take
        rest -= take
    inj = np.bincount(net.gen_bus, weights=disp, minlength=len(net.buses)) - load[:, t_peak]
    flow = fac.ptdf @ inj
    worst = np.abs(flow).copy()
    for lid in fac.non_radial:
        ell = net.line_index[lid]
        post = np.abs(flow + np.nan_to_num(fac.lodf[:, ell]) * flow[ell])
        post[ell] = 0.0
        worst = np.maximum(worst, post)
    emergency = np.maximum(margin * worst, floor)
    normal = np.maximum(emergency / 1.1, margin * np.abs(flow))
    emergency = np.maximum(emergency, normal)
    busiest = np.argsort(-np.abs(flow))[:6]
    normal[busiest] = np.maximum(np.abs(flow[busiest]) * 0.97, floor)
    emergency[busiest] = np.maximum(emergency[busiest], normal[busiest] * 1.1)
    for i, line in enumerate(doc["lines"]):
        line["rating_mw"] = round(float(np.ceil(normal[i])), 1)
        line["emergency_rating_mw"] = round(float(np.ceil(emergency[i])), 1)


CASES = {"toy2": toy2, "toy3": toy3, "study6": study6, "synthetic118": synthetic118}


def write_all(out_dir: Path = HERE) -> list[Path]:
    paths = []
    for name, make in CASES.items():
        path = Path(out_dir) / f"{name}.json"
        path.write_text(json.dumps(make(), indent=1) + "\n")
        paths.append(path)
    return paths


if __name__ == "__main__":
    for p in write_all():
        print(p)
