"""Day-ahead market auction models built as LinearModels.

Three levels of N-1 representation are available:

* ``build_scuc_prxy``: deterministic SCUC with proxy reserve requirements,
* ``build_scuc_lodf``: the same plus LODF-based post-outage line limits,
* ``build_escuc``: extensive-form two-stage SCUC with per-contingency
  recourse dispatch, minimizing expected cost or base-case cost.

Conventions: all units are offline with zero output before the first period;
infinite ramp rates are capped at ``p_max`` (non-binding); the demand of the
extensive form is a free variable pinned to the load, so the dual of that pin
is the securitized LMP.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .network import Network, classify_lines
from .opt import INF, LazyFamily, LinearModel
from .opt.solve import LpSolution, MipSolution
from .sensitivity import SensitivityFactors, sparsify

DEFAULT_ETA = 0.06
DEFAULT_GENERATOR_RATE = 6e-4
DEFAULT_LINE_RATE = 1.2e-4
LAZY_NNZ_THRESHOLD = 200_000

BASE = "base"
GENERATOR = "generator"
LINE = "line"


class ScenarioError(ValueError):
    pass


class ScheduleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    id: str
    kind: str
    element: str | None
    probability: float

    def gen_indicator(self, net: Network) -> np.ndarray:
        """N1_g per generator: 0 for the outaged unit, 1 elsewhere."""
        out = np.ones(len(net.generators))
        if self.kind == GENERATOR:
            out[net.gen_index[self.element]] = 0.0
        return out

    def line_indicator(self, net: Network) -> np.ndarray:
        out = np.ones(len(net.lines))
        if self.kind == LINE:
            out[net.line_index[self.element]] = 0.0
        return out


@dataclass(frozen=True)
class ScenarioSet:
    base: Scenario
    contingencies: tuple[Scenario, ...]

    def __post_init__(self) -> None:
        probs = self.probabilities
        if np.any(probs <= 0):
            raise ScenarioError("scenario probabilities must be strictly positive")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ScenarioError(f"scenario probabilities sum to {probs.sum()}, not 1")
        if self.base.kind != BASE:
            raise ScenarioError("first scenario must be the base case")
        ids = [s.id for s in self.all]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate scenario ids")

    @property
    def all(self) -> tuple[Scenario, ...]:
        return (self.base, *self.contingencies)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.all]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.all])

    @property
    def contingency_probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.contingencies])

    def with_contingency_probabilities(self, probs: np.ndarray) -> "ScenarioSet":
        """Replace contingency probabilities; the base case takes the remainder."""
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(self.contingencies),):
            raise ScenarioError("probability vector does not match the contingency list")
        base_p = 1.0 - probs.sum()
        return ScenarioSet(
            replace(self.base, probability=base_p),
            tuple(replace(s, probability=float(p)) for s, p in zip(self.contingencies, probs)),
        )

    def of_kind(self, kind: str) -> list[Scenario]:
        return [s for s in self.contingencies if s.kind == kind]


def base_only() -> ScenarioSet:
    return ScenarioSet(Scenario(BASE, BASE, None, 1.0), ())


def make_scenario_set(
    net: Network,
    failure_rates: dict[str, float] | None = None,
    base_probability: float | None = None,
    line_outages: Sequence[str] | None = None,
    generator_outages: Sequence[str] | None = None,
) -> ScenarioSet:
    """Base case plus one scenario per generator and per non-radial line.

    ``failure_rates`` maps element ids (generator or line) to outage
    probabilities; missing entries use the default profile.  When
    ``base_probability`` is given the contingency probabilities are rescaled
    proportionally so the base case gets exactly that probability.
    ``line_outages``/``generator_outages`` restrict the contingency list.
    """
    rates = failure_rates or {}
    radial = classify_lines(net)
    gens = [g.id for g in net.generators] if generator_outages is None else list(generator_outages)
    if line_outages is None:
        lines = [ln.id for ln in net.lines if not radial[ln.id]]
    else:
        lines = list(line_outages)
        bad = [lid for lid in lines if radial.get(lid, True)]
        if bad:
            raise ScenarioError(f"radial or unknown lines cannot be contingencies: {bad}")
    for gid in gens:
        if gid not in net.gen_index:
            raise ScenarioError(f"unknown generator {gid!r}")
    elements = [(GENERATOR, g, rates.get(g, DEFAULT_GENERATOR_RATE)) for g in gens]
    elements += [(LINE, ln, rates.get(ln, DEFAULT_LINE_RATE)) for ln in lines]
    probs = np.array([p for *_, p in elements], dtype=float)
    if np.any(probs <= 0):
        raise ScenarioError("failure rates must be positive")
    if base_probability is not None:
        if not 0 < base_probability <= 1:
            raise ScenarioError("base probability must lie in (0, 1]")
        if elements:
            probs = probs * (1.0 - base_probability) / probs.sum()
        elif base_probability != 1:
            raise ScenarioError("no contingencies to carry the non-base probability")
    if probs.sum() >= 1:
        raise ScenarioError(f"contingency probabilities sum to {probs.sum()} >= 1")
    contingencies = tuple(
        Scenario(f"{'G' if kind == GENERATOR else 'L'}:{eid}", kind, eid, float(p))
        for (kind, eid, _), p in zip(elements, probs)
    )
    base_p = 1.0 - float(probs.sum())
    return ScenarioSet(Scenario(BASE, BASE, None, base_p), contingencies)


def screen_line_outages(net: Network, factors: SensitivityFactors, count: int) -> list[str]:
    """Rank non-radial line outages by worst post-outage loading at peak load.

    The reference flow uses a capacity-proportional dispatch; loading is
    ``|f_k + LODF_kl f_l| / emergency rating_k``.
    """
    load = net.load
    t_peak = int(np.argmax(load.sum(axis=0)))
    pmax = net.gen_array("p_max")
    dispatch = pmax * load[:, t_peak].sum() / pmax.sum()
    inj = np.bincount(net.gen_bus, weights=dispatch, minlength=len(net.buses)) - load[:, t_peak]
    flows = factors.ptdf @ inj
    emerg = net.line_array("rating_emergency")
    scores = []
    for lid in factors.non_radial:
        ell = net.line_index[lid]
        col = np.nan_to_num(factors.lodf[:, ell])
        post = np.abs(flows + col * flows[ell]) / emerg
        post[ell] = 0.0
        scores.append((-post.max(), ell, lid))
    scores.sort()
    return [lid for *_, lid in scores[:count]]


def scenario_subset(net: Network, factors: SensitivityFactors | None = None, line_count: int = 20,
                    base_probability: float | None = 0.946,
                    failure_rates: dict[str, float] | None = None) -> ScenarioSet:
    """Every generator outage plus the ``line_count`` highest-impact line outages.

    With ``base_probability`` set, the contingency probabilities are rescaled
    so the base case keeps that probability.
    """
    factors = factors or SensitivityFactors(net)
    lines = screen_line_outages(net, factors, line_count)
    return make_scenario_set(net, failure_rates, base_probability, line_outages=lines)


# ---------------------------------------------------------------------------
# model building blocks


def _periods(net: Network) -> list[str]:
    return [f"t{t + 1}" for t in range(net.horizon)]


def _gen_params(net: Network) -> dict[str, np.ndarray]:
    pmax = net.gen_array("p_max")
    out = {
        "pmin": net.gen_array("p_min"),
        "pmax": pmax,
        "cp": net.gen_array("cost_energy"),
        "cnl": net.gen_array("cost_noload"),
        "csu": net.gen_array("cost_startup"),
        "csd": net.gen_array("cost_shutdown"),
        "ut": np.array([g.min_up for g in net.generators], dtype=int),
        "dt": np.array([g.min_down for g in net.generators], dtype=int),
    }
    for key, attr in (("rhr", "ramp_hourly"), ("r10", "ramp_10min"),
                      ("rsu", "ramp_startup"), ("rsd", "ramp_shutdown")):
        out[key] = np.minimum(net.gen_array(attr), pmax)
    return out


def _add_commitment_core(m: LinearModel, net: Network, energy_weight: float,
                         reserve_ub_rows: bool) -> dict[str, np.ndarray]:
    """Variables u, v, w, p, r with commitment logic, ramps and capacity.

    The reserve rows bounding r by headroom and 10-minute ramp are added too
    when ``reserve_ub_rows`` is set (the deterministic models)."""
    gp = _gen_params(net)
    gids = [g.id for g in net.generators]
    periods = _periods(net)
    n_g, n_t = len(gids), len(periods)
    ax = [gids, periods]
    col = lambda a: a[:, None]  # noqa: E731

    u = m.add_vars("u", ax, 0, 1, cost=np.broadcast_to(col(gp["cnl"]), (n_g, n_t)), integer=True)
    w_ub = np.ones((n_g, n_t))
    w_ub[:, 0] = 0.0  # no shutdown in the first period
    v = m.add_vars("v", ax, 0, 1, cost=np.broadcast_to(col(gp["csu"]), (n_g, n_t)))
    w = m.add_vars("w", ax, 0, w_ub, cost=np.broadcast_to(col(gp["csd"]), (n_g, n_t)))
    p = m.add_vars("p", ax, 0, np.broadcast_to(col(gp["pmax"]), (n_g, n_t)),
                   cost=energy_weight * np.broadcast_to(col(gp["cp"]), (n_g, n_t)))
    r = m.add_vars("r", ax, 0, INF)

    later = np.zeros((n_g, n_t), dtype=bool)
    later[:, 1:] = True
    u_prev = np.roll(u, 1, axis=1)
    p_prev = np.roll(p, 1, axis=1)
    # startup: v_t >= u_t - u_{t-1}; at t=1 v >= u
    m.add_rows_terms("startup_logic", ax, "<=",
                     [(u, 1.0), (u_prev, np.where(later, -1.0, 0.0)), (v, -1.0)], 0.0)
    # shutdown: w_t >= u_{t-1} - u_t for t >= 2
    m.add_rows_terms("shutdown_logic", ax, "<=", [(u_prev, 1.0), (u, -1.0), (w, -1.0)], 0.0,
                     mask=later)

    # windowed min up/down, t >= UT (resp. DT)
    for name, var, dur, rhs_u in (("min_up", v, gp["ut"], -1.0), ("min_down", w, gp["dt"], 1.0)):
        local, cols, vals, pos, rhs = [], [], [], [], []
        row = 0
        for g in range(n_g):
            for t in range(max(dur[g], 1) - 1, n_t):
                window = var[g, t - max(dur[g], 1) + 1: t + 1]
                local += [row] * (window.size + 1)
                cols += [*window, u[g, t]]
                vals += [1.0] * window.size + [rhs_u]
                pos.append(g * n_t + t)
                rhs.append(0.0 if rhs_u < 0 else 1.0)
                row += 1
        m.add_rows(name, ax, "<=", local, cols, vals, rhs, positions=np.array(pos, dtype=np.int64))

    rhr, rsu, rsd = col(gp["rhr"]), col(gp["rsu"]), col(gp["rsd"])
    # ramp up: p_t - p_{t-1} <= RHR u_{t-1} + RSU v_t  (p_0 = u_0 = 0)
    m.add_rows_terms("ramp_up", ax, "<=",
                     [(p, 1.0), (p_prev, np.where(later, -1.0, 0.0)),
                      (u_prev, np.where(later, -rhr, 0.0)), (v, -rsu)], 0.0)
    # ramp down: p_{t-1} - p_t <= RHR u_t + RSD w_t
    m.add_rows_terms("ramp_down", ax, "<=",
                     [(p_prev, np.where(later, 1.0, 0.0)), (p, -1.0), (u, -rhr), (w, -rsd)], 0.0)
    pmax, pmin, r10 = col(gp["pmax"]), col(gp["pmin"]), col(gp["r10"])
    # capacity: p + r <= P^max u
    m.add_rows_terms("capacity", ax, "<=", [(p, 1.0), (r, 1.0), (u, -pmax)], 0.0)
    if reserve_ub_rows:
        # reserve within 10-minute ramp and headroom
        m.add_rows_terms("min_output", ax, "<=", [(u, pmin), (p, -1.0)], 0.0)
        m.add_rows_terms("reserve_ramp", ax, "<=", [(r, 1.0), (u, -r10)], 0.0)
    return {"u": u, "v": v, "w": w, "p": p, "r": r, **gp}


def _ptdf_limit_family(ptdfs: list[np.ndarray], pinj: list[np.ndarray], limits: list[np.ndarray],
                       sign: float, mask: np.ndarray | None) -> LazyFamily:
    """Rows ``sign * sum_n PTDF[k,n] pinj[n,t] <= limit_k`` over (group, k, t).

    ``sign=-1`` expresses the lower limit; block sense is always ``<=``.
    """
    n_grp = len(ptdfs)
    n_k = ptdfs[0].shape[0]
    n_t = pinj[0].shape[1]
    ptdfs = [sparsify(p) for p in ptdfs]
    rhs = np.concatenate([np.repeat(lim, n_t) for lim in limits])

    def activity(x: np.ndarray) -> np.ndarray:
        return np.concatenate([sign * (pt @ x[pi]) for pt, pi in zip(ptdfs, pinj)]).ravel()

    def rows(ids: np.ndarray):
        grp, k, t = np.unravel_index(ids, (n_grp, n_k, n_t))
        local, cols, vals = [], [], []
        for i, (gi, ki, ti) in enumerate(zip(grp, k, t)):
            coeffs = ptdfs[gi][ki]
            nz = np.flatnonzero(coeffs)
            local.append(np.full(nz.size, i))
            cols.append(pinj[gi][nz, ti])
            vals.append(sign * coeffs[nz])
        return np.concatenate(local), np.concatenate(cols), np.concatenate(vals)

    return LazyFamily("", rhs, activity, rows, mask)


def _add_line_limits(m: LinearModel, name: str, group_ids: list[str], line_ids: list[str],
                     periods: list[str], ptdfs, pinj, limits, lazy: bool,
                     mask: np.ndarray | None = None) -> None:
    axes = [group_ids, line_ids, periods]
    for suffix, sign in (("max", 1.0), ("min", -1.0)):
        fam = _ptdf_limit_family(ptdfs, pinj, limits, sign, mask)
        fam.block = f"{name}_{suffix}"
        m.add_lazy(fam.block, axes, "<=", fam, materialize=not lazy)


def _use_lazy(lazy_lines: bool | None, n_rows: int, n_bus: int) -> bool:
    if lazy_lines is not None:
        return lazy_lines
    return n_rows * n_bus > LAZY_NNZ_THRESHOLD


def build_scuc_prxy(net: Network, scenarios: ScenarioSet | None = None, eta: float = DEFAULT_ETA,
                    factors: SensitivityFactors | None = None,
                    lazy_lines: bool | None = None) -> LinearModel:
    """Deterministic SCUC with proxy reserve requirements and base-case cost objective.

    ``scenarios`` is accepted for interface symmetry and ignored: the proxy
    model has no contingency states.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    factors = factors or SensitivityFactors(net)
    m = LinearModel("scuc_prxy")
    core = _add_commitment_core(m, net, energy_weight=1.0, reserve_ub_rows=True)
    _add_deterministic_network(m, net, core, factors, lazy_lines)
    p, r = core["p"], core["r"]
    gids, periods = [g.id for g in net.generators], _periods(net)
    n_g, n_t = p.shape
    # largest-unit proxy: sum_j r_jt >= P_gt + r_gt, i.e. sum_{j != g} r_jt - P_gt >= 0
    local, cols, vals = [], [], []
    for row in range(n_g * n_t):
        g, t = divmod(row, n_t)
        others = np.delete(r[:, t], g)
        local += [row] * (others.size + 1)
        cols += [*others, p[g, t]]
        vals += [1.0] * others.size + [-1.0]
    m.add_rows("proxy_largest_unit", [gids, periods], ">=", local, cols, vals, 0.0)
    # load-fraction proxy: sum_g r_gt >= eta * system load
    system_load = net.load.sum(axis=0)
    m.add_rows("proxy_load_fraction", [periods], ">=",
               np.tile(np.arange(n_t), n_g), r.T.ravel(), np.ones(n_g * n_t), eta * system_load)
    m.info.update(kind="prxy", net=net, factors=factors, eta=eta, scenarios=base_only(),
                  objective_mode="base")
    return m


def _add_deterministic_network(m, net, core, factors, lazy_lines) -> None:
    """Variables pinj with node balance, system balance and base-topology line limits."""
    p = core["p"]
    bus_ids = [b.id for b in net.buses]
    periods = _periods(net)
    n_b, n_t = len(bus_ids), len(periods)
    pinj = m.add_vars("pinj", [bus_ids, periods], -INF, INF)
    # node balance: sum_{g at n} P_gt - pinj_nt = Load_nt   [lambda_n0t]
    local = [net.gen_bus[:, None] * n_t + np.arange(n_t)[None, :], np.arange(n_b * n_t)]
    cols = [p, pinj]
    vals = [np.ones(p.size), -np.ones(n_b * n_t)]
    m.add_rows("node_balance", [[BASE], bus_ids, periods], "=",
               np.concatenate([x.ravel() for x in local]), np.concatenate([c.ravel() for c in cols]),
               np.concatenate(vals), net.load.ravel())
    # system balance
    m.add_rows("system_balance", [[BASE], periods], "=",
               np.tile(np.arange(n_t), n_b), pinj.ravel(), np.ones(n_b * n_t), 0.0)
    # base-topology line limits
    lazy = _use_lazy(lazy_lines, len(net.lines) * n_t * 2, n_b)
    _add_line_limits(m, "line_normal", [BASE], [ln.id for ln in net.lines], periods,
                     [factors.ptdf], [pinj], [net.line_array("rating_normal")], lazy)
    m.info["lazy_lines"] = lazy
    core["pinj"] = pinj


def build_scuc_lodf(net: Network, eta: float = DEFAULT_ETA, factors: SensitivityFactors | None = None,
                    lazy_lines: bool | None = None) -> LinearModel:
    """Proxy SCUC plus LODF post-outage flow limits for every
    monitored line k and non-radial outage l != k at emergency rating."""
    factors = factors or SensitivityFactors(net)
    m = build_scuc_prxy(net, eta=eta, factors=factors, lazy_lines=lazy_lines)
    m.name = "scuc_lodf"
    pinj = m.var("pinj")
    line_ids = [ln.id for ln in net.lines]
    periods = _periods(net)
    n_k, n_t = len(line_ids), len(periods)
    ptdf = sparsify(factors.ptdf)
    fl = m.add_vars("fl", [line_ids, periods], -INF, INF)
    # FL_lt = sum_n PTDF_nl pinj_nt
    local, cols, vals = [], [], []
    for row in range(n_k * n_t):
        k, t = divmod(row, n_t)
        nz = np.flatnonzero(ptdf[k])
        local += [row] * (nz.size + 1)
        cols += [fl[k, t], *pinj[nz, t]]
        vals += [1.0, *(-ptdf[k, nz])]
    m.add_rows("outage_base_flow", [line_ids, periods], "=", local, cols, vals, 0.0)

    outages = factors.non_radial
    out_idx = np.array([net.line_index[l] for l in outages], dtype=int)
    emerg = net.line_array("rating_emergency")
    if outages:
        lodf = factors.lodf[:, out_idx]  # (K, L)
        mask = np.ones((n_k, len(outages), n_t), dtype=bool)
        mask[out_idx, np.arange(len(outages)), :] = False  # k != l
        # post-outage limit with FL_k substituted for the PTDF sum on the monitored line
        for suffix, sign in (("max", 1.0), ("min", -1.0)):
            fam = _lodf_family(fl, lodf, out_idx, emerg, sign, mask)
            fam.block = f"lodf_{suffix}"
            lazy = _use_lazy(lazy_lines, mask.sum(), 1)
            m.add_lazy(fam.block, [line_ids, outages, periods], "<=", fam, materialize=not lazy)
    m.info.update(kind="lodf", outages=outages)
    return m


def _lodf_family(fl, lodf, out_idx, emerg, sign, mask) -> LazyFamily:
    n_k, n_l = lodf.shape
    n_t = fl.shape[1]
    lodf = np.nan_to_num(lodf)
    rhs = np.repeat(emerg, n_l * n_t)

    def activity(x):
        f = x[fl]  # (K, T)
        post = f[:, None, :] + lodf[:, :, None] * f[out_idx][None, :, :]
        return (sign * post).ravel()

    def rows(ids):
        k, l, t = np.unravel_index(ids, (n_k, n_l, n_t))
        n = ids.size
        local = np.repeat(np.arange(n), 2)
        cols = np.column_stack([fl[k, t], fl[out_idx[l], t]]).ravel()
        vals = np.column_stack([np.full(n, sign), sign * lodf[k, l]]).ravel()
        return local, cols, vals

    return LazyFamily("", rhs, activity, rows, mask)


def build_escuc(net: Network, scenarios: ScenarioSet, objective_mode: str = "expected",
                factors: SensitivityFactors | None = None, lazy_lines: bool | None = None) -> LinearModel:
    """Extensive-form stochastic SCUC with one dispatch per contingency state.

    ``objective_mode='expected'`` minimizes probability-weighted base and
    scenario energy cost plus unweighted commitment costs.  ``'base'``
    minimizes the base-case cost over the same feasible set.
    """
    if objective_mode not in ("expected", "base"):
        raise ValueError(f"objective_mode must be 'expected' or 'base', got {objective_mode!r}")
    factors = factors or SensitivityFactors(net)
    for s in scenarios.of_kind(LINE):
        if factors.radial[s.element]:
            raise ScenarioError(f"scenario {s.id}: radial line outage")
    expected = objective_mode == "expected"
    m = LinearModel(f"escuc_{objective_mode}")
    pi_base = scenarios.base.probability
    core = _add_commitment_core(m, net, energy_weight=pi_base if expected else 1.0,
                                reserve_ub_rows=False)
    u, p, r = core["u"], core["p"], core["r"]
    gp = core
    gids = [g.id for g in net.generators]
    bus_ids = [b.id for b in net.buses]
    line_ids = [ln.id for ln in net.lines]
    periods = _periods(net)
    cont = list(scenarios.contingencies)
    scen_ids = scenarios.ids
    cont_ids = [s.id for s in cont]
    n_g, n_t = p.shape
    n_b, n_c = len(bus_ids), len(cont)
    col = lambda a: a[:, None]  # noqa: E731

    # N1_g for each contingency, shaped (C, G, 1)
    n1g = np.array([s.gen_indicator(net) for s in cont]).reshape(n_c, n_g, 1) if cont else np.ones((0, n_g, 1))
    ps_ub = np.broadcast_to(col(gp["pmax"])[None], (n_c, n_g, n_t)) * n1g
    ps_cost = np.zeros((n_c, n_g, n_t))
    if expected:
        ps_cost = np.array([s.probability for s in cont]).reshape(n_c, 1, 1) * col(gp["cp"])[None] \
            * np.ones((n_c, n_g, n_t))
    ps = m.add_vars("ps", [cont_ids, gids, periods], 0, ps_ub, cost=ps_cost)
    d = m.add_vars("d", [bus_ids, periods], -INF, INF)
    pinj = m.add_vars("pinj", [scen_ids, bus_ids, periods], -INF, INF)

    # (26a-c): sum_{g at n} P_gct - d_nt - pinj_nct = 0   [lambda_nct]
    disp = np.concatenate([p[None], ps], axis=0)  # (S, G, T)
    n_s = n_c + 1
    s_idx, g_idx, t_idx = np.meshgrid(np.arange(n_s), np.arange(n_g), np.arange(n_t), indexing="ij")
    gen_rows = (s_idx * n_b + net.gen_bus[g_idx]) * n_t + t_idx
    all_rows = np.arange(n_s * n_b * n_t)
    d_cols = np.broadcast_to(d[None], (n_s, n_b, n_t))
    m.add_rows("node_balance", [scen_ids, bus_ids, periods], "=",
               np.concatenate([gen_rows.ravel(), all_rows, all_rows]),
               np.concatenate([disp.ravel(), d_cols.ravel(), pinj.ravel()]),
               np.concatenate([np.ones(disp.size), -np.ones(all_rows.size), -np.ones(all_rows.size)]),
               0.0)
    # demand fix: d_nt = Load_nt   [securitized LMP]
    m.add_rows("demand_fix", [bus_ids, periods], "=", np.arange(n_b * n_t), d.ravel(),
               np.ones(n_b * n_t), net.load.ravel())
    # per-state system balance
    sys_rows = np.broadcast_to((np.arange(n_s)[:, None, None] * n_t + np.arange(n_t)[None, None, :]),
                               (n_s, n_b, n_t))
    m.add_rows("system_balance", [scen_ids, periods], "=", sys_rows.ravel(), pinj.ravel(),
               np.ones(pinj.size), 0.0)

    # base and generator-outage states at normal rating, base-topology PTDF
    normal_groups = [0] + [i + 1 for i, s in enumerate(cont) if s.kind != LINE]
    line_groups = [i + 1 for i, s in enumerate(cont) if s.kind == LINE]
    n_rows = (len(normal_groups) + len(line_groups)) * len(line_ids) * n_t * 2
    lazy = _use_lazy(lazy_lines, n_rows, n_b)
    _add_line_limits(m, "line_normal", [scen_ids[i] for i in normal_groups], line_ids, periods,
                     [factors.ptdf] * len(normal_groups), [pinj[i] for i in normal_groups],
                     [net.line_array("rating_normal")] * len(normal_groups), lazy)
    # line-outage states at emergency rating with post-outage PTDF, k != l
    if line_groups:
        line_scen = [cont[i - 1] for i in line_groups]
        mask = np.ones((len(line_groups), len(line_ids), n_t), dtype=bool)
        for j, s in enumerate(line_scen):
            mask[j, net.line_index[s.element], :] = False
        _add_line_limits(m, "line_emergency", [s.id for s in line_scen], line_ids, periods,
                         [factors.post_ptdf(s.element) for s in line_scen],
                         [pinj[i] for i in line_groups],
                         [net.line_array("rating_emergency")] * len(line_groups), lazy, mask)
    m.info["lazy_lines"] = lazy

    # P^min u N1_g <= P_gct <= P^max u N1_g for every state (base included)
    n1 = np.concatenate([np.ones((1, n_g, 1)), n1g], axis=0)
    u_b = np.broadcast_to(u[None], (n_s, n_g, n_t))
    ax_sgt = [scen_ids, gids, periods]
    live = np.broadcast_to(n1 > 0, (n_s, n_g, n_t))
    m.add_rows_terms("gen_limit_min", ax_sgt, "<=",
                     [(u_b, col(gp["pmin"])[None] * n1), (disp, -1.0)], 0.0, mask=live)
    m.add_rows_terms("gen_limit_max", ax_sgt, "<=",
                     [(disp, 1.0), (u_b, -col(gp["pmax"])[None] * n1)], 0.0, mask=live)

    # redispatch caps: |P_gct - P_g0t| <= R10 u_gt and <= r_gt for g not outaged in c
    if n_c:
        ax_cgt = [cont_ids, gids, periods]
        p_b = np.broadcast_to(p[None], (n_c, n_g, n_t))
        u_c = np.broadcast_to(u[None], (n_c, n_g, n_t))
        r_c = np.broadcast_to(r[None], (n_c, n_g, n_t))
        alive = np.broadcast_to(n1g > 0, (n_c, n_g, n_t))
        r10 = col(gp["r10"])[None]
        m.add_rows_terms("redispatch_up_ramp", ax_cgt, "<=", [(ps, 1.0), (p_b, -1.0), (u_c, -r10)], 0.0, mask=alive)
        m.add_rows_terms("redispatch_down_ramp", ax_cgt, "<=", [(p_b, 1.0), (ps, -1.0), (u_c, -r10)], 0.0, mask=alive)
        m.add_rows_terms("redispatch_up_reserve", ax_cgt, "<=", [(ps, 1.0), (p_b, -1.0), (r_c, -1.0)], 0.0, mask=alive)
        m.add_rows_terms("redispatch_down_reserve", ax_cgt, "<=", [(p_b, 1.0), (ps, -1.0), (r_c, -1.0)], 0.0, mask=alive)

    m.info.update(kind="escuc", net=net, factors=factors, scenarios=scenarios,
                  objective_mode=objective_mode)
    return m


# ---------------------------------------------------------------------------
# schedules


@dataclass
class Schedule:
    """Decoded market solution.  Arrays are indexed [generator, period]."""

    net: Network
    model_kind: str
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    p: np.ndarray
    r: np.ndarray
    scenario_ids: list[str] = field(default_factory=list)  # contingencies, order of p_scenario
    p_scenario: np.ndarray | None = None  # (C, G, T)
    injection: np.ndarray | None = None  # (S, N, T); S = base + contingencies in the model
    injection_ids: list[str] = field(default_factory=list)
    demand: np.ndarray | None = None  # (N, T), extensive form only
    extra: dict[str, np.ndarray] = field(default_factory=dict)  # other variable blocks

    @property
    def horizon(self) -> int:
        return self.u.shape[1]

    def scenario_dispatch(self, scenario_id: str) -> np.ndarray:
        if scenario_id == BASE:
            return self.p
        return self.p_scenario[self.scenario_ids.index(scenario_id)]

    def base_flows(self, factors: SensitivityFactors) -> np.ndarray:
        inj = np.zeros((len(self.net.buses), self.horizon))
        np.add.at(inj, self.net.gen_bus, self.p)
        return factors.ptdf @ (inj - self.net.load)


_TYPED_BLOCKS = {"u", "v", "w", "p", "r", "ps", "pinj", "d"}


def decode_schedule(model: LinearModel, solution: MipSolution | LpSolution, tol: float = 1e-6) -> Schedule:
    """Map a primal vector back onto generator/scenario/bus/period slots."""
    net: Network = model.info["net"]
    x = solution.x
    get = lambda name: x[model.var(name)] if name in model.blocks else None  # noqa: E731
    required = ("u", "v", "w", "p", "r", "pinj")
    missing = [b for b in required if b not in model.blocks]
    if missing:
        raise ScheduleError(f"model lacks variable blocks {missing}")
    u = get("u")
    g_axis = model.blocks["u"].axes[0]
    if list(g_axis) != [g.id for g in net.generators] or u.shape[1] != net.horizon:
        raise ScheduleError("model labels do not match the network")
    u_int = np.round(u)
    if np.max(np.abs(u - u_int), initial=0.0) > 1e-5:
        raise ScheduleError("commitment is not integral")
    sch = Schedule(
        net=net,
        model_kind=str(model.info.get("kind")),
        u=u_int,
        v=get("v"),
        w=get("w"),
        p=get("p"),
        r=get("r"),
        injection=get("pinj") if get("pinj").ndim == 3 else get("pinj")[None],
        injection_ids=list(model.blocks["pinj"].axes[0]) if get("pinj").ndim == 3 else [BASE],
        demand=get("d"),
    )
    if "ps" in model.blocks:
        sch.scenario_ids = list(model.blocks["ps"].axes[0])
        sch.p_scenario = get("ps")
    for name, block in model.blocks.items():
        if block.kind == "var" and name not in _TYPED_BLOCKS:
            sch.extra[name] = x[block.index]
    check_schedule(sch, tol)
    return sch


def check_schedule(sch: Schedule, tol: float = 1e-6) -> None:
    gp = _gen_params(sch.net)
    u = sch.u
    u_prev = np.concatenate([np.zeros((u.shape[0], 1)), u[:, :-1]], axis=1)
    if np.any(sch.v < u - u_prev - tol) or np.any(sch.w < u_prev - u - tol):
        raise ScheduleError("startup/shutdown variables inconsistent with commitment")
    lo = gp["pmin"][:, None] * u
    hi = gp["pmax"][:, None] * u
    if np.any(sch.p < lo - tol) or np.any(sch.p > hi + tol):
        raise ScheduleError("base dispatch outside [p_min u, p_max u]")
    if np.any(sch.r < -tol):
        raise ScheduleError("negative reserve")


def encode_schedule(model: LinearModel, sch: Schedule) -> np.ndarray:
    """Inverse of decode_schedule: rebuild the primal vector."""
    x = np.zeros(model.n_vars)
    fields = {"u": sch.u, "v": sch.v, "w": sch.w, "p": sch.p, "r": sch.r, "ps": sch.p_scenario,
              "d": sch.demand}
    pinj = sch.injection if model.var("pinj").ndim == 3 else sch.injection[0]
    fields["pinj"] = pinj
    fields.update(sch.extra)
    for name, block in model.blocks.items():
        if block.kind != "var":
            continue
        if fields.get(name) is None:
            raise ScheduleError(f"schedule has no values for block {name}")
        x[block.index] = fields[name]
    return x


# ---------------------------------------------------------------------------
# cost evaluation on fixed schedules


def commitment_cost(sch: Schedule) -> float:
    gp = _gen_params(sch.net)
    return float((gp["cnl"][:, None] * sch.u + gp["csu"][:, None] * sch.v + gp["csd"][:, None] * sch.w).sum())


def base_energy_cost(sch: Schedule) -> float:
    return float((sch.net.gen_array("cost_energy")[:, None] * sch.p).sum())


def base_cost(sch: Schedule) -> float:
    """Base-case energy plus commitment costs."""
    return base_energy_cost(sch) + commitment_cost(sch)


def scenario_energy_costs(sch: Schedule) -> np.ndarray:
    """Unweighted energy cost of each contingency dispatch, in ``scenario_ids`` order."""
    if sch.p_scenario is None:
        raise ScheduleError("schedule carries no scenario dispatch")
    cp = sch.net.gen_array("cost_energy")
    return np.einsum("g,cgt->c", cp, sch.p_scenario)


def _aligned_probabilities(sch: Schedule, scenarios: ScenarioSet) -> np.ndarray:
    probs = {s.id: s.probability for s in scenarios.contingencies}
    if set(probs) != set(sch.scenario_ids):
        raise ScenarioError("scenario set does not match the schedule's contingencies")
    return np.array([probs[sid] for sid in sch.scenario_ids])


def scenario_cost(sch: Schedule, scenarios: ScenarioSet) -> float:
    """Probability-weighted energy cost of the post-contingency dispatches."""
    if not scenarios.contingencies:
        return 0.0
    return float(_aligned_probabilities(sch, scenarios) @ scenario_energy_costs(sch))


def expected_cost(sch: Schedule, scenarios: ScenarioSet) -> float:
    """Expected-cost objective evaluated on a fixed schedule."""
    return (scenarios.base.probability * base_energy_cost(sch) + commitment_cost(sch)
            + scenario_cost(sch, scenarios))
