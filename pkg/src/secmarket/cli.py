"""Command-line entry point: ``secmarket <command> [options]``.

Exit codes: 0 success, 1 a component failed (infeasible model, bad case
file, ...), 2 usage error.  The solver backend is chosen with the
``SECMARKET_SOLVER`` environment variable (``highs`` or ``scipy``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .cases import BUNDLED, case_path
from .contingency import realized_cost, write_realized_csv, write_violation_csv
from .experiments import (
    PerturbationConfig,
    build_pools_and_pair,
    run_perturbation_study,
    run_pricing_study,
    run_realized_cost_study,
    write_manifest,
    write_pair_reports,
    write_pool_csv,
    write_pricing_study,
    write_realized_study,
)
from .markets import (
    base_cost,
    build_escuc,
    build_scuc_lodf,
    build_scuc_prxy,
    commitment_cost,
    decode_schedule,
    expected_cost,
    make_scenario_set,
    scenario_cost,
    scenario_subset,
)
from .network import Network, load_case
from .omc import run_omc, write_omc_csv
from .opt import SolverConfig, fix_and_resolve, solve_mip, write_mps
from .pricing import (
    dual_stability,
    extract_prices,
    settle,
    verify_slmp_identity,
    write_contributions_csv,
    write_price_csv,
    write_settlement_csv,
)
from .sensitivity import SensitivityFactors

log = logging.getLogger("secmarket")

MODELS = ("prxy", "lodf", "escuc")
DEFAULTS = {
    "case": "study6",
    "model": "escuc",
    "objective": "expected",
    "horizon": None,
    "eta": 0.06,
    "gap": 0.0,
    "seed": 0,
    "scenarios": "subset",
    "lines": 20,
    "base_probability": 0.946,
    "out": "out",
    "threads": 1,
    "feasibility_tol": 1e-6,
    "integrality_tol": 1e-5,
    "time_limit": None,
    "sigma": [0.0, 0.2, 0.4],
    "cases": 2000,
    "pool": 10,
    "pool_gap": 0.01,
    "bins": 40,
}


class UsageError(Exception):
    pass


def _f(value: float) -> str:
    return f"{value:.6f}"


# ---------------------------------------------------------------------------
# argument handling


def _common(p: argparse.ArgumentParser, model: bool = True) -> None:
    p.add_argument("--case", help=f"case file path or bundled name ({', '.join(BUNDLED)})")
    if model:
        p.add_argument("--model", choices=MODELS, help="market model")
        p.add_argument("--objective", choices=("expected", "base"), help="extensive-form objective")
    p.add_argument("--config", help="JSON file with option values; command-line flags take precedence")
    p.add_argument("--horizon", type=int, help="number of periods to keep")
    p.add_argument("--eta", type=float, help="load-fraction reserve requirement of the proxy models")
    p.add_argument("--gap", type=float, help="relative MIP gap")
    p.add_argument("--seed", type=int, help="solver and sampling seed")
    p.add_argument("--scenarios", choices=("all", "subset"),
                   help="all generator and non-radial line outages, or all generators plus screened lines")
    p.add_argument("--lines", type=int, help="line outages kept by the subset policy")
    p.add_argument("--base-probability", type=float, dest="base_probability",
                   help="rescale contingency probabilities to this base-case probability")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads for contingency analysis")
    p.add_argument("--time-limit", type=float, dest="time_limit", help="solver time limit in seconds")
    p.add_argument("--dump-sensitivities", action="store_true", help="write PTDF/LODF matrices as CSV")
    p.add_argument("--export-mps", action="store_true", help="write the market model in MPS format")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secmarket", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("solve", "solve a market model and write schedule, costs and model statistics"),
        ("omc", "repair a proxy or LODF schedule out of market"),
        ("price", "extract nodal and securitized prices"),
        ("settle", "settle a market model at its pricing rule"),
        ("ca", "contingency analysis and realized cost of a schedule"),
        ("export-mps", "write a market model in MPS format"),
    ):
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "settle":
            p.add_argument("--stability", action="store_true", help="run the dual-stability diagnostic")
        if name == "export-mps":
            p.add_argument("--file", help="MPS output path (default <out>/<model>.mps)")
    study = sub.add_parser("study", help="run one of the studies end to end")
    study_sub = study.add_subparsers(dest="study", required=True)
    for name in ("pricing", "realized", "perturb"):
        p = study_sub.add_parser(name, help=f"{name} study")
        _common(p, model=False)
        if name == "perturb":
            p.add_argument("--sigma", type=float, nargs="+", help="relative standard deviations")
            p.add_argument("--cases", type=int, help="accepted perturbed cases per sigma")
            p.add_argument("--pool", type=int, help="solutions per pool")
            p.add_argument("--pool-gap", type=float, dest="pool_gap", help="pool gap window")
            p.add_argument("--bins", type=int, help="histogram bins")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the config file and explicit flags (in that order)."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["model"] not in MODELS:
        raise UsageError(f"invalid model {settings['model']!r}; choose from {MODELS}")
    if settings["objective"] not in ("expected", "base"):
        raise UsageError(f"invalid objective {settings['objective']!r}")
    if settings["scenarios"] not in ("all", "subset"):
        raise UsageError(f"invalid scenario policy {settings['scenarios']!r}")
    if isinstance(settings["sigma"], (int, float)):
        settings["sigma"] = [settings["sigma"]]
    return settings


def _load_network(settings: dict) -> Network:
    ref = str(settings["case"])
    path = Path(ref)
    net = load_case(path) if path.exists() else load_case(case_path(ref))
    if settings["horizon"]:
        net = net.with_horizon(int(settings["horizon"]))
    return net


def _scenarios(net: Network, factors: SensitivityFactors, settings: dict):
    if settings["scenarios"] == "subset":
        return scenario_subset(net, factors, int(settings["lines"]), settings["base_probability"])
    return make_scenario_set(net, base_probability=settings["base_probability"])


def _solver_config(settings: dict) -> SolverConfig:
    return SolverConfig(feasibility_tol=settings["feasibility_tol"], integrality_tol=settings["integrality_tol"],
                        time_limit=settings["time_limit"])


class Context:
    """Case, factors, scenarios and output directory shared by the commands."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.settings = resolve(args)
        self.net = _load_network(self.settings)
        self.factors = SensitivityFactors(self.net)
        self.scenarios = _scenarios(self.net, self.factors, self.settings)
        self.config = _solver_config(self.settings)
        self.out = Path(self.settings["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[Path] = []
        if getattr(args, "dump_sensitivities", False):
            self.outputs += self.factors.dump_csv(self.out)

    def build(self):
        s = self.settings
        if s["model"] == "prxy":
            return build_scuc_prxy(self.net, eta=s["eta"], factors=self.factors)
        if s["model"] == "lodf":
            return build_scuc_lodf(self.net, eta=s["eta"], factors=self.factors)
        return build_escuc(self.net, self.scenarios, s["objective"], factors=self.factors)

    @property
    def tag(self) -> str:
        s = self.settings
        return f"escuc_{s['objective']}" if s["model"] == "escuc" else f"scuc_{s['model']}"

    def solve(self):
        model = self.build()
        sol = solve_mip(model, self.settings["gap"], self.settings["seed"], self.config)
        if getattr(self.args, "export_mps", False):
            self.outputs.append(write_mps(model, self.out / f"{self.tag}.mps", materialize_lazy=True))
        return model, sol, decode_schedule(model, sol)

    def finish(self, command: str) -> None:
        write_manifest(self.out, command, self.net, self.settings, self.config, self.outputs)


# ---------------------------------------------------------------------------
# writers


def write_schedule_csv(sch, path: Path) -> Path:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["generator", "period", "u", "v", "w", "p", "r"])
        for g, gen in enumerate(sch.net.generators):
            for t in range(sch.horizon):
                out.writerow([gen.id, t + 1, int(sch.u[g, t]), _f(sch.v[g, t]), _f(sch.w[g, t]),
                              _f(sch.p[g, t]), _f(sch.r[g, t])])
    return path


def write_scenario_dispatch_csv(sch, path: Path) -> Path:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["scenario", "generator", *[f"t{t + 1}" for t in range(sch.horizon)]])
        for c, sid in enumerate(sch.scenario_ids):
            for g, gen in enumerate(sch.net.generators):
                out.writerow([sid, gen.id, *map(_f, sch.p_scenario[c, g])])
    return path


def write_costs_csv(rows: list[tuple[str, float]], path: Path) -> Path:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["item", "value"])
        for key, value in rows:
            out.writerow([key, _f(value)])
    return path


def write_stats_csv(model, path: Path) -> Path:
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["block", "kind", "count", "candidates", "nonzeros"])
        for row in model.stats():
            out.writerow([row["block"], row["kind"], row["count"], row["candidates"], row["nonzeros"]])
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_solve(ctx: Context) -> None:
    model, sol, sch = ctx.solve()
    costs = [("objective", sol.objective_value), ("mip_gap", sol.gap), ("base_cost", base_cost(sch)),
             ("commitment_cost", commitment_cost(sch))]
    if sch.p_scenario is not None:
        costs += [("expected_cost", expected_cost(sch, ctx.scenarios)),
                  ("scenario_cost", scenario_cost(sch, ctx.scenarios))]
        ctx.outputs.append(write_scenario_dispatch_csv(sch, ctx.out / f"scenario_dispatch_{ctx.tag}.csv"))
    ctx.outputs += [
        write_schedule_csv(sch, ctx.out / f"schedule_{ctx.tag}.csv"),
        write_costs_csv(costs, ctx.out / f"costs_{ctx.tag}.csv"),
        write_stats_csv(model, ctx.out / f"model_stats_{ctx.tag}.csv"),
    ]
    print(f"{ctx.tag}: objective {sol.objective_value:.6f}, base cost {base_cost(sch):.6f}")


def cmd_omc(ctx: Context) -> None:
    if ctx.settings["model"] == "escuc":
        raise UsageError("omc applies to the proxy and LODF models")
    _, _, sch = ctx.solve()
    res = run_omc(ctx.net, ctx.scenarios, sch, ctx.settings["gap"], ctx.settings["seed"], ctx.factors, ctx.config)
    ctx.outputs += [write_omc_csv(res, ctx.out / f"omc_{ctx.tag}.csv"),
                    write_schedule_csv(res.corrected, ctx.out / f"schedule_omc_{ctx.tag}.csv")]
    print(f"{ctx.tag}: da cost {res.da_cost:.6f}, omc cost {res.omc_cost:.6f}, final cost {res.final_cost:.6f}")


def _prices(ctx: Context):
    model, sol, sch = ctx.solve()
    lp = fix_and_resolve(model, sol, ctx.config)
    return model, sol, sch, extract_prices(lp, model)


def cmd_price(ctx: Context) -> None:
    _, _, _, prices = _prices(ctx)
    ctx.outputs.append(write_price_csv(prices, ctx.out / f"prices_{ctx.tag}.csv"))
    if ctx.settings["model"] == "escuc":
        ctx.outputs.append(write_contributions_csv(prices, ctx.net, ctx.out / f"security_{ctx.tag}.csv"))
        print(f"{ctx.tag}: securitized price identity residual {verify_slmp_identity(prices):.3e}")
    else:
        print(f"{ctx.tag}: prices written")


def cmd_settle(ctx: Context) -> None:
    model, sol, sch, prices = _prices(ctx)
    if ctx.settings["model"] == "escuc":
        rule, settled = "slmp", sch
    else:
        rule = "da-lmp"
        settled = run_omc(ctx.net, ctx.scenarios, sch, ctx.settings["gap"], ctx.settings["seed"], ctx.factors,
                          ctx.config).corrected
    report = settle(prices, settled, ctx.net, rule)
    if ctx.args.stability:
        report.dual_stability = dual_stability(model, sol, settled, ctx.net, rule, report, ctx.config)
    ctx.outputs += [write_settlement_csv(report, ctx.out / f"settlement_{ctx.tag}.csv"),
                    write_price_csv(prices, ctx.out / f"prices_{ctx.tag}.csv")]
    s = report.summary()
    print(f"{ctx.tag} ({rule}): load payment {s['load_payment']:.6f}, revenue {s['generator_revenue']:.6f}, "
          f"congestion rent {s['congestion_rent']:.6f}")


def cmd_ca(ctx: Context) -> None:
    _, _, sch = ctx.solve()
    report = realized_cost(ctx.net, sch, ctx.scenarios, ctx.factors, ctx.settings["threads"], ctx.config)
    ctx.outputs += [write_violation_csv(report, ctx.out / f"violations_{ctx.tag}.csv"),
                    write_realized_csv({ctx.tag: report}, ctx.out / f"realized_{ctx.tag}.csv")]
    print(f"{ctx.tag}: realized total {report.realized_total:.6f}, max violation {report.max_violation:.3e}")


def cmd_export_mps(ctx: Context) -> None:
    model = ctx.build()
    target = Path(ctx.args.file) if ctx.args.file else ctx.out / f"{ctx.tag}.mps"
    ctx.outputs.append(write_mps(model, target, materialize_lazy=True))
    print(f"wrote {target}")


def cmd_study(ctx: Context) -> None:
    s = ctx.settings
    study = ctx.args.study
    if study == "pricing":
        report = run_pricing_study(ctx.net, ctx.scenarios, s["eta"], s["gap"], s["seed"], ctx.factors, ctx.config)
        ctx.outputs += write_pricing_study(report, ctx.net, ctx.out)
        for o in report.outcomes.values():
            print(f"{o.name}: final cost {o.final_cost:.6f}")
    elif study == "realized":
        outcomes = run_realized_cost_study(ctx.net, ctx.scenarios, s["gap"], s["seed"], ctx.factors, ctx.config,
                                           s["threads"])
        ctx.outputs += write_realized_study(outcomes, ctx.out)
        for o in outcomes.values():
            print(f"{o.mode}: realized total {o.realized.realized_total:.6f}")
    else:
        nominal, pools = build_pools_and_pair(ctx.net, ctx.scenarios, int(s["pool"]), float(s["pool_gap"]),
                                              s["seed"], ctx.factors, s["threads"], ctx.config)
        reports = []
        for sigma in s["sigma"]:
            cfg = PerturbationConfig(sigma=float(sigma), n_cases=int(s["cases"]), seed=s["seed"])
            reports.append(run_perturbation_study(ctx.net, ctx.scenarios, cfg, pools, int(s["bins"])))
        ctx.outputs += write_pair_reports(reports, ctx.out)
        ctx.outputs.append(write_pool_csv(pools, ctx.scenarios, ctx.out))
        for r in reports:
            print(f"sigma {r.sigma:.2f}: {r.n_pairs} pairs, base objective lower expected cost in "
                  f"{r.pct_lower_expected_cost:.3f}% of pairs")


COMMANDS = {
    "solve": cmd_solve,
    "omc": cmd_omc,
    "price": cmd_price,
    "settle": cmd_settle,
    "ca": cmd_ca,
    "export-mps": cmd_export_mps,
    "study": cmd_study,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        COMMANDS[args.command](ctx)
        ctx.finish(args.command if args.command != "study" else f"study-{args.study}")
    except (UsageError, FileNotFoundError) as exc:
        parser.print_usage(sys.stderr)
        print(f"secmarket: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any component failure maps to exit status 1
        print(f"secmarket: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
