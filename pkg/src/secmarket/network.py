"""Static network case: buses, lines, generators and nodal load profiles.

Cases are stored as a single JSON document with the sections ``meta``,
``buses``, ``lines``, ``generators`` and ``loads``.  All power quantities are
in MW; reactances are per-unit on ``meta.base_mva``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

EMERGENCY_RATING_FACTOR = 1.1


class CaseParseError(ValueError):
    """The case file is not a well-formed case document."""


class NetworkValidationError(ValueError):
    """The case violates a structural invariant."""


@dataclass(frozen=True)
class Bus:
    id: str
    name: str = ""


@dataclass(frozen=True)
class TransmissionLine:
    id: str
    from_bus: str
    to_bus: str
    reactance: float
    rating_normal: float
    rating_emergency: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_min: float
    p_max: float
    cost_energy: float
    cost_noload: float = 0.0
    cost_startup: float = 0.0
    cost_shutdown: float = 0.0
    ramp_hourly: float = math.inf
    ramp_10min: float = math.inf
    ramp_startup: float = math.inf
    ramp_shutdown: float = math.inf
    min_up: int = 1
    min_down: int = 1


@dataclass(frozen=True)
class LoadProfile:
    """Hourly MW load per bus; buses absent from ``by_bus`` carry no load."""

    horizon: int
    by_bus: dict[str, tuple[float, ...]]

    def at(self, bus: str, t: int) -> float:
        values = self.by_bus.get(bus)
        return 0.0 if values is None else values[t]


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[TransmissionLine, ...]
    generators: tuple[Generator, ...]
    load_profile: LoadProfile
    reference_bus: str
    base_mva: float = 100.0
    name: str = "case"
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        validate(self)

    # index helpers -------------------------------------------------------

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def line_index(self) -> dict[str, int]:
        return {ln.id: i for i, ln in enumerate(self.lines)}

    @cached_property
    def gen_index(self) -> dict[str, int]:
        return {g.id: i for i, g in enumerate(self.generators)}

    @property
    def horizon(self) -> int:
        return self.load_profile.horizon

    @cached_property
    def load(self) -> np.ndarray:
        """Load matrix of shape (buses, periods)."""
        out = np.zeros((len(self.buses), self.horizon))
        for bus, values in self.load_profile.by_bus.items():
            out[self.bus_index[bus]] = values
        out.setflags(write=False)
        return out

    @cached_property
    def gen_bus(self) -> np.ndarray:
        """Bus position of every generator."""
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Line-bus incidence matrix (+1 at from bus, -1 at to bus)."""
        a = np.zeros((len(self.lines), len(self.buses)))
        for k, ln in enumerate(self.lines):
            a[k, self.bus_index[ln.from_bus]] = 1.0
            a[k, self.bus_index[ln.to_bus]] = -1.0
        a.setflags(write=False)
        return a

    def gen_array(self, attr: str) -> np.ndarray:
        return np.array([getattr(g, attr) for g in self.generators], dtype=float)

    def line_array(self, attr: str) -> np.ndarray:
        return np.array([getattr(ln, attr) for ln in self.lines], dtype=float)

    def with_horizon(self, horizon: int) -> "Network":
        """Copy of the network keeping only the first ``horizon`` periods."""
        if not 1 <= horizon <= self.horizon:
            raise ValueError(f"horizon must be in [1, {self.horizon}], got {horizon}")
        profile = LoadProfile(
            horizon, {b: v[:horizon] for b, v in self.load_profile.by_bus.items()}
        )
        return replace(self, load_profile=profile)

    def without_lines(self, line_ids: Iterable[str]) -> "Network":
        drop = set(line_ids)
        return replace(self, lines=tuple(ln for ln in self.lines if ln.id not in drop))


def _connected(n_bus: int, edges: list[tuple[int, int]]) -> bool:
    if n_bus <= 1:
        return True
    if not edges:
        return False
    rows, cols = zip(*edges)
    graph = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n_bus, n_bus))
    n_comp, _ = connected_components(graph, directed=False)
    return n_comp == 1


def validate(net: Network) -> None:
    if not net.buses:
        raise NetworkValidationError("network has no buses")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkValidationError("duplicate bus ids")
    bus_set = set(ids)
    if net.reference_bus not in bus_set:
        raise NetworkValidationError(f"reference bus {net.reference_bus!r} not in network")
    if len({ln.id for ln in net.lines}) != len(net.lines):
        raise NetworkValidationError("duplicate line ids")
    if len({g.id for g in net.generators}) != len(net.generators):
        raise NetworkValidationError("duplicate generator ids")
    for ln in net.lines:
        if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
            raise NetworkValidationError(f"line {ln.id}: unknown terminal bus")
        if ln.from_bus == ln.to_bus:
            raise NetworkValidationError(f"line {ln.id}: from_bus equals to_bus")
        if not ln.reactance > 0:
            raise NetworkValidationError(f"line {ln.id}: reactance must be > 0")
        if not ln.rating_normal > 0:
            raise NetworkValidationError(f"line {ln.id}: rating must be > 0")
        if ln.rating_emergency < ln.rating_normal:
            raise NetworkValidationError(f"line {ln.id}: emergency rating below normal rating")
    for g in net.generators:
        if g.bus not in bus_set:
            raise NetworkValidationError(f"generator {g.id}: unknown bus {g.bus!r}")
        if not 0 <= g.p_min <= g.p_max:
            raise NetworkValidationError(f"generator {g.id}: need 0 <= p_min <= p_max")
        ramps = (g.ramp_hourly, g.ramp_10min, g.ramp_startup, g.ramp_shutdown)
        if min(ramps) < 0:
            raise NetworkValidationError(f"generator {g.id}: negative ramp rate")
        if g.min_up < 1 or g.min_down < 1:
            raise NetworkValidationError(f"generator {g.id}: min up/down must be >= 1")
        if min(g.cost_energy, g.cost_noload, g.cost_startup, g.cost_shutdown) < 0:
            raise NetworkValidationError(f"generator {g.id}: negative cost")
    profile = net.load_profile
    if profile.horizon < 1:
        raise NetworkValidationError("load profile horizon must be >= 1")
    for bus, values in profile.by_bus.items():
        if bus not in bus_set:
            raise NetworkValidationError(f"load at unknown bus {bus!r}")
        if len(values) != profile.horizon:
            raise NetworkValidationError(f"load at bus {bus}: expected {profile.horizon} values")
        if min(values) < 0:
            raise NetworkValidationError(f"load at bus {bus}: negative value")
    index = {b: i for i, b in enumerate(ids)}
    edges = [(index[ln.from_bus], index[ln.to_bus]) for ln in net.lines]
    if not _connected(len(ids), edges):
        raise NetworkValidationError("network graph is not connected")


def classify_lines(net: Network) -> dict[str, bool]:
    """Map line id -> True when the line is radial (a bridge of the multigraph).

    Parallel lines are distinct edges, so neither member of a parallel pair is
    ever radial.
    """
    n = len(net.buses)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, ln in enumerate(net.lines):
        a, b = net.bus_index[ln.from_bus], net.bus_index[ln.to_bus]
        adj[a].append((b, k))
        adj[b].append((a, k))

    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # frames: (node, edge id used to enter, iterator position)
        stack = [(root, -1, 0)]
        while stack:
            node, via, pos = stack[-1]
            if pos < len(adj[node]):
                stack[-1] = (node, via, pos + 1)
                nxt, edge = adj[node][pos]
                if edge == via:
                    continue
                if disc[nxt] == -1:
                    disc[nxt] = low[nxt] = timer
                    timer += 1
                    stack.append((nxt, edge, 0))
                else:
                    low[node] = min(low[node], disc[nxt])
            else:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[node])
                    if low[node] > disc[parent]:
                        bridges.add(via)
    return {ln.id: (k in bridges) for k, ln in enumerate(net.lines)}


def non_radial_lines(net: Network) -> list[str]:
    radial = classify_lines(net)
    return [ln.id for ln in net.lines if not radial[ln.id]]


# --------------------------------------------------------------------------
# case file I/O


def _as_float(value: Any, where: str) -> float:
    if value is None:
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise CaseParseError(f"{where}: expected a number, got {value!r}") from exc


def _number_or_none(value: float) -> float | None:
    return None if math.isinf(value) else value


def network_from_dict(doc: dict[str, Any]) -> Network:
    """Build a Network from the parsed case document."""
    try:
        meta = doc.get("meta", {})
        buses = tuple(Bus(str(b["id"]), str(b.get("name", ""))) for b in doc["buses"])
        defaulted = []
        lines = []
        for raw in doc["lines"]:
            lid = str(raw["id"])
            rating = _as_float(raw["rating_mw"], f"line {lid}")
            emergency = raw.get("emergency_rating_mw")
            if emergency is None:
                emergency = EMERGENCY_RATING_FACTOR * rating
                defaulted.append(lid)
            lines.append(
                TransmissionLine(
                    id=lid,
                    from_bus=str(raw["from"]),
                    to_bus=str(raw["to"]),
                    reactance=_as_float(raw["reactance_pu"], f"line {lid}"),
                    rating_normal=rating,
                    rating_emergency=_as_float(emergency, f"line {lid}"),
                )
            )
        gens = []
        for raw in doc["generators"]:
            gid = str(raw["id"])
            gens.append(
                Generator(
                    id=gid,
                    bus=str(raw["bus"]),
                    p_min=_as_float(raw.get("p_min", 0.0), f"generator {gid}"),
                    p_max=_as_float(raw["p_max"], f"generator {gid}"),
                    cost_energy=_as_float(raw["cost_energy"], f"generator {gid}"),
                    cost_noload=_as_float(raw.get("cost_noload", 0.0), f"generator {gid}"),
                    cost_startup=_as_float(raw.get("cost_startup", 0.0), f"generator {gid}"),
                    cost_shutdown=_as_float(raw.get("cost_shutdown", 0.0), f"generator {gid}"),
                    ramp_hourly=_as_float(raw.get("ramp_hourly"), f"generator {gid}"),
                    ramp_10min=_as_float(raw.get("ramp_10min"), f"generator {gid}"),
                    ramp_startup=_as_float(raw.get("ramp_startup"), f"generator {gid}"),
                    ramp_shutdown=_as_float(raw.get("ramp_shutdown"), f"generator {gid}"),
                    min_up=int(raw.get("min_up", 1)),
                    min_down=int(raw.get("min_down", 1)),
                )
            )
        by_bus: dict[str, tuple[float, ...]] = {}
        for raw in doc.get("loads", []):
            bus = str(raw["bus"])
            if bus in by_bus:
                raise CaseParseError(f"duplicate load entry for bus {bus}")
            by_bus[bus] = tuple(_as_float(v, f"load at bus {bus}") for v in raw["mw"])
        horizons = {len(v) for v in by_bus.values()}
        if len(horizons) > 1:
            raise NetworkValidationError("load profiles have inconsistent lengths")
        horizon = int(meta.get("horizon", horizons.pop() if horizons else 24))
        reference = str(meta.get("reference_bus", buses[0].id if buses else ""))
        metadata = dict(meta.get("extra", {}))
        if defaulted:
            metadata["defaulted_emergency_ratings"] = defaulted
            metadata["emergency_rating_factor"] = EMERGENCY_RATING_FACTOR
        return Network(
            buses=buses,
            lines=tuple(lines),
            generators=tuple(gens),
            load_profile=LoadProfile(horizon, by_bus),
            reference_bus=reference,
            base_mva=float(meta.get("base_mva", 100.0)),
            name=str(meta.get("name", "case")),
            metadata=metadata,
        )
    except KeyError as exc:
        raise CaseParseError(f"missing required field {exc}") from exc
    except TypeError as exc:
        raise CaseParseError(f"malformed case document: {exc}") from exc


def network_to_dict(net: Network) -> dict[str, Any]:
    extra = {
        k: v
        for k, v in net.metadata.items()
        if k not in ("defaulted_emergency_ratings", "emergency_rating_factor")
    }
    meta: dict[str, Any] = {
        "name": net.name,
        "base_mva": net.base_mva,
        "reference_bus": net.reference_bus,
        "horizon": net.horizon,
    }
    if extra:
        meta["extra"] = extra
    gens = []
    for g in net.generators:
        raw = asdict(g)
        for key in ("ramp_hourly", "ramp_10min", "ramp_startup", "ramp_shutdown"):
            raw[key] = _number_or_none(raw[key])
        gens.append(raw)
    return {
        "meta": meta,
        "buses": [asdict(b) for b in net.buses],
        "lines": [
            {
                "id": ln.id,
                "from": ln.from_bus,
                "to": ln.to_bus,
                "reactance_pu": ln.reactance,
                "rating_mw": ln.rating_normal,
                "emergency_rating_mw": ln.rating_emergency,
            }
            for ln in net.lines
        ],
        "generators": gens,
        "loads": [
            {"bus": bus, "mw": list(values)}
            for bus, values in net.load_profile.by_bus.items()
        ],
    }


def load_case(path: str | Path) -> Network:
    """Read and validate a JSON case file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseParseError(f"{path}: top level must be an object")
    return network_from_dict(doc)


def save_case(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def export_csv(net: Network, out_dir: str | Path) -> list[Path]:
    """Write one CSV per table (buses, lines, generators, loads) for inspection."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = network_to_dict(net)
    radial = classify_lines(net)
    written = []

    def dump(name: str, header: list[str], rows: Iterable[list[Any]]) -> None:
        path = out_dir / f"{name}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)

    dump("buses", ["id", "name"], ([b.id, b.name] for b in net.buses))
    dump(
        "lines",
        ["id", "from", "to", "reactance_pu", "rating_mw", "emergency_rating_mw", "radial"],
        (
            [r["id"], r["from"], r["to"], r["reactance_pu"], r["rating_mw"],
             r["emergency_rating_mw"], int(radial[r["id"]])]
            for r in doc["lines"]
        ),
    )
    gen_fields = list(doc["generators"][0].keys()) if doc["generators"] else ["id"]
    dump("generators", gen_fields, ([g[f] for f in gen_fields] for g in doc["generators"]))
    dump(
        "loads",
        ["bus"] + [f"t{t + 1}" for t in range(net.horizon)],
        ([bus, *values] for bus, values in net.load_profile.by_bus.items()),
    )
    return written
