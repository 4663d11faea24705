"""DC power-flow sensitivity factors: PTDF, LODF and post-outage PTDF."""

from __future__ import annotations

import csv
import threading
from pathlib import Path

import numpy as np
from scipy.sparse import csc_matrix, diags
from scipy.sparse.linalg import splu

from .network import Network, classify_lines

ZERO_THRESHOLD = 1e-10


class RadialOutageError(ValueError):
    """Requested outage of a radial line, which would island the network."""


class SingularNetworkError(RuntimeError):
    pass


def compute_ptdf(net: Network, reference_bus: str | None = None) -> np.ndarray:
    """Base-topology PTDF matrix of shape (lines, buses).

    Entry ``[k, n]`` is the MW flow on line ``k`` (from -> to) for 1 MW
    injected at bus ``n`` and withdrawn at the reference bus.
    """
    ref = net.bus_index[reference_bus or net.reference_bus]
    n_bus = len(net.buses)
    if not net.lines:
        return np.zeros((0, n_bus))
    susceptance = 1.0 / net.line_array("reactance")
    a = csc_matrix(net.incidence)
    bf = diags(susceptance) @ a
    bbus = (a.T @ bf).tocsc()
    keep = np.array([i for i in range(n_bus) if i != ref], dtype=int)
    if keep.size == 0:
        return np.zeros((len(net.lines), n_bus))
    b_red = bbus[keep][:, keep].tocsc()
    try:
        lu = splu(b_red)
    except RuntimeError as exc:
        raise SingularNetworkError(f"reduced susceptance matrix is singular: {exc}") from exc
    # B is symmetric, so PTDF^T = B^-1 Bf^T; one factorization serves every line.
    rhs = bf[:, keep].toarray().T
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularNetworkError("reduced susceptance matrix is singular")
    ptdf = np.zeros((len(net.lines), n_bus))
    ptdf[:, keep] = sol.T
    return ptdf


def sparsify(matrix: np.ndarray, threshold: float = ZERO_THRESHOLD) -> np.ndarray:
    out = np.array(matrix, copy=True)
    out[np.abs(out) < threshold] = 0.0
    return out


def compute_lodf(net: Network, ptdf: np.ndarray, radial: dict[str, bool] | None = None) -> np.ndarray:
    """LODF matrix of shape (lines, lines).

    Column ``l`` gives the fraction of line ``l``'s pre-outage flow that moves
    onto each monitored line when ``l`` trips.  Columns of radial lines and the
    diagonal are NaN: those entries are not part of the model.
    """
    radial = classify_lines(net) if radial is None else radial
    transfer = ptdf @ net.incidence.T  # flow on k per 1 MW transferred across line l
    n_line = len(net.lines)
    lodf = np.full((n_line, n_line), np.nan)
    for ell, ln in enumerate(net.lines):
        if radial[ln.id]:
            continue
        denom = 1.0 - transfer[ell, ell]
        lodf[:, ell] = transfer[:, ell] / denom
        lodf[ell, ell] = np.nan
    return lodf


class SensitivityFactors:
    """PTDF/LODF bundle for one network with a lazily filled post-outage cache."""

    def __init__(self, net: Network, reference_bus: str | None = None):
        self.net = net
        self.reference_bus = reference_bus or net.reference_bus
        self.radial = classify_lines(net)
        self.ptdf = compute_ptdf(net, self.reference_bus)
        self.lodf = compute_lodf(net, self.ptdf, self.radial)
        self._post: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def non_radial(self) -> list[str]:
        return [ln.id for ln in self.net.lines if not self.radial[ln.id]]

    def _check_outage(self, line_id: str) -> int:
        if line_id not in self.net.line_index:
            raise KeyError(f"unknown line {line_id!r}")
        if self.radial[line_id]:
            raise RadialOutageError(f"line {line_id} is radial; its outage islands the network")
        return self.net.line_index[line_id]

    def lodf_value(self, monitored: str, outaged: str) -> float:
        ell = self._check_outage(outaged)
        k = self.net.line_index[monitored]
        if k == ell:
            raise ValueError("self-LODF is not defined")
        return float(self.lodf[k, ell])

    def post_ptdf(self, line_id: str) -> np.ndarray:
        """PTDF with ``line_id`` out of service; the outaged line's row is zero."""
        ell = self._check_outage(line_id)
        cached = self._post.get(line_id)
        if cached is not None:
            return cached
        column = np.nan_to_num(self.lodf[:, ell])
        post = self.ptdf + np.outer(column, self.ptdf[ell])
        post[ell] = 0.0
        post.setflags(write=False)
        with self._lock:
            return self._post.setdefault(line_id, post)

    def dump_csv(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        bus_ids = [b.id for b in self.net.buses]
        line_ids = [ln.id for ln in self.net.lines]
        paths = [out_dir / "ptdf.csv", out_dir / "lodf.csv"]
        for path, matrix, cols in ((paths[0], self.ptdf, bus_ids), (paths[1], self.lodf, line_ids)):
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["line", *cols])
                for lid, row in zip(line_ids, matrix):
                    writer.writerow([lid, *("" if np.isnan(v) else f"{v:.10f}" for v in row)])
        return paths


def compute_post_ptdf(net: Network, outaged_line: str, factors: SensitivityFactors | None = None) -> np.ndarray:
    factors = factors or SensitivityFactors(net)
    return factors.post_ptdf(outaged_line)


def line_flows(ptdf: np.ndarray, injections: np.ndarray) -> np.ndarray:
    """Flows for injection vectors (buses,) or (buses, periods)."""
    return ptdf @ injections
