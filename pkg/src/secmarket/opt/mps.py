"""Free-format MPS export of a LinearModel (active rows only)."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .model import LinearModel

_ROW_TYPE = {0: "L", 1: "E", 2: "G"}


def _fmt(v: float) -> str:
    return repr(float(v))


def row_names(model: LinearModel) -> list[str]:
    names = [""] * model.n_rows
    for block in model.blocks.values():
        if block.kind != "con":
            continue
        flat = block.index.ravel()
        for pos in np.flatnonzero(flat >= 0):
            names[flat[pos]] = block.label(int(pos))
    return names


def var_names(model: LinearModel) -> list[str]:
    names = [""] * model.n_vars
    for block in model.blocks.values():
        if block.kind != "var":
            continue
        for pos, col in enumerate(block.index.ravel()):
            names[col] = block.label(pos)
    return names


def write_mps(model: LinearModel, path: str | Path, materialize_lazy: bool = False) -> Path:
    """Write ``model`` in free MPS.  Names follow ``block[label,...]``.

    ``materialize_lazy`` activates every lazy row first so the file states the
    complete model rather than the rows separated so far.
    """
    if materialize_lazy:
        for name in model.lazy:
            model.activate(name, model.lazy_candidates(name))
    path = Path(path)
    rnames = row_names(model)
    cnames = var_names(model)
    a = model.matrix().tocsc()
    sense = model.senses()
    rhs = model.rhs()
    lines = [f"NAME {model.name}", "ROWS", " N obj"]
    lines += [f" {_ROW_TYPE[int(s)]} {n}" for s, n in zip(sense, rnames)]
    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for j in range(model.n_vars):
        if model.integer[j] != in_int:
            tag = "'INTORG'" if model.integer[j] else "'INTEND'"
            lines.append(f" MARKER{marker} 'MARKER' {tag}")
            marker += 1
            in_int = bool(model.integer[j])
        entries = []
        if model.cost[j] != 0:
            entries.append(("obj", model.cost[j]))
        lo, hi = a.indptr[j], a.indptr[j + 1]
        entries += [(rnames[i], v) for i, v in zip(a.indices[lo:hi], a.data[lo:hi])]
        if not entries:
            entries.append(("obj", 0.0))
        lines += [f" {cnames[j]} {r} {_fmt(v)}" for r, v in entries]
    if in_int:
        lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")
    lines.append("RHS")
    if model.obj_offset:
        lines.append(f" RHS obj {_fmt(-model.obj_offset)}")
    lines += [f" RHS {n} {_fmt(v)}" for n, v in zip(rnames, rhs) if v != 0]
    lines.append("BOUNDS")
    for j, name in enumerate(cnames):
        lo, hi = model.lb[j], model.ub[j]
        if lo == hi:
            lines.append(f" FX BND {name} {_fmt(lo)}")
            continue
        if math.isinf(lo) and math.isinf(hi):
            lines.append(f" FR BND {name}")
            continue
        if math.isinf(lo):
            lines.append(f" MI BND {name}")
        elif lo != 0 or model.integer[j]:
            lines.append(f" LO BND {name} {_fmt(lo)}")
        if not math.isinf(hi):
            lines.append(f" UP BND {name} {_fmt(hi)}")
        elif model.integer[j]:
            lines.append(f" PL BND {name}")
    lines.append("ENDATA")
    path.write_text("\n".join(lines) + "\n")
    return path
