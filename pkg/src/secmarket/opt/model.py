"""Solver-agnostic mixed-integer linear model.

Variables and constraints are added in named blocks whose positions carry
semantic labels (generator, scenario, period, ...).  A block's ``index``
array maps those labels back to solver columns/rows, which is how solutions
are decoded and duals are extracted.

Constraint families that are large but mostly slack (PTDF line limits) can be
registered as *lazy*: their rows are only added to the active model when a
candidate solution violates them.  Inactive lazy rows have a zero dual.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csc_matrix, csr_matrix

INF = math.inf
SENSES = ("<=", "=", ">=")


class ModelError(ValueError):
    pass


@dataclass
class Block:
    name: str
    axes: tuple[tuple[str, ...], ...]
    index: np.ndarray  # column/row ids in label order; -1 marks inactive lazy rows
    kind: str  # "var" or "con"
    sense: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.index.shape

    def label(self, flat: int) -> str:
        pos = np.unravel_index(flat, self.shape) if self.shape else ()
        inner = ",".join(ax[p] for ax, p in zip(self.axes, pos))
        return f"{self.name}[{inner}]" if inner else self.name


@dataclass
class LazyFamily:
    """Rows ``activity(x)[i] (sense) rhs[i]`` materialized on demand.

    ``activity`` evaluates every candidate row on a primal vector; ``rows``
    returns ``(local_row, cols, vals)`` triplets for the requested flat ids,
    where ``local_row`` numbers the requested rows 0..len(ids)-1.
    """

    block: str
    rhs: np.ndarray
    activity: Callable[[np.ndarray], np.ndarray]
    rows: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]
    mask: np.ndarray | None = None  # candidate positions; None means all


@dataclass
class CompiledModel:
    c: np.ndarray
    offset: float
    a: csc_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray


def _broadcast(value, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), shape).ravel().copy()


class LinearModel:
    """Minimization MILP built block by block."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.blocks: dict[str, Block] = {}
        self.lb = np.zeros(0)
        self.ub = np.zeros(0)
        self.cost = np.zeros(0)
        self.integer = np.zeros(0, dtype=bool)
        self.obj_offset = 0.0
        self._var_owner: list[tuple[str, int]] = []  # (block, start)
        self._row_block: list[np.ndarray] = []
        self._row_pos: list[np.ndarray] = []
        self._ri: list[np.ndarray] = []
        self._ci: list[np.ndarray] = []
        self._vi: list[np.ndarray] = []
        self._sense: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self.n_rows = 0
        self.lazy: dict[str, LazyFamily] = {}
        self.info: dict[str, object] = {}
        self._compiled_rows: csr_matrix | None = None

    # ------------------------------------------------------------------ vars

    @property
    def n_vars(self) -> int:
        return self.lb.size

    def add_vars(
        self,
        name: str,
        axes: Sequence[Sequence[str]],
        lb=0.0,
        ub=INF,
        cost=0.0,
        integer: bool = False,
    ) -> np.ndarray:
        if name in self.blocks:
            raise ModelError(f"duplicate block name {name!r}")
        axes_t = tuple(tuple(str(a) for a in ax) for ax in axes)
        shape = tuple(len(ax) for ax in axes_t)
        size = int(np.prod(shape)) if shape else 1
        start = self.n_vars
        index = np.arange(start, start + size).reshape(shape)
        lb_arr, ub_arr = _broadcast(lb, shape), _broadcast(ub, shape)
        if np.any(lb_arr > ub_arr):
            raise ModelError(f"block {name}: lower bound exceeds upper bound")
        self.lb = np.concatenate([self.lb, lb_arr])
        self.ub = np.concatenate([self.ub, ub_arr])
        self.cost = np.concatenate([self.cost, _broadcast(cost, shape)])
        self.integer = np.concatenate([self.integer, np.full(size, integer)])
        self.blocks[name] = Block(name, axes_t, index, "var")
        self._var_owner.append((name, start))
        return index

    def var(self, name: str) -> np.ndarray:
        block = self.blocks[name]
        if block.kind != "var":
            raise KeyError(f"{name!r} is a constraint block")
        return block.index

    def add_cost(self, cols: np.ndarray, coeffs) -> None:
        np.add.at(self.cost, np.asarray(cols).ravel(), _broadcast(coeffs, np.shape(cols)))

    def var_name(self, j: int) -> str:
        starts = [s for _, s in self._var_owner]
        pos = int(np.searchsorted(starts, j, side="right")) - 1
        name, start = self._var_owner[pos]
        return self.blocks[name].label(j - start)

    # ------------------------------------------------------------------ rows

    def _new_con_block(self, name: str, axes, sense: str) -> Block:
        if name in self.blocks:
            raise ModelError(f"duplicate block name {name!r}")
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        axes_t = tuple(tuple(str(a) for a in ax) for ax in axes)
        shape = tuple(len(ax) for ax in axes_t)
        block = Block(name, axes_t, np.full(shape, -1, dtype=np.int64), "con", sense)
        self.blocks[name] = block
        return block

    def _append_rows(self, block: Block, flat_ids: np.ndarray, local_row, cols, vals, rhs) -> np.ndarray:
        flat_ids = np.asarray(flat_ids, dtype=np.int64)
        n_new = flat_ids.size
        local_row = np.asarray(local_row, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise ModelError(f"block {block.name}: coefficient references an undeclared variable")
        if local_row.size and (local_row.min() < 0 or local_row.max() >= n_new):
            raise ModelError(f"block {block.name}: local row id out of range")
        rows = np.arange(self.n_rows, self.n_rows + n_new)
        block.index.ravel()[flat_ids] = rows  # index is C-contiguous, ravel is a view
        keep = vals != 0.0
        self._ri.append(rows[local_row[keep]])
        self._ci.append(cols[keep])
        self._vi.append(vals[keep])
        self._sense.append(np.full(n_new, SENSES.index(block.sense), dtype=np.int8))
        self._rhs.append(np.asarray(rhs, dtype=float).ravel())
        self._row_block.append(np.full(n_new, list(self.blocks).index(block.name), dtype=np.int32))
        self._row_pos.append(flat_ids)
        self.n_rows += n_new
        self._compiled_rows = None
        return rows

    def add_rows(self, name: str, axes, sense: str, local_row, cols, vals, rhs,
                 positions: np.ndarray | None = None) -> np.ndarray:
        """Add a block of rows from COO triplets.

        ``positions`` lists the flat block positions that carry a row (default:
        all, in C order); ``local_row`` numbers those rows and ``rhs`` has one
        entry per row.  Returns the block's row-id array (-1 where absent).
        """
        block = self._new_con_block(name, axes, sense)
        if positions is None:
            positions = np.arange(block.index.size)
        positions = np.asarray(positions, dtype=np.int64)
        rhs = _broadcast(rhs, positions.shape)
        self._append_rows(block, positions, local_row, cols, vals, rhs)
        return block.index

    def add_rows_terms(self, name: str, axes, sense: str, terms, rhs,
                       mask: np.ndarray | None = None) -> np.ndarray:
        """Rows with a fixed number of terms: each ``(cols, coeffs)`` in ``terms``
        is shaped like the block and contributes one entry per row.  ``mask``
        (block-shaped bool) selects the positions that get a row."""
        shape = tuple(len(ax) for ax in axes)
        positions = np.arange(int(np.prod(shape))) if mask is None else np.flatnonzero(np.asarray(mask).ravel())
        n = positions.size
        local, cols, vals = [], [], []
        for c, v in terms:
            c = np.broadcast_to(np.asarray(c), shape).ravel()[positions]
            v = np.broadcast_to(np.asarray(v, dtype=float), shape).ravel()[positions]
            local.append(np.arange(n))
            cols.append(c)
            vals.append(v)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), shape).ravel()[positions]
        return self.add_rows(name, axes, sense, np.concatenate(local), np.concatenate(cols),
                             np.concatenate(vals), rhs, positions=positions)

    def add_row_list(self, name: str, axes, sense: str, terms, rhs) -> np.ndarray:
        """Convenience form: ``terms[i] = (cols, vals)`` for row i in C order."""
        local, cols, vals = [], [], []
        for i, (c, v) in enumerate(terms):
            c = np.atleast_1d(np.asarray(c, dtype=np.int64))
            v = _broadcast(v, c.shape)
            local.append(np.full(c.size, i))
            cols.append(c)
            vals.append(v)
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
        return self.add_rows(name, axes, sense, cat(local, np.int64), cat(cols, np.int64), cat(vals, float), rhs)

    def add_lazy(self, name: str, axes, sense: str, family: LazyFamily, materialize: bool = False) -> Block:
        block = self._new_con_block(name, axes, sense)
        if family.rhs.size != block.index.size:
            raise ModelError(f"lazy block {name}: rhs size mismatch")
        self.lazy[name] = family
        if materialize:
            self.activate(name, self.lazy_candidates(name))
        return block

    def lazy_candidates(self, name: str) -> np.ndarray:
        family = self.lazy[name]
        size = self.blocks[name].index.size
        return np.arange(size) if family.mask is None else np.flatnonzero(family.mask.ravel())

    def activate(self, name: str, flat_ids: np.ndarray) -> int:
        """Materialize the given lazy rows (already-active ids are skipped)."""
        block = self.blocks[name]
        family = self.lazy[name]
        flat_ids = np.asarray(flat_ids, dtype=np.int64)
        flat_ids = flat_ids[block.index.ravel()[flat_ids] < 0]
        if family.mask is not None:
            flat_ids = flat_ids[family.mask.ravel()[flat_ids]]
        if flat_ids.size == 0:
            return 0
        local, cols, vals = family.rows(flat_ids)
        self._append_rows(block, flat_ids, local, cols, vals, family.rhs[flat_ids])
        return int(flat_ids.size)

    def separate(self, x: np.ndarray, tol: float) -> int:
        """Activate every lazy row violated by ``x`` beyond ``tol``; return count."""
        added = 0
        for name, family in self.lazy.items():
            block = self.blocks[name]
            act = family.activity(x)
            if block.sense == "<=":
                viol = act - family.rhs
            elif block.sense == ">=":
                viol = family.rhs - act
            else:
                viol = np.abs(act - family.rhs)
            if family.mask is not None:
                viol = np.where(family.mask.ravel(), viol, -INF)
            ids = np.flatnonzero((viol > tol) & (block.index.ravel() < 0))
            added += self.activate(name, ids)
        return added

    def con(self, name: str) -> np.ndarray:
        block = self.blocks[name]
        if block.kind != "con":
            raise KeyError(f"{name!r} is a variable block")
        return block.index

    def row_name(self, i: int) -> str:
        block_id = np.concatenate(self._row_block)[i]
        pos = np.concatenate(self._row_pos)[i]
        return list(self.blocks.values())[block_id].label(int(pos))

    # --------------------------------------------------------------- compile

    def matrix(self) -> csr_matrix:
        if self._compiled_rows is None or self._compiled_rows.shape != (self.n_rows, self.n_vars):
            if self._ri:
                ri, ci, vi = (np.concatenate(x) for x in (self._ri, self._ci, self._vi))
            else:
                ri = ci = np.zeros(0, dtype=np.int64)
                vi = np.zeros(0)
            self._compiled_rows = csr_matrix((vi, (ri, ci)), shape=(self.n_rows, self.n_vars))
        return self._compiled_rows

    def senses(self) -> np.ndarray:
        return np.concatenate(self._sense) if self._sense else np.zeros(0, dtype=np.int8)

    def rhs(self) -> np.ndarray:
        return np.concatenate(self._rhs) if self._rhs else np.zeros(0)

    def compile(self) -> CompiledModel:
        sense, rhs = self.senses(), self.rhs()
        row_lo = np.where(sense == 2, rhs, np.where(sense == 1, rhs, -INF))
        row_hi = np.where(sense == 0, rhs, np.where(sense == 1, rhs, INF))
        return CompiledModel(
            c=self.cost.copy(),
            offset=self.obj_offset,
            a=self.matrix().tocsc(),
            row_lo=row_lo,
            row_hi=row_hi,
            lb=self.lb.copy(),
            ub=self.ub.copy(),
            integer=self.integer.copy(),
        )

    def objective(self, x: np.ndarray) -> float:
        return float(self.cost @ x + self.obj_offset)

    def max_violation(self, x: np.ndarray, include_lazy: bool = True) -> float:
        """Largest bound or row violation of ``x`` (lazy rows optional)."""
        worst = float(max(np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0)))
        if self.n_rows:
            act = self.matrix() @ x
            sense, rhs = self.senses(), self.rhs()
            viol = np.where(sense == 0, act - rhs, np.where(sense == 2, rhs - act, np.abs(act - rhs)))
            worst = max(worst, float(viol.max()))
        if include_lazy:
            for name, family in self.lazy.items():
                sense = self.blocks[name].sense
                act = family.activity(x)
                viol = act - family.rhs if sense == "<=" else (
                    family.rhs - act if sense == ">=" else np.abs(act - family.rhs))
                if family.mask is not None:
                    viol = viol[family.mask.ravel()]
                if viol.size:
                    worst = max(worst, float(viol.max()))
        return worst

    def copy(self) -> "LinearModel":
        """Independent copy; lazy family callables and ``info`` values are shared."""
        lazy, info = self.lazy, self.info
        self.lazy, self.info = {}, {}
        try:
            dup = copy.deepcopy(self)
        finally:
            self.lazy, self.info = lazy, info
        dup.lazy = dict(lazy)
        dup.info = dict(info)
        return dup

    # ----------------------------------------------------------- statistics

    def stats(self) -> list[dict[str, object]]:
        """Per-block counts: variables, active rows, candidate lazy rows, nonzeros."""
        a = self.matrix()
        nnz_per_row = np.diff(a.indptr)
        out = []
        for block in self.blocks.values():
            if block.kind == "var":
                out.append({"block": block.name, "kind": "var", "count": block.index.size,
                            "candidates": block.index.size, "nonzeros": 0})
            else:
                rows = block.index.ravel()
                active = rows[rows >= 0]
                out.append({"block": block.name, "kind": "con", "count": int(active.size),
                            "candidates": int(rows.size), "nonzeros": int(nnz_per_row[active].sum())})
        return out
