"""Explicit binary model over indicator columns x_hk ("stratum h gets k units").

One column per (h, k) with k in 1..N_h. Assignment rows force a single k per
stratum; one cv row per survey variable carries coefficient p_hj / k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .model import Allocation, AllocationError, AllocationProblem, OutOfBounds

DEFAULT_COLUMN_CAP = 10_000_000
_TERMS_PER_LINE = 8


class Overflow(AllocationError):
    pass


class NotAssignment(AllocationError):
    pass


class SinkError(OSError):
    pass


@dataclass(frozen=True)
class BipModel:
    problem: AllocationProblem
    offsets: np.ndarray       # first column of each stratum, length H + 1
    col_stratum: np.ndarray   # 0-based h per column
    col_k: np.ndarray         # sample size k per column
    objective: np.ndarray
    cv_coef: np.ndarray       # m x num_vars
    cv_rhs: np.ndarray        # 1 + q_j
    fixed_zero: np.ndarray    # column indices with k < n_min

    @property
    def num_vars(self) -> int:
        return int(self.offsets[-1])

    @property
    def H(self) -> int:
        return len(self.offsets) - 1

    @property
    def m(self) -> int:
        return self.cv_coef.shape[0]

    def column(self, h: int, k: int) -> int:
        """0-based column for 1-based stratum ``h`` and sample size ``k``."""
        if not (1 <= h <= self.H) or not (1 <= k <= self.offsets[h] - self.offsets[h - 1]):
            raise KeyError((h, k))
        return int(self.offsets[h - 1] + k - 1)

    def column_name(self, col: int) -> str:
        return f"x_{self.col_stratum[col] + 1}_{self.col_k[col]}"

    def assignment_columns(self, h: int) -> range:
        return range(int(self.offsets[h - 1]), int(self.offsets[h]))

    def encode(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        if n.shape != (self.H,):
            raise OutOfBounds(f"allocation has shape {n.shape}, expected ({self.H},)")
        sizes = np.diff(self.offsets)
        if np.any(n < 1) or np.any(n > sizes):
            raise OutOfBounds(f"allocation {n.tolist()} outside [1, N_h]")
        x = np.zeros(self.num_vars, dtype=np.int8)
        x[self.offsets[:-1] + n - 1] = 1
        return x

    def cv_row_values(self, x) -> np.ndarray:
        return self.cv_coef @ np.asarray(x, dtype=float)

    def objective_value(self, x) -> float:
        return float(self.objective @ np.asarray(x, dtype=float))

    def nonzeros(self) -> int:
        return self.num_vars + int(np.count_nonzero(self.cv_coef))


def build_bip(problem: AllocationProblem, column_cap: int = DEFAULT_COLUMN_CAP) -> BipModel:
    N = problem.N
    total = int(N.sum())
    if total > column_cap:
        raise Overflow(f"model would have {total} columns (cap {column_cap})")
    offsets = np.concatenate([[0], np.cumsum(N)]).astype(np.int64)
    col_stratum = np.repeat(np.arange(problem.H), N)
    col_k = np.arange(total) - offsets[col_stratum] + 1
    objective = problem.costs[col_stratum] * col_k
    cv_coef = problem.p[col_stratum, :].T / col_k[None, :]
    fixed = np.flatnonzero(col_k < problem.n_min)
    for a in (offsets, col_stratum, col_k, objective, cv_coef, fixed):
        a.setflags(write=False)
    return BipModel(problem, offsets, col_stratum, col_k, objective, cv_coef, problem.rhs, fixed)


def decode(model: BipModel, x) -> Allocation:
    x = np.asarray(x)
    if x.shape != (model.num_vars,):
        raise NotAssignment(f"expected {model.num_vars} indicator values, got {x.size}")
    if np.any((x != 0) & (x != 1)):
        raise NotAssignment("indicator values must be 0 or 1")
    sums = np.add.reduceat(x.astype(np.int64), model.offsets[:-1])
    bad = np.flatnonzero(sums != 1)
    if bad.size:
        h = int(bad[0]) + 1
        raise NotAssignment(f"assignment row {h} sums to {int(sums[bad[0]])}, expected 1")
    n = model.col_k[np.flatnonzero(x)]
    return model.problem.allocation(n)


def check_equivalence(problem: AllocationProblem, n, rel: float = 1e-12) -> bool:
    """Compare the BIP cv rows at the indicator encoding of ``n`` with sum_h p_hj / n_h."""
    model = build_bip(problem)
    bip = model.cv_row_values(model.encode(n))
    direct = problem.lhs(n)
    return bool(np.all(np.abs(bip - direct) <= rel * np.maximum(np.abs(direct), 1e-300)))


def _fmt(v: float) -> str:
    return "%.17g" % v


def _write_terms(out: TextIO, head: str, coefs, names, tail: str = "") -> None:
    parts = [f"{_fmt(c)} {nm}" for c, nm in zip(coefs, names)]
    lines = [" + ".join(parts[i:i + _TERMS_PER_LINE]) for i in range(0, len(parts), _TERMS_PER_LINE)]
    out.write(f" {head} " + "\n   + ".join(lines) + tail + "\n")


def export_lp(model: BipModel, destination: TextIO) -> None:
    """Write ``model`` in CPLEX LP text format."""
    names = [model.column_name(c) for c in range(model.num_vars)]
    try:
        out = destination
        out.write("\\ multivariate stratified allocation, binary formulation\n")
        out.write("Minimize\n")
        _write_terms(out, "obj:", model.objective, names)
        out.write("Subject To\n")
        for h in range(1, model.H + 1):
            cols = model.assignment_columns(h)
            _write_terms(out, f"assign_h{h}:", [1] * len(cols), names[cols.start:cols.stop], " = 1")
        for j in range(model.m):
            row = model.cv_coef[j]
            nz = np.flatnonzero(row)
            if nz.size == 0:
                nz = np.array([0])
            _write_terms(out, f"cv_{j + 1}:", row[nz], [names[c] for c in nz], f" <= {_fmt(model.cv_rhs[j])}")
        if model.fixed_zero.size:
            out.write("Bounds\n")
            for c in model.fixed_zero:
                out.write(f" {names[c]} = 0\n")
        out.write("Binaries\n")
        for i in range(0, len(names), _TERMS_PER_LINE * 2):
            out.write(" " + " ".join(names[i:i + _TERMS_PER_LINE * 2]) + "\n")
        out.write("End\n")
    except OSError as exc:
        raise SinkError(str(exc)) from exc
