"""Bethel-style continuous allocation with integer rounding.

The continuous part is the convex-combination fixed point: weights alpha on
the simplex over the cv constraints, primal map n_h ∝ sqrt(sum_j alpha_j p_hj / C_h)
scaled up until every constraint holds, and the multiplicative update
alpha_j <- alpha_j * (lhs_j / rhs_j)^2 renormalised. Fixed points satisfy the
KKT conditions of the continuous program.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import Allocation, AllocationProblem

log = logging.getLogger(__name__)

LABEL = "bethel (ceil+repair)"
_ALPHA_FLOOR = 1e-300


@dataclass(frozen=True)
class BethelResult:
    n_continuous: np.ndarray
    n_rounded: np.ndarray | None
    multipliers: np.ndarray
    iterations: int
    converged: bool
    allocation: Allocation | None = None


def _scaled_point(problem: AllocationProblem, u: np.ndarray, lo, hi, rhs) -> np.ndarray:
    """Smallest scale s with clip(s * u, lo, hi) feasible.

    Between consecutive clamp breakpoints every constraint reads A_j + B_j / s,
    so after locating the first feasible breakpoint the scale is closed form.
    """
    if np.all(problem.lhs(lo) <= rhs):
        return lo.copy()
    pos = u > 0
    brk = np.unique(np.concatenate([lo[pos] / u[pos], hi[pos] / u[pos]]))
    point = lambda s: np.clip(s * u, lo, hi)  # noqa: E731
    if np.any(problem.lhs(point(brk[-1])) > rhs):
        return np.where(pos, hi, lo)
    # first breakpoint index at which the clipped point is feasible
    a, b = 0, len(brk) - 1
    while a < b:
        mid = (a + b) // 2
        if np.all(problem.lhs(point(brk[mid])) <= rhs):
            b = mid
        else:
            a = mid + 1
    if b == 0:
        return point(brk[0])
    s_lo, s_hi = brk[b - 1], brk[b]
    free = pos & (lo / np.where(pos, u, 1) <= s_lo) & (hi / np.where(pos, u, 1) >= s_hi)
    clamped_n = point(s_lo)
    A = (problem.p[~free] / clamped_n[~free, None]).sum(axis=0)
    B = (problem.p[free] / u[free, None]).sum(axis=0)
    need = np.where(rhs > A, B / np.maximum(rhs - A, 1e-300), np.inf)
    s = float(np.clip(need.max() * (1 + 1e-14), s_lo, s_hi))
    return point(s)


def bethel_continuous(
    problem: AllocationProblem, *, tol: float = 1e-10, max_iter: int = 10_000
) -> BethelResult:
    lo = problem.lower.astype(float)
    hi = problem.N.astype(float)
    rhs = problem.rhs_tol
    C = problem.costs
    m = problem.m
    alpha = np.full(m, 1.0 / m)
    n = lo.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = np.sqrt(problem.p @ alpha / C)
        n = _scaled_point(problem, u, lo, hi, rhs)
        ratio = problem.lhs(n) / rhs
        new = alpha * ratio**2
        total = new.sum()
        if total <= 0:
            # every constraint is slack at the box floor
            converged = True
            break
        new = np.maximum(new / total, _ALPHA_FLOOR)
        new /= new.sum()
        step = np.max(np.abs(new - alpha))
        alpha = new
        if step < tol:
            converged = True
            break
    if not converged:
        log.warning("bethel iteration did not converge after %d steps", max_iter)
    # Recover the multiplier scale from the primal map: lambda = s^2 alpha.
    u = np.sqrt(problem.p @ alpha / C)
    free = (u > 0) & (n > lo) & (n < hi)
    scale = float(np.median(n[free] / u[free])) ** 2 if free.any() else 0.0
    res = BethelResult(n.copy(), None, scale * alpha, it, converged)
    return res


def repair_up(problem: AllocationProblem, n, hi=None) -> np.ndarray:
    """Increase entries of ``n`` one unit at a time until every constraint holds."""
    n = np.array(n, dtype=np.int64)
    hi = problem.N if hi is None else np.asarray(hi)
    rhs = problem.rhs_tol
    p, C = problem.p, problem.costs
    lhs = problem.lhs(n)
    while np.any(lhs > rhs):
        cand = np.flatnonzero(n < hi)
        if cand.size == 0:
            break
        viol = np.maximum(lhs - rhs, 0.0) / rhs
        gain = p[cand] * (1.0 / n[cand] - 1.0 / (n[cand] + 1))[:, None]
        score = np.minimum(gain / rhs, viol).sum(axis=1) / C[cand]
        h = cand[int(np.argmax(score))]
        n[h] += 1
        lhs = problem.lhs(n)
    return n


def repair_down(problem: AllocationProblem, n, floor=None) -> np.ndarray:
    """Greedy decrements that keep feasibility.

    Picks the largest cost first, then the move that tightens the constraints
    least, then the lowest stratum index. ``floor`` bounds each entry from below.
    """
    n = np.array(n, dtype=np.int64)
    floor = problem.lower if floor is None else np.maximum(np.asarray(floor, dtype=np.int64), problem.n_min)
    rhs = problem.rhs_tol
    p, C = problem.p, problem.costs
    lhs = problem.lhs(n)
    while True:
        cand = np.flatnonzero(n > floor)
        if cand.size == 0:
            break
        new_lhs = lhs[None, :] + p[cand] * (1.0 / (n[cand] - 1) - 1.0 / n[cand])[:, None]
        ok = np.all(new_lhs <= rhs, axis=1)
        if not ok.any():
            break
        cand, new_lhs = cand[ok], new_lhs[ok]
        tight = (new_lhs / rhs).max(axis=1)
        # lexsort: last key is primary
        order = np.lexsort((cand, tight, -C[cand]))
        h = cand[order[0]]
        n[h] -= 1
        lhs = problem.lhs(n)
    return n


def round_allocation(problem: AllocationProblem, n_cont, floor_to_continuous: bool = True) -> np.ndarray:
    """Ceiling (with integral snapping), clamping, then repairs in both directions."""
    n_cont = np.asarray(n_cont, dtype=float)
    n = np.ceil(n_cont - 1e-9).astype(np.int64)
    n = np.clip(n, problem.n_min, problem.N)
    if not problem.is_feasible(n):
        n = repair_up(problem, n)
    floor = np.floor(n_cont + 1e-9).astype(np.int64) if floor_to_continuous else None
    return repair_down(problem, n, floor)


def bethel_rounded(problem: AllocationProblem, **kwargs) -> BethelResult:
    cont = bethel_continuous(problem, **kwargs)
    n = round_allocation(problem, cont.n_continuous)
    return BethelResult(
        cont.n_continuous,
        n,
        cont.multipliers,
        cont.iterations,
        cont.converged,
        problem.allocation(n),
    )
