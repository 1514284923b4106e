"""Exact integer allocation by best-bound branch and bound.

Node bounds come from the Lagrangian dual of the continuous relaxation

    min sum_h C_h n_h   s.t.  sum_h p_hj / n_h <= 1 + q_j,  lo <= n <= hi,

maximised by a projected Newton ascent on the multipliers. For any multiplier
vector the inner problem separates by stratum, so the same multipliers also give
an integer Lagrangian bound (inner minimum over integer n_h), which is never
weaker and is what the search prunes with.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce as _fold

import numpy as np

from .bethel import LABEL as BETHEL_LABEL
from .bethel import bethel_rounded, repair_down
from .model import Allocation, AllocationError, AllocationProblem

log = logging.getLogger(__name__)

THREADS_ENV = "STRATALLOC_THREADS"


class Infeasible(AllocationError):
    pass


class TooLarge(AllocationError):
    pass


class Method(str, Enum):
    bip_bnb = "bip_bnb"
    bethel = "bethel"
    brute_force = "brute_force"


@dataclass(frozen=True)
class RelaxationSolution:
    n_frac: np.ndarray
    objective: float          # sum C_h n_frac_h at the returned feasible point
    lower_bound: float        # dual value, <= objective
    active_constraints: frozenset[int]
    converged: bool
    multipliers: np.ndarray
    iterations: int


@dataclass(frozen=True)
class SolveReport:
    allocation: Allocation
    proved_optimal: bool
    lower_bound: float
    nodes_explored: int
    relaxation_iterations: int
    wall_time: float
    method: Method
    status: str = "optimal"
    label: str = ""

    def to_dict(self) -> dict:
        a = self.allocation
        return {
            "method": self.method.value,
            "label": self.label or self.method.value,
            "status": self.status,
            "n": a.n.tolist(),
            "total_n": a.total,
            "objective": a.objective,
            "feasible": a.feasible,
            "proved_optimal": self.proved_optimal,
            "lower_bound": self.lower_bound,
            "nodes_explored": self.nodes_explored,
            "relaxation_iterations": self.relaxation_iterations,
            "wall_time": self.wall_time,
        }


# -- relaxation --------------------------------------------------------------


def _inner(problem: AllocationProblem, lam, lo, hi):
    w = problem.p @ lam
    n = np.clip(np.sqrt(w / problem.costs), lo, hi)
    return n, w


def _dual_value(problem: AllocationProblem, lam, lo, hi, rhs):
    n, w = _inner(problem, lam, lo, hi)
    terms = problem.costs * n + w / n
    return float(terms.sum() - lam @ rhs), n, w


def integer_dual_bound(problem: AllocationProblem, lam, lo, hi, rhs=None):
    """Lagrangian bound with the per-stratum minimum taken over integers.

    Returns ``(bound, k)`` where ``k`` is the integer inner minimiser.
    """
    rhs = problem.rhs_tol if rhs is None else rhs
    C = problem.costs
    w = problem.p @ lam
    s = np.sqrt(w / C)
    k1 = np.clip(np.floor(s), lo, hi)
    k2 = np.clip(k1 + 1, lo, hi)
    f1 = C * k1 + w / k1
    f2 = C * k2 + w / k2
    k = np.where(f2 < f1, k2, k1)
    fmin = np.minimum(f1, f2)
    bound = float(fmin.sum() - lam @ rhs)
    # absorb summation rounding so the bound stays valid
    bound -= 4 * np.finfo(float).eps * len(C) * float(fmin.sum() + lam @ rhs)
    return bound, k.astype(np.int64)


def _feasible_scaling(problem, n, lo, hi, rhs):
    """Scale n up (clipped to the box) until every constraint holds."""
    if np.all(problem.lhs(n) <= rhs):
        return n
    t_lo, t_hi = 1.0, float(np.max(hi / n))
    for _ in range(200):
        mid = 0.5 * (t_lo + t_hi)
        if mid in (t_lo, t_hi):
            break
        if np.all(problem.lhs(np.clip(mid * n, lo, hi)) <= rhs):
            t_hi = mid
        else:
            t_lo = mid
    return np.clip(t_hi * n, lo, hi)


def solve_relaxation(
    problem: AllocationProblem,
    lo=None,
    hi=None,
    *,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> RelaxationSolution:
    """Continuous relaxation over the box [lo, hi]."""
    lo = problem.lower.astype(float) if lo is None else np.asarray(lo, dtype=float)
    hi = problem.N.astype(float) if hi is None else np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise Infeasible("empty box")
    rhs = problem.rhs_tol
    C, p, m = problem.costs, problem.p, problem.m
    if np.any(problem.lhs(hi) > rhs):
        raise Infeasible("constraints cannot be met even at the upper box corner")
    if np.all(problem.lhs(lo) <= rhs):
        obj = float(C @ lo)
        return RelaxationSolution(lo, obj, obj, frozenset(), True, np.zeros(m), 0)

    lam = np.zeros(m)
    ratio = problem.lhs(lo) / rhs
    j0 = int(np.argmax(ratio))
    lam[j0] = (np.sqrt(p[:, j0] * C).sum() / rhs[j0]) ** 2
    lam_scale = lam[j0]

    g, n, w = _dual_value(problem, lam, lo, hi, rhs)
    best_g, best_lam = g, lam.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lhs = problem.lhs(n)
        grad = lhs - rhs
        scale = max(float(C @ n), 1.0)
        if np.all(grad <= tol * rhs) and np.all(lam * np.abs(grad) <= tol * scale):
            converged = True
            break
        F = (lam > 0) | (grad > 0)
        free = (n > lo * (1 + 1e-12)) & (n < hi * (1 - 1e-12)) & (w > 0)
        wgt = 1.0 / (2.0 * C[free] * n[free] ** 3)
        Hm = (p[free].T * wgt) @ p[free]
        sub = Hm[np.ix_(F, F)]
        gF = grad[F]
        tr = float(np.trace(sub))
        d = None
        if tr > 0:
            with np.errstate(all="ignore"):
                try:
                    d = np.linalg.solve(sub + 1e-12 * tr * np.eye(sub.shape[0]), gF)
                except np.linalg.LinAlgError:
                    d = np.linalg.lstsq(sub, gF, rcond=None)[0]
        if d is None or not np.all(np.isfinite(d)):
            # no curvature: the dual is locally linear, move along the gradient
            d = gF / max(float(np.max(np.abs(gF))), 1e-300) * (float(lam.max()) + lam_scale)
        dmax = float(np.max(np.abs(d))) if d.size else 0.0
        step = min(1.0, 10.0 * (float(lam.max()) + lam_scale) / dmax) if dmax > 0 else 1.0
        accepted = False
        for _ in range(60):
            cand = lam.copy()
            cand[F] = np.maximum(0.0, lam[F] + step * d)
            g_new, n_new, w_new = _dual_value(problem, cand, lo, hi, rhs)
            if np.isfinite(g_new) and g_new > g + 1e-4 * float(grad @ (cand - lam)) and g_new > g:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # multiplicative fallback step
            cand = lam * (np.maximum(lhs, 1e-300) / rhs) ** 2
            cand[(lam == 0) & (grad > 0)] = (
                np.sqrt(p[:, (lam == 0) & (grad > 0)] * C[:, None]).sum(axis=0)
                / rhs[(lam == 0) & (grad > 0)]
            ) ** 2 * 1e-3
            g_new, n_new, w_new = _dual_value(problem, cand, lo, hi, rhs)
            if np.allclose(cand, lam, rtol=1e-15, atol=0):
                break
        lam, g, n, w = cand, g_new, n_new, w_new
        if g > best_g:
            best_g, best_lam = g, lam.copy()

    if not converged:
        log.debug("relaxation stopped after %d iterations without meeting tol", it)
    n_feas = _feasible_scaling(problem, n, lo, hi, rhs)
    obj = float(C @ n_feas)
    lhs = problem.lhs(n_feas)
    active = frozenset(int(j) for j in np.flatnonzero((lam > 0) & (lhs >= rhs * (1 - 1e-8))))
    return RelaxationSolution(n_feas, obj, min(best_g, obj), active, converged, best_lam, it)


# -- branch and bound --------------------------------------------------------


@dataclass(order=True)
class BnbNode:
    bound: float
    neg_depth: int
    seq: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)

    @property
    def depth(self) -> int:
        return -self.neg_depth


@dataclass
class _NodeResult:
    infeasible: bool = False
    bound: float = math.inf
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    n_frac: np.ndarray | None = None
    weights: np.ndarray | None = None
    candidates: list = field(default_factory=list)
    iterations: int = 0


def propagate_bounds(problem: AllocationProblem, lo, hi, threshold: float = math.inf):
    """Tighten a box using the cv rows and an objective cut-off.

    Lower bounds: with every other stratum at its upper bound, row j still needs
    p_hj / n_h <= rhs_j - rest. Upper bounds: objective must stay below
    ``threshold``. Returns ``None`` when the box becomes empty.
    """
    p, rhs, C = problem.p, problem.rhs_tol, problem.costs
    at_hi = p / hi[:, None]
    room = rhs[None, :] - (at_hi.sum(axis=0)[None, :] - at_hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(p > 0, p / room, 0.0)
    if np.any((p > 0) & (room <= 0)):
        return None
    new_lo = np.maximum(lo, np.ceil(need.max(axis=1) * (1 - 1e-12) - 1e-9))
    new_hi = hi
    if math.isfinite(threshold):
        slack = threshold - float(C @ new_lo)
        if slack < 0:
            return None
        new_hi = np.minimum(hi, new_lo + np.floor(slack / C + 1e-9))
    if np.any(new_lo > new_hi):
        return None
    return new_lo, new_hi


def reduced_cost_fixing(problem: AllocationProblem, lam, lo, hi, gap: float):
    """Drop values k of n_h whose Lagrangian excess alone reaches ``gap``.

    With w_h = sum_j lam_j p_hj, f_h(k) = C_h k + w_h / k is convex, so the
    surviving values form an interval (rounded outward to stay conservative).
    """
    C = problem.costs
    w = problem.p @ lam
    s = np.sqrt(w / C)
    k1 = np.clip(np.floor(s), lo, hi)
    k2 = np.clip(k1 + 1, lo, hi)
    fmin = np.minimum(C * k1 + w / k1, C * k2 + w / k2)
    c = fmin + gap + 1e-9 * (np.abs(fmin) + gap)
    disc = np.sqrt(np.maximum(c * c - 4 * C * w, 0.0))
    r2 = (c + disc) / (2 * C)
    r1 = np.where(r2 > 0, w / (C * r2), 0.0)
    return np.maximum(lo, np.floor(r1)), np.minimum(hi, np.ceil(r2))


def _process_node(problem: AllocationProblem, lo, hi, threshold: float = math.inf, rounds: int = 4) -> _NodeResult:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    res = _NodeResult()
    rel = None
    for rnd in range(rounds):
        box = propagate_bounds(problem, lo, hi, threshold)
        if box is None:
            res.infeasible = True
            return res
        lo, hi = box
        try:
            rel = solve_relaxation(problem, lo, hi)
        except Infeasible:
            res.infeasible = True
            return res
        res.iterations += rel.iterations
        int_bound, k = integer_dual_bound(problem, rel.multipliers, lo, hi)
        res.bound = max(rel.lower_bound, int_bound)
        if problem.is_feasible(k):
            res.candidates.append(k)
        up = np.clip(np.ceil(rel.n_frac - 1e-9), lo, hi).astype(np.int64)
        if not problem.is_feasible(up):
            up = np.clip(np.ceil(rel.n_frac), lo, hi).astype(np.int64)
        if problem.is_feasible(up):
            res.candidates.append(repair_down(problem, up, lo))
        if res.bound >= threshold or not math.isfinite(threshold):
            break
        new_lo, new_hi = reduced_cost_fixing(problem, rel.multipliers, lo, hi, threshold - int_bound)
        if np.array_equal(new_lo, lo) and np.array_equal(new_hi, hi):
            break
        lo, hi = new_lo, new_hi
        if np.any(lo > hi):
            res.infeasible = True
            return res
    res.lo, res.hi = lo.astype(np.int64), hi.astype(np.int64)
    res.n_frac = np.clip(rel.n_frac, lo, hi)
    res.weights = problem.p @ rel.multipliers
    return res


def _branch_choice(n_frac, weights, lo, hi):
    open_ = lo < hi
    if not open_.any():
        return None
    frac = np.abs(n_frac - np.round(n_frac))
    frac = np.where(frac > 1e-9, frac, 0.0)
    idx = np.arange(len(n_frac))
    cand = np.flatnonzero(open_ & (frac > 0))
    if cand.size:
        h = cand[np.lexsort((idx[cand], -weights[cand], -frac[cand]))[0]]
        f = math.floor(n_frac[h])
        return int(h), f
    cand = np.flatnonzero(open_)
    h = int(cand[np.lexsort((idx[cand], -weights[cand]))[0]])
    v = int(round(n_frac[h]))
    return h, (v if v < hi[h] else v - 1)


def _cost_gcd(costs) -> float | None:
    if not np.all(costs == np.round(costs)):
        return None
    return float(_fold(math.gcd, (int(c) for c in costs)))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def solve_bnb(
    problem: AllocationProblem,
    *,
    gap_tol: float = 0.0,
    time_limit: float | None = None,
    node_limit: int | None = None,
    workers: int | None = None,
    batch_size: int = 8,
) -> SolveReport:
    """Branch and bound to proven optimality (unless a limit is hit).

    Nodes are expanded in fixed-size batches whose relaxations may run on
    ``workers`` threads; results are consumed in pop order, so the search
    trajectory does not depend on the worker count.
    """
    t0 = time.perf_counter()
    workers = default_workers() if workers is None else max(1, int(workers))
    step = _cost_gcd(problem.costs)

    seed = bethel_rounded(problem)
    inc_n = seed.n_rounded
    inc = problem.objective(inc_n)

    def threshold():
        if step is not None:
            return inc - step + 1e-9
        return inc - max(gap_tol * abs(inc), 1e-9 * max(1.0, abs(inc)))

    def offer(n):
        nonlocal inc, inc_n
        obj = problem.objective(n)
        if step is not None:
            same = obj == inc
        else:
            same = abs(obj - inc) <= 1e-9 * max(1.0, abs(inc))
        if (obj < inc and not same) or (same and tuple(n) < tuple(inc_n)):
            inc, inc_n = obj, np.asarray(n, dtype=np.int64).copy()

    counter = itertools.count()
    lo0 = problem.lower.copy()
    hi0 = problem.N.copy()
    heap = [BnbNode(-math.inf, 0, next(counter), lo0, hi0)]
    pruned_min = math.inf
    nodes = 0
    iters = 0
    limited = False

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while heap:
            if time_limit is not None and time.perf_counter() - t0 >= time_limit:
                limited = True
                break
            if node_limit is not None and nodes >= node_limit:
                limited = True
                break
            room = batch_size if node_limit is None else min(batch_size, node_limit - nodes)
            batch = []
            while heap and len(batch) < room:
                node = heapq.heappop(heap)
                if node.bound >= threshold():
                    pruned_min = min(pruned_min, node.bound)
                    continue
                batch.append(node)
            if not batch:
                continue
            cut = threshold()
            args = [(problem, nd.lo, nd.hi, cut) for nd in batch]
            if pool is not None:
                results = list(pool.map(lambda a: _process_node(*a), args))
            else:
                results = [_process_node(*a) for a in args]
            for node, res in zip(batch, results):
                nodes += 1
                iters += res.iterations
                if res.infeasible:
                    continue
                for cand in res.candidates:
                    offer(cand)
                bound = max(res.bound, node.bound)
                if bound >= threshold():
                    pruned_min = min(pruned_min, bound)
                    continue
                choice = _branch_choice(res.n_frac, res.weights, res.lo, res.hi)
                if choice is None:
                    continue
                h, f = choice
                left_hi = res.hi.copy()
                left_hi[h] = f
                right_lo = res.lo.copy()
                right_lo[h] = f + 1
                depth = node.depth + 1
                heapq.heappush(heap, BnbNode(bound, -depth, next(counter), res.lo, left_hi))
                heapq.heappush(heap, BnbNode(bound, -depth, next(counter), right_lo, res.hi))
    finally:
        if pool is not None:
            pool.shutdown()

    open_min = min((nd.bound for nd in heap), default=math.inf)
    lower = min(inc, pruned_min, open_min)
    if lower == -math.inf:
        lower = float(problem.costs @ problem.lower)
    return SolveReport(
        allocation=problem.allocation(inc_n),
        proved_optimal=not limited,
        lower_bound=float(lower),
        nodes_explored=nodes,
        relaxation_iterations=iters,
        wall_time=time.perf_counter() - t0,
        method=Method.bip_bnb,
        status="limit" if limited else "optimal",
        label="bip",
    )


def solve_bethel(problem: AllocationProblem) -> SolveReport:
    t0 = time.perf_counter()
    res = bethel_rounded(problem)
    return SolveReport(
        allocation=res.allocation,
        proved_optimal=False,
        lower_bound=math.nan,
        nodes_explored=0,
        relaxation_iterations=res.iterations,
        wall_time=time.perf_counter() - t0,
        method=Method.bethel,
        status="heuristic" if res.converged else "nonconverged",
        label=BETHEL_LABEL,
    )


# -- exhaustive oracle -------------------------------------------------------


def enumeration_size(problem: AllocationProblem) -> int:
    return math.prod(int(N) - problem.n_min + 1 for N in problem.N)


def brute_force(problem: AllocationProblem, cap: int = 10**6) -> SolveReport:
    """Enumerate every allocation in the box; ties go to the lexicographically smallest."""
    t0 = time.perf_counter()
    size = enumeration_size(problem)
    if size > cap:
        raise TooLarge(f"{size} allocations exceed the enumeration cap {cap}")
    ranges = [np.arange(problem.n_min, N + 1) for N in problem.N]
    # C-order meshgrid enumerates allocations lexicographically
    grids = np.meshgrid(*ranges, indexing="ij")
    cols = [g.ravel() for g in grids]
    lhs = np.zeros((size, problem.m))
    obj = np.zeros(size)
    for h, col in enumerate(cols):
        lhs += problem.p[h][None, :] / col[:, None]
        obj += problem.costs[h] * col
    ok = np.all(lhs <= problem.rhs_tol[None, :], axis=1)
    if not ok.any():
        raise Infeasible("no allocation in the box satisfies the constraints")
    best = obj[ok].min()
    if problem.integer_costs:
        hit = ok & (obj == best)
    else:
        hit = ok & (obj <= best + 1e-9 * max(1.0, abs(best)))
    i = int(np.argmax(hit))
    n = np.array([c[i] for c in cols], dtype=np.int64)
    alloc = problem.allocation(n)
    return SolveReport(
        allocation=alloc,
        proved_optimal=True,
        lower_bound=alloc.objective,
        nodes_explored=size,
        relaxation_iterations=0,
        wall_time=time.perf_counter() - t0,
        method=Method.brute_force,
        label="brute",
    )


def optimal_set(problem: AllocationProblem, cap: int = 10**6) -> tuple[float, set[tuple[int, ...]]]:
    """Optimal objective and every optimal allocation, by enumeration."""
    ranges = [range(problem.n_min, int(N) + 1) for N in problem.N]
    if enumeration_size(problem) > cap:
        raise TooLarge("enumeration cap exceeded")
    best, arg = math.inf, set()
    for n in itertools.product(*ranges):
        if not problem.is_feasible(n):
            continue
        obj = problem.objective(n)
        tol = 1e-9 * max(1.0, abs(obj))
        if obj < best - tol:
            best, arg = obj, {n}
        elif abs(obj - best) <= tol:
            arg.add(n)
    return best, arg
