"""Domain types for multivariate stratified allocation problems.

Everything here is immutable after construction. Arrays are stored as
read-only float64/int64 numpy arrays so instances can be shared freely
between solver workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Relative slack on the constraint left-hand side used by every feasibility test.
FEAS_TOL = 1e-9


class AllocationError(ValueError):
    """Base class for all input / model errors raised by this package."""


class EmptyStratum(AllocationError):
    pass


class ZeroTotal(AllocationError):
    pass


class BadTarget(AllocationError):
    pass


class BoundConflict(AllocationError):
    pass


class NonFinite(AllocationError):
    pass


class OutOfBounds(AllocationError):
    pass


class SchemaError(AllocationError):
    pass


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PopulationFrame:
    """Unit-level microdata: one row per unit, one column per survey variable."""

    unit_ids: tuple[str, ...]
    labels: tuple[str, ...]
    y: np.ndarray

    def __post_init__(self):
        y = _frozen(self.y)
        if y.ndim == 1:
            y = _frozen(y.reshape(-1, 1))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        if not (len(self.unit_ids) == len(self.labels) == y.shape[0]):
            raise SchemaError("unit_ids, labels and y must have the same number of rows")
        if y.shape[0] == 0:
            raise EmptyStratum("population frame has no units")
        if y.shape[1] < 1:
            raise SchemaError("at least one survey variable is required")
        if not np.all(np.isfinite(y)):
            raise NonFinite("y contains non-finite values")
        seen: dict[str, str] = {}
        for uid, lab in zip(self.unit_ids, self.labels):
            if uid in seen:
                if seen[uid] != lab:
                    raise SchemaError(
                        f"unit {uid!r} assigned to two strata ({seen[uid]!r}, {lab!r})"
                    )
                raise SchemaError(f"duplicate unit id {uid!r}")
            seen[uid] = lab

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, Sequence[float]]]) -> "PopulationFrame":
        ids, labels, ys = [], [], []
        for uid, lab, yv in records:
            ids.append(uid)
            labels.append(lab)
            ys.append(list(yv))
        widths = {len(v) for v in ys}
        if len(widths) > 1:
            raise SchemaError("units carry different numbers of variables")
        return cls(tuple(ids), tuple(labels), np.array(ys, dtype=float))

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class StratumSummary:
    label: str
    N: int
    s2: np.ndarray
    mean: np.ndarray | None = None

    def __post_init__(self):
        s2 = _frozen(np.atleast_1d(self.s2))
        object.__setattr__(self, "s2", s2)
        if self.mean is not None:
            object.__setattr__(self, "mean", _frozen(np.atleast_1d(self.mean)))
        if int(self.N) != self.N or self.N < 1:
            raise EmptyStratum(f"stratum {self.label!r} has N_h = {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not np.all(np.isfinite(s2)) or (self.mean is not None and not np.all(np.isfinite(self.mean))):
            raise NonFinite(f"stratum {self.label!r} has non-finite statistics")
        if np.any(s2 < 0):
            raise AllocationError(f"stratum {self.label!r} has a negative variance")
        if self.N == 1 and np.any(s2 != 0):
            raise AllocationError(f"singleton stratum {self.label!r} must have zero variance")


@dataclass(frozen=True)
class SurveySpec:
    summaries: tuple[StratumSummary, ...]
    totals: np.ndarray
    cv_targets: np.ndarray
    costs: np.ndarray | None = None
    n_min: int = 1

    def __post_init__(self):
        object.__setattr__(self, "summaries", tuple(self.summaries))
        object.__setattr__(self, "totals", _frozen(np.atleast_1d(self.totals)))
        object.__setattr__(self, "cv_targets", _frozen(np.atleast_1d(self.cv_targets)))
        costs = np.ones(len(self.summaries)) if self.costs is None else self.costs
        object.__setattr__(self, "costs", _frozen(np.atleast_1d(costs)))

    @property
    def H(self) -> int:
        return len(self.summaries)

    @property
    def m(self) -> int:
        return len(self.totals)

    @property
    def N(self) -> np.ndarray:
        return np.array([s.N for s in self.summaries], dtype=np.int64)

    @property
    def s2(self) -> np.ndarray:
        """H x m matrix of stratum variances."""
        return np.vstack([s.s2 for s in self.summaries])

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.summaries]


def validate_survey_spec(spec: SurveySpec) -> SurveySpec:
    """Check every structural invariant of ``spec`` and return it unchanged."""
    if spec.H < 1:
        raise EmptyStratum("at least one stratum is required")
    if spec.m < 1:
        raise SchemaError("at least one survey variable is required")
    for s in spec.summaries:
        if s.N < 1:
            raise EmptyStratum(f"stratum {s.label!r} is empty")
        if len(s.s2) != spec.m:
            raise SchemaError(f"stratum {s.label!r} has {len(s.s2)} variances, expected {spec.m}")
    if len(spec.cv_targets) != spec.m:
        raise SchemaError(f"{len(spec.cv_targets)} cv targets given for {spec.m} variables")
    if len(spec.costs) != spec.H:
        raise SchemaError(f"{len(spec.costs)} costs given for {spec.H} strata")
    for arr, what in ((spec.totals, "totals"), (spec.cv_targets, "cv targets"), (spec.costs, "costs")):
        if not np.all(np.isfinite(arr)):
            raise NonFinite(f"{what} contain non-finite values")
    if np.any(spec.totals == 0):
        j = int(np.flatnonzero(spec.totals == 0)[0]) + 1
        raise ZeroTotal(f"population total of variable {j} is zero")
    if np.any(spec.cv_targets <= 0):
        raise BadTarget("cv targets must be strictly positive")
    if np.any(spec.costs <= 0):
        raise AllocationError("costs must be strictly positive")
    if int(spec.n_min) != spec.n_min or spec.n_min < 1:
        raise BoundConflict(f"n_min must be a positive integer, got {spec.n_min}")
    if spec.n_min > spec.N.min():
        raise BoundConflict(f"n_min = {spec.n_min} exceeds the smallest stratum size {spec.N.min()}")
    return spec


@dataclass(frozen=True)
class AllocationProblem:
    """Reduced instance: minimise sum(C_h n_h) s.t. sum_h p_hj / n_h - q_j <= 1."""

    p: np.ndarray
    q: np.ndarray
    N: np.ndarray
    costs: np.ndarray
    n_min: int = 1

    def __post_init__(self):
        p = _frozen(self.p)
        if p.ndim == 1:
            p = _frozen(p.reshape(-1, 1))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", _frozen(np.atleast_1d(self.q)))
        object.__setattr__(self, "N", _frozen(np.atleast_1d(self.N), np.int64))
        object.__setattr__(self, "costs", _frozen(np.atleast_1d(self.costs)))
        object.__setattr__(self, "n_min", int(self.n_min))
        if p.shape != (len(self.N), len(self.q)) or len(self.costs) != len(self.N):
            raise SchemaError("inconsistent problem dimensions")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise AllocationError("p must be finite and nonnegative")
        if np.any(self.N < 1) or self.n_min < 1 or self.n_min > self.N.min():
            raise BoundConflict("need 1 <= n_min <= min(N)")

    @classmethod
    def from_p(cls, p, N, costs=None, n_min: int = 1) -> "AllocationProblem":
        """Build a problem from p alone, deriving q from the stratum sizes."""
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        N = np.asarray(N, dtype=np.int64)
        q = (p / N[:, None]).sum(axis=0)
        if costs is None:
            costs = np.ones(len(N))
        return cls(p, q, N, costs, n_min)

    @property
    def H(self) -> int:
        return self.p.shape[0]

    @property
    def m(self) -> int:
        return self.p.shape[1]

    @property
    def rhs(self) -> np.ndarray:
        """Right-hand side of the CV rows once q_j is moved across: 1 + q_j."""
        return 1.0 + self.q

    @property
    def rhs_tol(self) -> np.ndarray:
        return self.rhs * (1.0 + FEAS_TOL)

    @property
    def lower(self) -> np.ndarray:
        return np.full(self.H, self.n_min, dtype=np.int64)

    @property
    def integer_costs(self) -> bool:
        return bool(np.all(self.costs == np.round(self.costs)))

    def lhs(self, n) -> np.ndarray:
        """sum_h p_hj / n_h for each variable j (before subtracting q_j)."""
        n = np.asarray(n, dtype=float)
        return (self.p / n[:, None]).sum(axis=0)

    def is_feasible(self, n) -> bool:
        return bool(np.all(self.lhs(n) <= self.rhs_tol))

    def objective(self, n) -> float:
        return float(np.dot(self.costs, np.asarray(n, dtype=float)))

    def check_bounds(self, n) -> np.ndarray:
        n = np.asarray(n)
        if n.shape != (self.H,):
            raise OutOfBounds(f"allocation has shape {n.shape}, expected ({self.H},)")
        if np.any(n != np.round(n)):
            raise OutOfBounds("allocation must be integral")
        n = n.astype(np.int64)
        if np.any(n < self.n_min) or np.any(n > self.N):
            raise OutOfBounds(f"allocation {n.tolist()} outside [{self.n_min}, N_h]")
        return n

    def allocation(self, n) -> "Allocation":
        n = self.check_bounds(n)
        cv_ratio = np.sqrt(np.maximum(self.lhs(n) - self.q, 0.0))
        return Allocation(
            n=_frozen(n, np.int64),
            objective=self.objective(n),
            feasible=self.is_feasible(n),
            achieved_cv_ratio=_frozen(cv_ratio),
        )


@dataclass(frozen=True)
class Allocation:
    """Integer allocation with feasibility metadata.

    ``achieved_cv_ratio`` is achieved cv over target cv per variable; multiply
    by the targets (see :func:`stratalloc.stats.evaluate`) for absolute cvs.
    """

    n: np.ndarray
    objective: float
    feasible: bool
    achieved_cv_ratio: np.ndarray = field(default_factory=lambda: _frozen([]))

    @property
    def total(self) -> int:
        return int(self.n.sum())


def reduce(spec: SurveySpec) -> AllocationProblem:
    """Turn a survey specification into constraint coefficients p_hj and q_j."""
    validate_survey_spec(spec)
    N = spec.N.astype(float)
    denom = spec.totals**2 * spec.cv_targets**2
    p = (N[:, None] ** 2) * spec.s2 / denom[None, :]
    q = (p / N[:, None]).sum(axis=0)
    return AllocationProblem(p, q, spec.N, spec.costs, spec.n_min)


def parse_cv(value) -> float:
    """Accept ``"5%"``, ``"0.05"`` or ``0.05`` and return a proportion."""
    if isinstance(value, str):
        s = value.strip()
        v = float(s[:-1]) / 100.0 if s.endswith("%") else float(s)
    else:
        v = float(value)
    if not math.isfinite(v) or v <= 0 or v > 1:
        raise BadTarget(f"cv target {value!r} must lie in (0, 1] (or (0%, 100%])")
    return v
