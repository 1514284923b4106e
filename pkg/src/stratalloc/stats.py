"""Stratum summaries and the variance / cv of the stratified total estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .model import (
    AllocationProblem,
    OutOfBounds,
    PopulationFrame,
    StratumSummary,
    SurveySpec,
)

VarianceDivisor = Literal["n_minus_1", "n"]


@dataclass(frozen=True)
class Evaluation:
    variance_of_total: np.ndarray
    cv: np.ndarray
    constraint_lhs: np.ndarray

    def meets(self, cv_targets, tol: float = 1e-9) -> np.ndarray:
        return self.cv <= np.asarray(cv_targets) * (1.0 + tol)


def summarize(
    frame: PopulationFrame, variance_divisor: VarianceDivisor = "n_minus_1"
) -> tuple[list[StratumSummary], np.ndarray]:
    """Per-stratum size, mean and variance plus the population totals.

    Strata are returned in order of first appearance of their label.
    Singleton strata get zero variance.
    """
    if variance_divisor not in ("n_minus_1", "n"):
        raise ValueError(f"unknown variance_divisor {variance_divisor!r}")
    order: dict[str, list[int]] = {}
    for i, lab in enumerate(frame.labels):
        order.setdefault(lab, []).append(i)

    summaries = []
    for lab, rows in order.items():
        y = frame.y[rows]
        nh = len(rows)
        mean = y.mean(axis=0)
        ss = ((y - mean) ** 2).sum(axis=0)
        if nh == 1:
            s2 = np.zeros(frame.m)
        elif variance_divisor == "n_minus_1":
            s2 = ss / (nh - 1)
        else:
            s2 = ss / nh
        summaries.append(StratumSummary(lab, nh, s2, mean))
    return summaries, frame.y.sum(axis=0)


def _check_n(N: np.ndarray, n) -> np.ndarray:
    n = np.asarray(n)
    if n.shape != N.shape:
        raise OutOfBounds(f"allocation has {n.size} entries for {N.size} strata")
    if np.any(n != np.round(n)) or np.any(n < 1) or np.any(n > N):
        raise OutOfBounds(f"allocation {n.tolist()} outside [1, N_h]")
    return n.astype(float)


def variance_of_total(spec: SurveySpec, n) -> np.ndarray:
    """V_j = sum_h N_h^2 S_hj^2 / n_h * (1 - n_h / N_h)."""
    N = spec.N.astype(float)
    n = _check_n(spec.N, n)
    fpc = 1.0 - n / N
    return ((N**2)[:, None] * spec.s2 / n[:, None] * fpc[:, None]).sum(axis=0)


def evaluate(problem: AllocationProblem, spec: SurveySpec, n) -> Evaluation:
    n = _check_n(problem.N, n)
    v = variance_of_total(spec, n)
    cv = np.sqrt(v) / np.abs(spec.totals)
    lhs = problem.lhs(n) - problem.q
    return Evaluation(variance_of_total=v, cv=cv, constraint_lhs=lhs)
