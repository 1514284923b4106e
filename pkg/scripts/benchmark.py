"""Desk-scale timing: H=30, m=5, N_h in [1000, 5000], one worker.

    python scripts/benchmark.py --seeds 20 --cv 1 --time-limit 60
"""

from __future__ import annotations

import argparse
import io
import time
from dataclasses import dataclass

import numpy as np

from stratalloc.formulation import build_bip, export_lp
from stratalloc.model import SurveySpec, reduce
from stratalloc.solver import solve_bnb, solve_relaxation
from stratalloc.stats import summarize
from stratalloc.synth import synthetic_frame


@dataclass(frozen=True)
class Config:
    H: int = 30
    m: int = 5
    sizes: tuple[int, int] = (1000, 5000)
    cv_pct: float = 1.0
    seeds: int = 10
    time_limit: float = 60.0
    workers: int = 1


def problem_for(cfg: Config, seed: int):
    frame = synthetic_frame(cfg.H, cfg.m, cfg.sizes, 1.0, seed)
    summaries, totals = summarize(frame)
    return reduce(SurveySpec(tuple(summaries), totals, np.full(cfg.m, cfg.cv_pct / 100)))


def run(cfg: Config) -> None:
    print(f"{'seed':>4} {'N':>7} {'relax':>12} {'bip':>8} {'proved':>6} {'nodes':>7} {'time s':>7}")
    solved = 0
    for seed in range(cfg.seeds):
        prob = problem_for(cfg, seed)
        rel = solve_relaxation(prob)
        rep = solve_bnb(prob, time_limit=cfg.time_limit, workers=cfg.workers)
        solved += rep.proved_optimal
        print(f"{seed:4d} {int(prob.N.sum()):7d} {rel.lower_bound:12.3f} {rep.allocation.objective:8.0f} "
              f"{'yes' if rep.proved_optimal else 'no':>6} {rep.nodes_explored:7d} {rep.wall_time:7.2f}")
    print(f"\nproved optimal within {cfg.time_limit:g} s: {solved}/{cfg.seeds}")

    prob = problem_for(Config(H=3, m=3, sizes=(6000, 8000), cv_pct=5.0), 0)
    t0 = time.perf_counter()
    buf = io.StringIO()
    export_lp(build_bip(prob), buf)
    print(f"LP export, {int(prob.N.sum())} columns: {time.perf_counter() - t0:.2f} s, {len(buf.getvalue()) / 1e6:.1f} MB")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=Config.seeds)
    ap.add_argument("--cv", type=float, default=Config.cv_pct, help="target in percent for every variable")
    ap.add_argument("--time-limit", type=float, default=Config.time_limit)
    ap.add_argument("--workers", type=int, default=Config.workers)
    a = ap.parse_args()
    run(Config(cv_pct=a.cv, seeds=a.seeds, time_limit=a.time_limit, workers=a.workers))


if __name__ == "__main__":
    main()
