"""Seeded synthetic populations (lognormal mixtures with per-stratum scale shifts)."""

from __future__ import annotations

import csv
from typing import TextIO

import numpy as np

from .model import PopulationFrame

# Two-component lognormal mixture shared by every stratum before the shift.
_MIX_WEIGHT = 0.8
_SIGMA = (0.5, 1.0)
_OFFSET = (0.0, 1.0)


def stratum_sizes(H: int, sizes: tuple[int, int], rng: np.random.Generator, total: int | None = None) -> np.ndarray:
    lo, hi = sizes
    if H < 1 or lo < 1 or hi < lo:
        raise ValueError(f"need H >= 1 and 1 <= lo <= hi, got H={H}, sizes={sizes}")
    N = rng.integers(lo, hi + 1, size=H)
    if total is None:
        return N
    if total < H:
        raise ValueError("total must be at least H")
    # largest-remainder rescale so the sizes add up exactly
    share = N / N.sum() * total
    out = np.maximum(np.floor(share).astype(np.int64), 1)
    rem = total - out.sum()
    order = np.argsort(-(share - np.floor(share)), kind="stable")
    i = 0
    while rem != 0:
        h = order[i % H]
        if rem > 0:
            out[h] += 1
            rem -= 1
        elif out[h] > 1:
            out[h] -= 1
            rem += 1
        i += 1
    return out


def synthetic_frame(
    H: int,
    m: int,
    sizes: tuple[int, int] = (20, 200),
    skew: float = 1.0,
    seed: int = 0,
    total: int | None = None,
) -> PopulationFrame:
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    N = stratum_sizes(H, sizes, rng, total)
    shift = skew * (rng.standard_normal((H, 1)) + 0.5 * rng.standard_normal((H, m)))
    ids, labels, blocks = [], [], []
    start = 0
    for h in range(H):
        nh = int(N[h])
        heavy = rng.random((nh, m)) >= _MIX_WEIGHT
        z = rng.standard_normal((nh, m))
        logy = np.where(heavy, _OFFSET[1] + _SIGMA[1] * z, _OFFSET[0] + _SIGMA[0] * z)
        blocks.append(np.exp(logy + shift[h]))
        ids.extend(f"u{start + i + 1:07d}" for i in range(nh))
        labels.extend([f"S{h + 1}"] * nh)
        start += nh
    return PopulationFrame(tuple(ids), tuple(labels), np.vstack(blocks))


def write_microdata(frame: PopulationFrame, sink: TextIO) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["unit_id", "stratum"] + [f"y{j + 1}" for j in range(frame.m)])
    for uid, lab, row in zip(frame.unit_ids, frame.labels, frame.y):
        w.writerow([uid, lab] + [repr(float(v)) for v in row])


def gen_synthetic(
    sink: TextIO,
    H: int,
    m: int,
    sizes: tuple[int, int] = (20, 200),
    skew: float = 1.0,
    seed: int = 0,
    total: int | None = None,
) -> PopulationFrame:
    frame = synthetic_frame(H, m, sizes, skew, seed, total)
    write_microdata(frame, sink)
    return frame
