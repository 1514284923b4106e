"""Command line front end: ingest CSV data, solve, compare methods, export LP files.

Exit codes: 0 success, 1 unexpected solver failure, 2 invalid or infeasible
inputs, 3 limit reached before optimality was proved, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from typing import Sequence, TextIO

import numpy as np

from . import __version__
from .formulation import SinkError, build_bip, export_lp
from .model import (
    AllocationError,
    AllocationProblem,
    PopulationFrame,
    SchemaError,
    StratumSummary,
    SurveySpec,
    parse_cv,
    reduce,
    validate_survey_spec,
)
from .solver import (
    SolveReport,
    TooLarge,
    brute_force,
    default_workers,
    enumeration_size,
    solve_bethel,
    solve_bnb,
)
from .stats import evaluate, summarize
from .synth import gen_synthetic

log = logging.getLogger("stratalloc")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_LIMIT, EXIT_IO = 0, 1, 2, 3, 4
BRUTE_CAP = 10**6
TOTAL_ROW = "TOTAL"


class ParseError(AllocationError):
    pass


@dataclass
class RunConfig:
    input_path: str | None = None
    input_kind: str = "microdata"
    cv_targets: list[float] = field(default_factory=list)
    costs: list[float] | None = None
    n_min: int = 1
    method: str = "bip"
    gap_tol: float = 0.0
    time_limit: float | None = None
    node_limit: int | None = None
    seed: int = 0
    output: str = "text"
    out_path: str | None = None
    totals_path: str | None = None
    variance_divisor: str = "n_minus_1"
    timing: bool = True


# -- ingestion ---------------------------------------------------------------


def _read_rows(path: str) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        rows = [(reader.line_num, row) for row in reader]
    return header, rows


def _num(path: str, line: int, col: str, raw: str | None) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"{path}:{line}: column {col!r} has non-numeric value {raw!r}") from None


def _numbered(header: Sequence[str], prefix: str) -> list[str]:
    cols = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
    return sorted(cols, key=lambda c: int(c[len(prefix):]))


def read_microdata(path: str) -> PopulationFrame:
    header, rows = _read_rows(path)
    ycols = _numbered(header, "y")
    missing = [c for c in ("unit_id", "stratum") if c not in header]
    if not ycols:
        missing.append("y1..ym")
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
    ids, labels, ys = [], [], []
    for line, row in rows:
        ids.append(row["unit_id"])
        labels.append(row["stratum"])
        ys.append([_num(path, line, c, row[c]) for c in ycols])
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return PopulationFrame(tuple(ids), tuple(labels), np.array(ys, dtype=float))


def read_summaries(path: str, totals_path: str | None = None) -> tuple[list[StratumSummary], np.ndarray]:
    """Summary CSV: ``stratum,N,S2_1..S2_m`` plus totals.

    Totals come from a ``TOTAL`` row carrying ``Y_1..Y_m``, else from a sidecar
    file with a single ``Y_1..Y_m`` row, else from per-stratum ``Y_j`` columns.
    """
    header, rows = _read_rows(path)
    s2cols = _numbered(header, "S2_")
    ycols = _numbered(header, "Y_")
    missing = [c for c in ("stratum", "N") if c not in header]
    if not s2cols:
        missing.append("S2_1..S2_m")
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
    summaries, stratum_totals, total_row = [], [], None
    partial_totals = False
    for line, row in rows:
        if row["stratum"] == TOTAL_ROW:
            if not ycols:
                raise SchemaError(f"{path}:{line}: TOTAL row needs Y_1..Y_m columns")
            total_row = np.array([_num(path, line, c, row[c]) for c in ycols])
            continue
        n = _num(path, line, "N", row["N"])
        if n != int(n):
            raise ParseError(f"{path}:{line}: N must be an integer, got {row['N']!r}")
        s2 = [_num(path, line, c, row[c]) for c in s2cols]
        summaries.append(StratumSummary(row["stratum"], int(n), np.array(s2)))
        if ycols and all((row[c] or "").strip() for c in ycols):
            stratum_totals.append([_num(path, line, c, row[c]) for c in ycols])
        elif ycols:
            partial_totals = True
    if totals_path is not None:
        theader, trows = _read_rows(totals_path)
        tcols = _numbered(theader, "Y_")
        if not tcols or len(trows) != 1:
            raise SchemaError(f"{totals_path}: expected one row with columns Y_1..Y_m")
        line, row = trows[0]
        totals = np.array([_num(totals_path, line, c, row[c]) for c in tcols])
    elif total_row is not None:
        totals = total_row
    elif stratum_totals and not partial_totals:
        totals = np.array(stratum_totals).sum(axis=0)
    else:
        raise SchemaError(f"{path}: no population totals (TOTAL row, Y_j columns or --totals file)")
    if len(totals) != len(s2cols):
        raise SchemaError(f"{path}: {len(totals)} totals for {len(s2cols)} variables")
    return summaries, totals


def write_summaries(summaries: Sequence[StratumSummary], totals, sink: TextIO) -> None:
    m = len(totals)
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["stratum", "N"] + [f"mean_{j + 1}" for j in range(m)] + [f"S2_{j + 1}" for j in range(m)]
               + [f"Y_{j + 1}" for j in range(m)])
    for s in summaries:
        mean = s.mean if s.mean is not None else np.full(m, math.nan)
        w.writerow([s.label, s.N] + [repr(float(v)) for v in mean] + [repr(float(v)) for v in s.s2]
                   + [repr(float(v) * s.N) for v in mean])
    w.writerow([TOTAL_ROW, sum(s.N for s in summaries)] + [""] * (2 * m) + [repr(float(v)) for v in totals])


def _expand(values: Sequence[float], size: int, what: str) -> list[float]:
    if len(values) == 1 and size > 1:
        return list(values) * size
    if len(values) != size:
        raise SchemaError(f"{len(values)} {what} given, expected {size}")
    return list(values)


def ingest(config: RunConfig) -> SurveySpec:
    if config.input_path is None:
        raise SchemaError("no --input given")
    if config.input_kind == "microdata":
        frame = read_microdata(config.input_path)
        summaries, totals = summarize(frame, config.variance_divisor)
    elif config.input_kind == "summaries":
        summaries, totals = read_summaries(config.input_path, config.totals_path)
    else:
        raise SchemaError(f"unknown input kind {config.input_kind!r}")
    if not config.cv_targets:
        raise SchemaError("no cv targets given (--cv)")
    cv = _expand(config.cv_targets, len(totals), "cv targets")
    costs = None if config.costs is None else _expand(config.costs, len(summaries), "costs")
    spec = SurveySpec(tuple(summaries), totals, np.array(cv), None if costs is None else np.array(costs), config.n_min)
    return validate_survey_spec(spec)


# -- reporting ---------------------------------------------------------------


def _run_method(method: str, problem: AllocationProblem, config: RunConfig) -> SolveReport | str:
    if method == "bip":
        return solve_bnb(
            problem,
            gap_tol=config.gap_tol,
            time_limit=config.time_limit,
            node_limit=config.node_limit,
            workers=default_workers(),
        )
    if method == "bethel":
        return solve_bethel(problem)
    if method == "brute":
        size = enumeration_size(problem)
        if size > BRUTE_CAP:
            return f"brute: skipped ({size} allocations exceed the enumeration cap {BRUTE_CAP})"
        return brute_force(problem, BRUTE_CAP)
    raise SchemaError(f"unknown method {method!r}")


def _row(report: SolveReport, problem, spec, base_n: int | None, timing: bool) -> dict:
    ev = evaluate(problem, spec, report.allocation.n)
    d = report.to_dict()
    if not timing:
        d["wall_time"] = 0.0
    d["target_cv_pct"] = [round(100 * float(c), 10) for c in spec.cv_targets]
    d["achieved_cv_pct"] = [100 * float(c) for c in ev.cv]
    d["delta_n"] = None if base_n is None else report.allocation.total - base_n
    return d


def _fmt_targets(pcts) -> str:
    vals = {f"{v:.2f}" for v in pcts}
    return vals.pop() if len(vals) == 1 else "/".join(f"{v:.2f}" for v in pcts)


def render(rows: list[dict], notes: list[str], spec: SurveySpec, fmt: str, compare: bool, out: TextIO) -> None:
    m = spec.m
    if fmt == "json":
        doc = {
            "instance": {
                "H": spec.H,
                "m": m,
                "N": spec.N.tolist(),
                "totals": spec.totals.tolist(),
                "cv_targets": spec.cv_targets.tolist(),
                "costs": spec.costs.tolist(),
                "n_min": spec.n_min,
            },
            "results": rows,
            "notes": notes,
        }
        json.dump(doc, out, indent=2, sort_keys=True)
        out.write("\n")
        return
    if fmt == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["method", "n", "objective", "delta_n", "proved_optimal", "lower_bound", "wall_time"]
                   + [f"target_cv_pct_{j + 1}" for j in range(m)] + [f"cv_pct_{j + 1}" for j in range(m)])
        for r in rows:
            w.writerow([r["label"], r["total_n"], repr(r["objective"]),
                        "" if r["delta_n"] is None else r["delta_n"], r["proved_optimal"],
                        repr(r["lower_bound"]), repr(r["wall_time"])]
                       + [f"{v:.2f}" for v in r["target_cv_pct"]] + [f"{v:.2f}" for v in r["achieved_cv_pct"]])
        return
    cols = ["method", "n"] + (["Δn"] if compare else []) + ["cv target %"] + [f"j={j + 1}" for j in range(m)] + [
        "proved", "lower bound", "time (s)"]
    table = []
    for r in rows:
        proved = "yes" if r["proved_optimal"] else ("-" if r["method"] == "bethel" else "no")
        bound = "-" if r["lower_bound"] is None or (isinstance(r["lower_bound"], float) and math.isnan(r["lower_bound"])) else f"{r['lower_bound']:.4f}"
        cells = [r["label"], str(r["total_n"])]
        if compare:
            cells.append("" if r["delta_n"] is None else f"{r['delta_n']:+d}")
        cells.append(_fmt_targets(r["target_cv_pct"]))
        cells += [f"{v:.2f}" for v in r["achieved_cv_pct"]]
        cells += [proved, bound, f"{r['wall_time']:.3f}"]
        table.append(cells)
    widths = [max(len(c), *(len(t[i]) for t in table)) if table else len(c) for i, c in enumerate(cols)]
    line = lambda cells: "  ".join(c.ljust(wd) if i == 0 else c.rjust(wd) for i, (c, wd) in enumerate(zip(cells, widths)))  # noqa: E731
    out.write(line(cols).rstrip() + "\n")
    for t in table:
        out.write(line(t).rstrip() + "\n")
    for note in notes:
        out.write(note + "\n")


def run(config: RunConfig, out: TextIO) -> int:
    spec = ingest(config)
    problem = reduce(spec)
    compare = config.method == "all"
    methods = ["bip", "bethel", "brute"] if compare else [config.method]
    rows, notes, limited = [], [], False
    base_n = None
    for method in methods:
        rep = _run_method(method, problem, config)
        if isinstance(rep, str):
            if not compare:
                raise TooLarge(rep)
            notes.append(rep)
            continue
        if method == "bip":
            base_n = rep.allocation.total
            limited = not rep.proved_optimal
        rows.append(_row(rep, problem, spec, base_n if compare else None, config.timing))
    render(rows, notes, spec, config.output, compare, out)
    return EXIT_LIMIT if limited else EXIT_OK


# -- argument handling -------------------------------------------------------


def _split_list(values: Sequence[str] | None) -> list[str]:
    out = []
    for v in values or []:
        out.extend(x for x in v.split(",") if x.strip())
    return out


def read_config_file(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys use flag spelling."""
    conf = {}
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{i}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            conf[k.replace("_", "-")] = v
    return conf


_FORMATS = {"text": "text", "text_table": "text", "table": "text", "csv": "csv", "json": "json"}


def _config_from(args: argparse.Namespace) -> RunConfig:
    file_conf = read_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(name, flag=None):
        val = getattr(args, name, None)
        if val not in (None, []):
            return val
        return file_conf.get(flag or name.replace("_", "-"))

    cv_raw = pick("cv")
    cv_raw = _split_list(cv_raw if isinstance(cv_raw, list) else [cv_raw]) if cv_raw else []
    cost_raw = pick("cost")
    cost_raw = _split_list(cost_raw if isinstance(cost_raw, list) else [cost_raw]) if cost_raw else None
    fmt = pick("format") or "text"
    if fmt not in _FORMATS:
        raise SchemaError(f"unknown output format {fmt!r}")
    tl = pick("time_limit")
    nodes = pick("nodes")
    return RunConfig(
        input_path=pick("input"),
        input_kind=pick("kind") or "microdata",
        cv_targets=[parse_cv(c) for c in cv_raw],
        costs=[float(c) for c in cost_raw] if cost_raw else None,
        n_min=int(pick("nmin") or 1),
        method=pick("method") or "bip",
        gap_tol=float(pick("gap") or 0.0),
        time_limit=None if tl is None else float(tl),
        node_limit=None if nodes is None else int(nodes),
        seed=int(pick("seed") or 0),
        output=_FORMATS[fmt],
        out_path=pick("out"),
        totals_path=pick("totals"),
        variance_divisor=pick("variance_divisor") or "n_minus_1",
        timing=not bool(getattr(args, "no_timing", False)),
    )


def _add_input_flags(p: argparse.ArgumentParser, solving: bool = True) -> None:
    p.add_argument("--input", help="CSV file (microdata or stratum summaries)")
    p.add_argument("--kind", choices=["microdata", "summaries"], help="input layout (default microdata)")
    p.add_argument("--totals", help="sidecar CSV with Y_1..Y_m for summary input")
    p.add_argument("--variance-divisor", choices=["n_minus_1", "n"], help="stratum variance divisor")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--out", help="output path (default stdout)")
    if solving:
        p.add_argument("--cv", action="append", help='cv targets, e.g. "5%%" or 0.05; repeat or comma-separate')
        p.add_argument("--cost", action="append", help="per-stratum unit costs; repeat or comma-separate")
        p.add_argument("--nmin", type=int, help="minimum sample size per stratum (default 1)")


def _add_solve_flags(p: argparse.ArgumentParser, method: bool = True) -> None:
    if method:
        p.add_argument("--method", choices=["bip", "bethel", "brute", "all"], help="default bip")
    p.add_argument("--gap", type=float, help="relative optimality gap (non-integer costs)")
    p.add_argument("--time-limit", type=float, help="seconds")
    p.add_argument("--nodes", type=int, help="branch-and-bound node limit")
    p.add_argument("--seed", type=int, help="unused by solvers; recorded for reproducibility")
    p.add_argument("--format", help="text | csv | json")
    p.add_argument("--no-timing", action="store_true", help="report zero wall time (byte-stable output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratalloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="stratum summaries from microdata")
    _add_input_flags(p, solving=False)

    p = sub.add_parser("solve", help="solve with one method")
    _add_input_flags(p)
    _add_solve_flags(p)

    p = sub.add_parser("compare", help="bip vs bethel (vs brute force when small)")
    _add_input_flags(p)
    _add_solve_flags(p, method=False)

    p = sub.add_parser("export-lp", help="write the binary model in CPLEX LP format")
    _add_input_flags(p)

    p = sub.add_parser("gen", help="write a seeded synthetic microdata population")
    p.add_argument("--strata", "--H", dest="H", type=int, required=True)
    p.add_argument("--variables", "--m", dest="m", type=int, required=True)
    p.add_argument("--sizes", default="20:200", help="lo:hi stratum sizes (inclusive)")
    p.add_argument("--total", type=int, help="rescale sizes to this population size")
    p.add_argument("--skew", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default stdout)")
    return parser


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline="\n"), True


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "gen":
        lo, _, hi = args.sizes.partition(":")
        sizes = (int(lo), int(hi or lo))
        out, close = _open_out(args.out)
        try:
            gen_synthetic(out, args.H, args.m, sizes, args.skew, args.seed, args.total)
        finally:
            if close:
                out.close()
        return EXIT_OK

    config = _config_from(args)
    if args.command == "summarize":
        if config.input_path is None:
            raise SchemaError("no --input given")
        frame = read_microdata(config.input_path)
        summaries, totals = summarize(frame, config.variance_divisor)
        out, close = _open_out(config.out_path)
        try:
            write_summaries(summaries, totals, out)
        finally:
            if close:
                out.close()
        return EXIT_OK
    if args.command == "export-lp":
        spec = ingest(config)
        model = build_bip(reduce(spec))
        out, close = _open_out(config.out_path)
        try:
            export_lp(model, out)
        finally:
            if close:
                out.close()
        return EXIT_OK
    if args.command == "compare":
        config = replace(config, method="all")
    spec_out, close = _open_out(config.out_path)
    try:
        return run(config, spec_out)
    finally:
        if close:
            spec_out.close()


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (OSError, SinkError) as exc:
        print(f"stratalloc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TooLarge as exc:
        print(f"stratalloc: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AllocationError, ValueError) as exc:
        print(f"stratalloc: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("solver failure")
        print(f"stratalloc: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
