"""Command-line interface: ``svydid simulate | estimate | report``.

Exit codes
----------
0  result written
2  usage error or invalid request
3  unreadable or malformed input file
4  column map does not match the input header
5  survey design problem (singleton stratum, bad weights or FPC)
6  estimation failure (separation, overlap, no treatment variation)
7  record files unusable (schema mismatch, duplicate cells)
8  output could not be written
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from svydid.csvio import ColumnError, ColumnMap, CsvError, atomic_write, dump_dataset, load_dataset
from svydid.design import DesignError
from svydid.did_if import EstimationError
from svydid.estimators import ESTIMATORS, estimate_replicate, fit
from svydid.harness import CellReport, default_threads, render_report, run_records, summarize
from svydid.regression import RegressionError
from svydid.replicate import METHODS, ReplicateWeights, make_jkn_replicates
from svydid.results import SCHEMA_VERSION, EstimationResult
from svydid.simdgp import SCENARIOS, generate, scenario
from svydid.tsl import VarianceError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_COLUMNS = 4
EXIT_DESIGN = 5
EXIT_ESTIMATION = 6
EXIT_RECORDS = 7
EXIT_OUTPUT = 8


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class RecordError(ValueError):
    """Replication record files cannot be merged."""


# ------------------------------------------------------------------ parser


def _level(s: str) -> float:
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("level must lie strictly between 0 and 1")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svydid", description="Survey-design variance for difference-in-differences")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo grid over scenarios, estimators and sample sizes")
    s.add_argument("--scenario", nargs="+", required=True, choices=sorted(SCENARIOS))
    s.add_argument("--estimator", nargs="+", default=["cs_reg"], choices=ESTIMATORS)
    s.add_argument("--n", nargs="+", type=_positive_int, default=[2000])
    s.add_argument("--reps", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, required=True, help="master seed (required)")
    s.add_argument("--threads", type=_positive_int, default=None)
    s.add_argument("--level", type=_level, default=0.95)
    s.add_argument("--records", required=True, help="replication records (JSON lines)")
    s.add_argument("--report", help="report table path (default: stdout)")
    s.add_argument("--dump-csv", help="also write replication 0 of the first cell as CSV")

    e = sub.add_parser("estimate", help="estimate on a CSV file")
    e.add_argument("input")
    e.add_argument("--columns", help="JSON column map; flags below override its entries")
    for flag in ("outcome", "time", "first-treat", "unit", "weights", "strata", "psu", "fpc", "covariates", "replicate-prefix"):
        e.add_argument(f"--{flag}")
    e.add_argument("--repeated-cross-section", action="store_true", help="rows are fresh units each period")
    e.add_argument("--nest", action="store_true", help="PSU labels are reused across strata")
    e.add_argument("--estimator", default="cs", choices=("cs",) + ESTIMATORS)
    e.add_argument("--method", default="reg", choices=("reg", "dr"), help="CS estimation method")
    e.add_argument("--mode", default="design", choices=("hc1", "cluster", "design", "replicate"))
    e.add_argument("--level", type=_level, default=0.95)
    e.add_argument("--replicate-method", choices=METHODS)
    e.add_argument("--fay-rho", type=float)
    e.add_argument("--jkn", action="store_true", help="generate delete-one-PSU jackknife replicates from the design")
    e.add_argument("--refit", action="store_true", help="refit under every replicate instead of reweighting")
    e.add_argument("--threads", type=_positive_int, default=None)
    e.add_argument("--ladder", action="store_true", help="four-specification table")
    e.add_argument("--output", required=True, help="result records (JSON lines)")

    r = sub.add_parser("report", help="merge replication record files into one table")
    r.add_argument("records", nargs="+")
    r.add_argument("--output", help="report table path (default: stdout)")
    r.add_argument("--cells", help="also write cell summaries as JSON lines")
    return p


# ---------------------------------------------------------------- simulate


def _write(path: str, text: str) -> None:
    try:
        atomic_write(path, text)
    except OSError as exc:
        raise CliError(EXIT_OUTPUT, f"cannot write {path}: {exc}") from exc


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True, allow_nan=False) + "\n" for r in records)


def _grid(args) -> List[Tuple[str, str, int]]:
    scen = sorted(set(args.scenario))
    est = sorted(set(args.estimator))
    ns = sorted(set(args.n))
    return [(s, e, n) for s in scen for e in est for n in ns]


def cmd_simulate(args) -> int:
    threads = args.threads or default_threads()
    grid = _grid(args)
    for s, _, n in grid:
        try:
            scenario(s, n=n)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"invalid grid cell ({s}, n={n}): {exc}") from exc
    all_recs: List[dict] = []
    cells: List[CellReport] = []
    for s, est, n in grid:
        recs = run_records(s, est, n, args.reps, args.seed, threads, args.level)
        for r in recs:
            r["kind"] = "replication"
        all_recs.extend(recs)
        cell = summarize(recs)
        cells.append(cell)
        if cell.failed:
            print(
                f"warning: {s}/{est}/n={n}: {cell.failures} of {cell.reps} replications failed (over the cap)",
                file=sys.stderr,
            )
    text, _ = render_report(cells)
    if args.dump_csv:
        s, _, n = grid[0]
        data, design, _ = generate(scenario(s, n=n, seed=args.seed), 0)
        try:
            dump_dataset(data, design, args.dump_csv)
        except OSError as exc:
            raise CliError(EXIT_OUTPUT, f"cannot write {args.dump_csv}: {exc}") from exc
    _write(args.records, _jsonl(all_recs))
    if args.report:
        _write(args.report, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ report


def read_records(paths: Sequence[str]) -> Dict[Tuple[str, str, int], List[dict]]:
    """Group replication records by cell; a cell may come from one file only."""
    groups: Dict[Tuple[str, str, int], List[dict]] = {}
    origin: Dict[Tuple[str, str, int], str] = {}
    for path in paths:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise CliError(EXIT_INPUT, f"cannot read {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: not a JSON record ({exc.msg})") from exc
            if rec.get("schema_version") != SCHEMA_VERSION:
                raise RecordError(
                    f"{path}:{lineno}: schema_version {rec.get('schema_version')!r}, expected {SCHEMA_VERSION}"
                )
            if rec.get("kind", "replication") != "replication":
                continue
            try:
                key = (str(rec["scenario"]), str(rec["estimator"]), int(rec["n"]))
            except KeyError as exc:
                raise RecordError(f"{path}:{lineno}: record lacks {exc}") from exc
            if key in origin and origin[key] != path:
                raise RecordError(
                    f"duplicate cell scenario={key[0]} estimator={key[1]} n={key[2]} in {origin[key]} and {path}"
                )
            origin[key] = path
            groups.setdefault(key, []).append(rec)
    for key, recs in groups.items():
        seen = set()
        for r in recs:
            tag = (r.get("seed"), r.get("rep"))
            if tag in seen:
                raise RecordError(
                    f"duplicate replication rep={tag[1]} in cell scenario={key[0]} estimator={key[1]} n={key[2]}"
                )
            seen.add(tag)
    if not groups:
        raise RecordError("no replication records found")
    return groups


def cmd_report(args) -> int:
    groups = read_records(args.records)
    cells = [summarize(sorted(groups[k], key=lambda r: r["rep"])) for k in sorted(groups)]
    text, jsonl = render_report(cells)
    if args.cells:
        _write(args.cells, "".join(line + "\n" for line in jsonl))
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- estimate


@dataclass(frozen=True)
class RunConfig:
    """Resolved options of one ``estimate`` run."""

    input: str
    columns: ColumnMap
    panel: bool
    nest: bool
    estimator: str
    mode: str
    level: float
    output: str
    ladder: bool = False
    replicate_method: Optional[str] = None
    fay_rho: Optional[float] = None
    jkn: bool = False
    refit: bool = False
    threads: int = 1


def _run_config(args) -> RunConfig:
    base = {}
    if args.columns:
        try:
            with open(args.columns, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_INPUT, f"cannot read column map {args.columns}: {exc}") from exc
    for flag in ("outcome", "time", "first_treat", "unit", "weights", "strata", "psu", "fpc", "covariates", "replicate_prefix"):
        v = getattr(args, flag)
        if v is not None:
            base[flag] = v
    try:
        cmap = ColumnMap.from_mapping(base)
    except ColumnError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    estimator = f"cs_{args.method}" if args.estimator == "cs" else args.estimator
    if args.mode == "replicate" and not (args.jkn or (cmap.replicate_prefix and args.replicate_method)):
        raise CliError(
            EXIT_USAGE,
            "mode replicate needs --jkn, or --replicate-prefix together with --replicate-method",
        )
    return RunConfig(
        input=args.input,
        columns=cmap,
        panel=not args.repeated_cross_section,
        nest=args.nest,
        estimator=estimator,
        mode=args.mode,
        level=args.level,
        output=args.output,
        ladder=args.ladder,
        replicate_method=args.replicate_method,
        fay_rho=args.fay_rho,
        jkn=args.jkn,
        refit=args.refit,
        threads=args.threads or default_threads(),
    )


def _replicates(cfg: RunConfig, loaded) -> ReplicateWeights:
    if cfg.jkn:
        return make_jkn_replicates(loaded.design)
    if cfg.replicate_method == "jkn":
        # supplied JKn columns would also need a replicate-to-stratum map
        raise CliError(EXIT_USAGE, "use --jkn to build JKn replicates; supplied columns need brr, fay, jk1 or sdr")
    return ReplicateWeights(loaded.replicate_weights, cfg.replicate_method, rho=cfg.fay_rho)


def _hc1_variance(data, design, estimator):
    try:
        return fit(data, design, estimator, weighted=False).variance("hc1").variance
    except (EstimationError, RegressionError, VarianceError, DesignError):
        return None


def _single(cfg: RunConfig, loaded) -> EstimationResult:
    data, design = loaded.data, loaded.design
    if cfg.mode == "replicate":
        res = estimate_replicate(
            data, design, cfg.estimator, _replicates(cfg, loaded), refit=cfg.refit, level=cfg.level, threads=cfg.threads
        )
    else:
        f = fit(data, design, cfg.estimator, weighted=cfg.mode != "hc1")
        res = f.result(cfg.mode, cfg.level)
    if cfg.mode != "hc1":
        v0 = _hc1_variance(data, design, cfg.estimator)
        if v0:
            res = replace(res, deff=res.variance.variance / v0)
    return res


LADDER = (
    ("naive", "unweighted, no design"),
    ("weights_only", "weights, no clustering"),
    ("full_design", "weights, strata, PSUs"),
    ("full_design_covariates", "full design + covariates"),
)


def _ladder(cfg: RunConfig, loaded) -> List[Optional[EstimationResult]]:
    data, design = loaded.data, loaded.design
    est = cfg.estimator
    out: List[Optional[EstimationResult]] = []
    out.append(fit(data, design, est, weighted=False).result("hc1", cfg.level))
    fw = fit(data, design, est, weighted=True)
    out.append(fw.result("hc1", cfg.level))
    out.append(fw.result("design", cfg.level))
    if data.covariates is not None:
        out.append(fit(data, design, "cs_dr", weighted=True).result("design", cfg.level))
    else:
        out.append(None)
    return out


def _fmt(x, spec):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "—"
    return format(x, spec)


def ladder_table(rows) -> str:
    head = f"{'Specification':<28} {'ATT':>8} {'SE':>8} {'95% CI':>20} {'df':>7}"
    lines = [head, "-" * len(head)]
    for (_, label), r in zip(LADDER, rows):
        if r is None:
            lines.append(f"{label:<28} {'—':>8} {'—':>8} {'—':>20} {'—':>7}")
            continue
        ci = f"[{r.ci[0]:.3f}, {r.ci[1]:.3f}]"
        lines.append(f"{label:<28} {r.estimate:>8.3f} {r.se:>8.3f} {ci:>20} {r.df:>7}")
    return "\n".join(lines) + "\n"


def cmd_estimate(args) -> int:
    cfg = _run_config(args)
    loaded = load_dataset(cfg.input, cfg.columns, panel=cfg.panel, nest=cfg.nest)
    if cfg.ladder:
        rows = _ladder(cfg, loaded)
        recs = []
        for (key, label), r in zip(LADDER, rows):
            rec = {"schema_version": SCHEMA_VERSION, "specification": key, "label": label}
            if r is None:
                rec["skipped"] = "no covariates mapped"
            else:
                rec.update(r.to_record())
            recs.append(rec)
        _write(cfg.output, _jsonl(recs))
        sys.stdout.write(ladder_table(rows))
        return EXIT_OK
    res = _single(cfg, loaded)
    _write(cfg.output, _jsonl([res.to_record()]))
    lo, hi = res.ci
    sys.stdout.write(
        f"{res.estimator} ATT {res.estimate:.4f}  SE {res.se:.4f}  "
        f"{int(round(100 * res.level))}% CI [{lo:.4f}, {hi:.4f}]  df {res.df}  mode {res.mode}\n"
    )
    return EXIT_OK


# -------------------------------------------------------------------- main


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, ColumnError):
        return EXIT_COLUMNS
    if isinstance(exc, CsvError):
        return EXIT_INPUT
    if isinstance(exc, RecordError):
        return EXIT_RECORDS
    if isinstance(exc, (EstimationError, RegressionError, VarianceError)):
        return EXIT_ESTIMATION
    if isinstance(exc, DesignError):
        return EXIT_DESIGN
    return -1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"simulate": cmd_simulate, "estimate": cmd_estimate, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except (CliError, ColumnError, CsvError, RecordError, EstimationError, RegressionError, VarianceError, DesignError) as exc:
        print(f"svydid {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
