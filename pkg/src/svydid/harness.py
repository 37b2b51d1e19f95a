"""Monte Carlo driver: replication records, cell metrics and report tables."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from svydid.estimators import ESTIMATORS, fit
from svydid.results import SCHEMA_VERSION
from svydid.simdgp import ScenarioConfig, generate, scenario
from svydid.tsl import t_interval

__all__ = [
    "MODES",
    "FAILURE_CAP",
    "CellReport",
    "run_replication",
    "run_records",
    "run_cell",
    "summarize",
    "render_report",
    "default_threads",
]

MODES = ("hc1", "cluster", "design")
FAILURE_CAP = 0.01
MISSING = "—"


def default_threads() -> int:
    env = os.environ.get("SVYDID_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _config(scen, n: int, seed: int) -> ScenarioConfig:
    if isinstance(scen, ScenarioConfig):
        from dataclasses import replace

        return replace(scen, n=n, seed=seed)
    return scenario(scen, n=n, seed=seed)


def run_replication(cfg: ScenarioConfig, estimator: str, rep: int, level: float = 0.95) -> dict:
    """One replication: unweighted fit with HC1, weighted fit with cluster and design."""
    rec = {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg.name,
        "estimator": estimator,
        "n": cfg.n,
        "seed": cfg.seed,
        "rep": rep,
    }
    try:
        data, design, truth = generate(cfg, rep)
        rec["truth"] = truth
        fu = fit(data, design, estimator, weighted=False)
        fw = fit(data, design, estimator, weighted=True)
        v = {
            "hc1": fu.variance("hc1"),
            "cluster": fw.variance("cluster"),
            "design": fw.variance("design"),
        }
        rec["est_unweighted"] = fu.estimate
        rec["est_weighted"] = fw.estimate
        for m in MODES:
            est = fu.estimate if m == "hc1" else fw.estimate
            se = float(v[m].se[0])
            lo, hi = t_interval(est, se, v[m].df, level)
            rec[f"se_{m}"] = se
            rec[f"df_{m}"] = int(v[m].df)
            rec[f"cover_{m}"] = bool(lo <= truth <= hi)
        rec["deff"] = v["design"].variance / v["hc1"].variance if v["hc1"].variance > 0 else None
        rec["status"] = "ok"
    except Exception as exc:  # recorded, counted, never dropped silently
        rec["status"] = "error"
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def _chunk(args):
    cfg, estimator, reps, level = args
    return [run_replication(cfg, estimator, r, level) for r in reps]


def run_records(
    scen,
    estimator: str,
    n: int,
    reps: int,
    seed: int,
    threads: int = 1,
    level: float = 0.95,
) -> List[dict]:
    """Replication records for one cell, ordered by replication index.

    Each replication draws from its own ``(seed, rep)`` stream, so the
    records do not depend on ``threads``.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    cfg = _config(scen, n, seed)
    threads = max(1, min(int(threads), reps))
    if threads == 1:
        return _chunk((cfg, estimator, range(reps), level))
    blocks = [range(i, reps, threads) for i in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_chunk, [(cfg, estimator, b, level) for b in blocks]))
    out = [r for part in parts for r in part]
    out.sort(key=lambda r: r["rep"])
    return out


@dataclass(frozen=True)
class CellReport:
    """Metrics for one (scenario, estimator, n) cell.

    Coverage values and their Monte Carlo standard errors are percentages.
    Metrics that cannot be computed are ``None``.
    """

    scenario: str
    estimator: str
    n: int
    reps: int
    failures: int
    truth: Optional[float]
    bias_unweighted: Optional[float]
    bias_weighted: Optional[float]
    coverage: Dict[str, Optional[float]]
    coverage_mcse: Dict[str, Optional[float]]
    deff_median: Optional[float]
    rmse_unweighted: Optional[float]
    rmse_weighted: Optional[float]
    failed: bool = False
    errors: Tuple[str, ...] = field(default=())

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.scenario, self.estimator, self.n)

    def to_record(self) -> dict:
        d = asdict(self)
        d["errors"] = list(self.errors)
        d["schema_version"] = SCHEMA_VERSION
        d["kind"] = "cell"
        return d

    @classmethod
    def from_record(cls, d: dict) -> "CellReport":
        d = dict(d)
        d.pop("schema_version", None)
        d.pop("kind", None)
        d["errors"] = tuple(d.get("errors", ()))
        return cls(**d)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def summarize(records: Sequence[dict]) -> CellReport:
    """Cell metrics computed only from replication records."""
    if not records:
        raise ValueError("no records")
    first = records[0]
    key = (first["scenario"], first["estimator"], first["n"])
    for r in records:
        if (r["scenario"], r["estimator"], r["n"]) != key:
            raise ValueError("records from different cells cannot be summarized together")
    ok = [r for r in records if r.get("status") == "ok"]
    bad = [r for r in records if r.get("status") != "ok"]
    reps = len(records)
    failed = len(bad) > FAILURE_CAP * reps
    truth = ok[0]["truth"] if ok else None

    def col(name):
        return np.array([r[name] for r in ok if r.get(name) is not None], dtype=float)

    eu, ew = col("est_unweighted"), col("est_weighted")
    cov, mcse = {}, {}
    for m in MODES:
        c = col(f"cover_{m}")
        if c.size:
            p = float(c.mean())
            cov[m] = 100.0 * p
            mcse[m] = 100.0 * math.sqrt(p * (1 - p) / c.size)
        else:
            cov[m] = mcse[m] = None
    deff = col("deff")
    errors = tuple(sorted({r.get("error", "") for r in bad}))
    return CellReport(
        scenario=key[0],
        estimator=key[1],
        n=int(key[2]),
        reps=reps,
        failures=len(bad),
        truth=truth,
        bias_unweighted=_mean(eu - truth) if eu.size else None,
        bias_weighted=_mean(ew - truth) if ew.size else None,
        coverage=cov,
        coverage_mcse=mcse,
        deff_median=float(np.median(deff)) if deff.size else None,
        rmse_unweighted=float(np.sqrt(np.mean((eu - truth) ** 2))) if eu.size else None,
        rmse_weighted=float(np.sqrt(np.mean((ew - truth) ** 2))) if ew.size else None,
        failed=failed,
        errors=errors,
    )


def run_cell(
    scen,
    estimator: str,
    n: int,
    reps: int,
    seed: int,
    threads: int = 1,
    level: float = 0.95,
) -> Tuple[CellReport, List[dict]]:
    """Simulate one cell; returns the report and the replication records."""
    recs = run_records(scen, estimator, n, reps, seed, threads, level)
    return summarize(recs), recs


# ------------------------------------------------------------------ rendering

ESTIMATOR_LABELS = {
    "cs_reg": "CS (reg)",
    "cs_dr": "CS (DR)",
    "sun_abraham": "Sun-Abraham",
    "twfe": "TWFE",
}


def _fmt(x, spec):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return MISSING
    return format(x, spec)


def render_report(cells: Iterable[CellReport]) -> Tuple[str, List[str]]:
    """Fixed-width table (one row per cell, grouped by estimator) and JSON lines.

    Cells are listed in the order given; the estimator label is printed on
    the first row of each run of the same scenario and estimator.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("nothing to render")
    head1 = f"{'':<12} {'':<11} {'':>7} {'Bias':^15} {'Coverage (%)':^20} {'':>6} {'RMSE':^13} {'':>5}"
    head2 = (
        f"{'Scenario':<12} {'Estimator':<11} {'n':>7} {'Unwt':>7} {'Wtd':>7} "
        f"{'HC1':>6} {'Cluster':>7} {'Design':>6} {'DEFF':>6} {'Unwt':>6} {'Wtd':>6} {'Reps':>5}"
    )
    lines = [head1, head2, "-" * len(head2)]
    prev = None
    for c in cells:
        label = ESTIMATOR_LABELS.get(c.estimator, c.estimator)
        scen, est = (c.scenario, label) if (c.scenario, c.estimator) != prev else ("", "")
        prev = (c.scenario, c.estimator)
        row = (
            f"{scen:<12} {est:<11} {c.n:>7,} {_fmt(c.bias_unweighted, '+.3f'):>7} {_fmt(c.bias_weighted, '+.3f'):>7} "
            f"{_fmt(c.coverage.get('hc1'), '.1f'):>6} {_fmt(c.coverage.get('cluster'), '.1f'):>7} "
            f"{_fmt(c.coverage.get('design'), '.1f'):>6} {_fmt(c.deff_median, '.1f'):>6} "
            f"{_fmt(c.rmse_unweighted, '.3f'):>6} {_fmt(c.rmse_weighted, '.3f'):>6} {c.reps:>5}"
        )
        if c.failures:
            row += f"  ({c.failures} failed{'; OVER CAP' if c.failed else ''})"
        lines.append(row)
    text = "\n".join(lines) + "\n"
    jsonl = [json.dumps(c.to_record(), sort_keys=True) for c in cells]
    return text, jsonl
