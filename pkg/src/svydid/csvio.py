"""CSV ingestion with a column map, dataset dumps, and atomic file writes."""

from __future__ import annotations

import json
import os
import tempfile
import warnings
from dataclasses import dataclass, fields
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from svydid.design import NEVER, PanelDataset, SurveyDesign

__all__ = [
    "CsvError",
    "ColumnError",
    "ColumnMap",
    "LoadedData",
    "read_table",
    "load_dataset",
    "dump_dataset",
    "atomic_write",
]


class CsvError(ValueError):
    """The file could not be read as a comma-separated table."""


class ColumnError(KeyError):
    """A mapped column is missing from the file header."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing column"


@dataclass(frozen=True)
class ColumnMap:
    """Which header names hold which variables.

    ``fpc`` values at most 1 are read as sampling fractions, larger values
    as population PSU counts. Replicate weight columns are all columns whose
    name starts with ``replicate_prefix``, in header order.
    """

    outcome: str
    time: str
    first_treat: str
    unit: Optional[str] = None
    weights: Optional[str] = None
    strata: Optional[str] = None
    psu: Optional[str] = None
    fpc: Optional[str] = None
    covariates: Tuple[str, ...] = ()
    replicate_prefix: Optional[str] = None

    @classmethod
    def from_mapping(cls, m: Mapping) -> "ColumnMap":
        known = {f.name for f in fields(cls)}
        extra = set(m) - known
        if extra:
            raise ColumnError(f"unknown column-map keys: {', '.join(sorted(extra))}")
        missing = [k for k in ("outcome", "time", "first_treat") if not m.get(k)]
        if missing:
            raise ColumnError(f"column map needs {', '.join(missing)}")
        d = {k: v for k, v in m.items() if v is not None}
        cov = d.get("covariates", ())
        if isinstance(cov, str):
            cov = tuple(c.strip() for c in cov.split(",") if c.strip())
        d["covariates"] = tuple(cov)
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ColumnMap":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_mapping(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise CsvError(f"cannot read column map {path}: {exc}") from exc

    def required(self) -> Sequence[str]:
        cols = [self.outcome, self.time, self.first_treat]
        cols += [c for c in (self.unit, self.weights, self.strata, self.psu, self.fpc) if c]
        return cols + list(self.covariates)


@dataclass(frozen=True, eq=False)
class LoadedData:
    data: PanelDataset
    design: SurveyDesign
    replicate_weights: Optional[np.ndarray]
    replicate_columns: Tuple[str, ...]


def read_table(path) -> pd.DataFrame:
    """Comma-separated, header row, UTF-8, ``.`` decimals."""
    try:
        with warnings.catch_warnings():
            # a row longer than the header is an error, not a silent index column
            warnings.simplefilter("error", pd.errors.ParserWarning)
            df = pd.read_csv(path, sep=",", encoding="utf-8", skipinitialspace=True, index_col=False)
    except FileNotFoundError as exc:
        raise CsvError(f"no such file: {path}") from exc
    except (pd.errors.ParserError, pd.errors.ParserWarning, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise CsvError(f"malformed CSV {path}: {exc}") from exc
    if df.empty:
        raise CsvError(f"{path} has a header but no rows")
    return df


def _numeric(df: pd.DataFrame, col: str) -> np.ndarray:
    try:
        x = pd.to_numeric(df[col], errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise CsvError(f"column {col!r} is not numeric: {exc}") from exc
    return x


def _no_missing(df: pd.DataFrame, cols):
    for c in cols:
        bad = np.flatnonzero(df[c].isna().to_numpy())
        if bad.size:
            raise CsvError(f"column {c!r} has a missing value on data row {int(bad[0]) + 1}")


def load_dataset(path, columns: ColumnMap, panel: bool = True, nest: bool = False) -> LoadedData:
    df = read_table(path)
    header = list(df.columns)
    absent = [c for c in columns.required() if c not in header]
    if absent:
        raise ColumnError(f"column(s) not in header of {path}: {', '.join(absent)}")
    rep_cols: Tuple[str, ...] = ()
    if columns.replicate_prefix:
        rep_cols = tuple(c for c in header if str(c).startswith(columns.replicate_prefix))
        if not rep_cols:
            raise ColumnError(f"no column starts with replicate prefix {columns.replicate_prefix!r}")
    # first_treat may be blank for never-treated units
    _no_missing(df, [c for c in columns.required() if c != columns.first_treat] + list(rep_cols))

    g = pd.to_numeric(df[columns.first_treat], errors="coerce").to_numpy(dtype=float)
    nonblank = df[columns.first_treat].notna().to_numpy()
    if np.any(np.isnan(g) & nonblank):
        raise CsvError(f"column {columns.first_treat!r} is not numeric")
    g = np.where(np.isnan(g), NEVER, g)

    X = np.column_stack([_numeric(df, c) for c in columns.covariates]) if columns.covariates else None
    data = PanelDataset(
        y=_numeric(df, columns.outcome),
        time=_numeric(df, columns.time),
        first_treat=g,
        unit=df[columns.unit].to_numpy() if columns.unit else None,
        covariates=X,
        covariate_names=columns.covariates or None,
        panel=panel,
    )
    fpc_kw = {}
    if columns.fpc:
        v = _numeric(df, columns.fpc)
        if np.all(v <= 1.0):
            fpc_kw["sampling_fraction"] = v
        elif np.all(v > 1.0):
            fpc_kw["population_psus"] = v
        else:
            raise CsvError(f"column {columns.fpc!r} mixes sampling fractions and population counts")
    design = SurveyDesign.from_arrays(
        weights=_numeric(df, columns.weights) if columns.weights else None,
        strata=df[columns.strata].to_numpy() if columns.strata else None,
        psu=df[columns.psu].to_numpy() if columns.psu else None,
        nest=nest,
        n=data.n,
        **fpc_kw,
    )
    R = np.column_stack([_numeric(df, c) for c in rep_cols]) if rep_cols else None
    return LoadedData(data, design, R, rep_cols)


def dump_dataset(data: PanelDataset, design: SurveyDesign, path) -> None:
    """Write a dataset and its design as CSV (never-treated as blank first_treat)."""
    g = np.asarray(data.first_treat)
    cols = {
        "unit": data.unit,
        "time": data.time,
        "y": data.y,
        "first_treat": np.where(np.isinf(g), np.nan, g),
        "weight": design.weights,
        "stratum": np.asarray(design.stratum_labels)[design.strata],
        "psu": design.psu,
        "fpc": design.fpc[design.strata],
    }
    df = pd.DataFrame(cols)
    if data.covariates is not None:
        for j, name in enumerate(data.covariate_names):
            df[name] = data.covariates[:, j]
    atomic_write(path, df.to_csv(index=False, float_format="%.17g"))


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temporary file beside ``path``, then rename it into place."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".svydid-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
