"""Survey design, panel data containers and weight diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "NEVER",
    "DesignError",
    "SingletonStratumError",
    "SurveyDesign",
    "PanelDataset",
    "NormalizedWeights",
    "normalize_weights",
    "kish_deff_w",
    "design_df",
]

#: Internal first-treatment marker for never-treated units.
NEVER = np.inf


class DesignError(ValueError):
    """Invalid survey design or data input."""


class SingletonStratumError(DesignError):
    """A stratum has fewer than two sampled PSUs."""

    def __init__(self, stratum):
        self.stratum = stratum
        super().__init__(
            f"stratum {stratum!r} has a single sampled PSU; "
            "at least two are required for linearization variance"
        )


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def _codes(labels):
    """Integer codes 0..K-1 in order of first appearance, plus the labels."""
    labels = np.asarray(labels)
    uniq, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return remap[inv.ravel()].astype(np.int64), uniq[order]


@dataclass(frozen=True)
class NormalizedWeights:
    """Weights rescaled to mean one.

    Attributes
    ----------
    w : ndarray
        Normalized weights, ``w_i = w_i* / mean(w*)``; they sum to ``n``.
    W_hat : float
        Sum of normalized weights.
    N_hat : float
        Sum of raw weights (estimated population size).
    mean_raw : float
        Mean raw weight.
    """

    w: np.ndarray
    W_hat: float
    N_hat: float
    mean_raw: float


def normalize_weights(raw) -> NormalizedWeights:
    """Normalize raw sampling weights to sum to the sample size.

    Raises
    ------
    DesignError
        If the vector is empty, non-finite, or has a nonpositive entry.
    """
    raw = np.asarray(raw, dtype=float).ravel()
    if raw.size == 0:
        raise DesignError("weight vector is empty")
    bad = np.flatnonzero(~np.isfinite(raw) | (raw <= 0))
    if bad.size:
        i = int(bad[0])
        raise DesignError(f"weights must be finite and positive; index {i} has {float(raw[i])}")
    mean_raw = float(raw.mean())
    w = raw / mean_raw
    return NormalizedWeights(w=_readonly(w), W_hat=float(w.sum()), N_hat=float(raw.sum()), mean_raw=mean_raw)


def kish_deff_w(w) -> float:
    """Kish design effect from unequal weighting, ``n sum(w^2) / sum(w)^2``."""
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0:
        raise DesignError("weight vector is empty")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DesignError("weights must be finite and positive")
    # scale first so the sums cannot overflow
    w = w / w.max()
    return float(w.size * np.dot(w, w) / w.sum() ** 2)


@dataclass(frozen=True, eq=False)
class SurveyDesign:
    """Stratified (ultimate-)cluster sample design.

    Build instances with :meth:`from_arrays`; the constructor expects
    already-resolved integer codes. Each observation row carries a raw
    weight, a stratum code and a PSU code. PSU codes are global (unique
    across strata), so a PSU belongs to exactly one stratum.

    Attributes
    ----------
    weights : ndarray
        Raw weights ``w_i* = 1/pi_i``.
    strata : ndarray of int64
        Stratum code per observation, 0..H-1.
    psu : ndarray of int64
        Global PSU code per observation, 0..P-1.
    fpc : ndarray
        Sampling fraction ``f_h`` per stratum (length H).
    stratum_labels, psu_labels : ndarray
        Original labels; ``psu_labels`` holds (stratum, psu) pairs when nested.
    has_strata, has_psu : bool
        Whether the design was given explicit strata / clusters.
    """

    weights: np.ndarray
    strata: np.ndarray
    psu: np.ndarray
    fpc: np.ndarray
    stratum_labels: np.ndarray
    psu_labels: np.ndarray
    has_strata: bool = True
    has_psu: bool = True
    _psu_stratum: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("weights", "strata", "psu", "fpc"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        n = self.weights.shape[0]
        if self.strata.shape[0] != n or self.psu.shape[0] != n:
            raise DesignError("weights, strata and psu must have the same length")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise DesignError("raw weights must be finite and strictly positive")
        if np.any(self.fpc < 0) or np.any(self.fpc > 1):
            raise DesignError("sampling fractions must lie in [0, 1]")
        n_psu = int(self.psu.max()) + 1 if n else 0
        psu_stratum = np.full(n_psu, -1, dtype=np.int64)
        psu_stratum[self.psu] = self.strata
        # a PSU seen in two strata is an error (labels must be nested or unique)
        if np.any(psu_stratum[self.psu] != self.strata):
            raise DesignError("a PSU appears in more than one stratum; use nest=True")
        object.__setattr__(self, "_psu_stratum", _readonly(psu_stratum))

    # ------------------------------------------------------------------ build
    @classmethod
    def from_arrays(
        cls,
        weights=None,
        strata=None,
        psu=None,
        *,
        population_psus=None,
        sampling_fraction=None,
        nest: bool = False,
        n: Optional[int] = None,
    ) -> "SurveyDesign":
        """Resolve labels into a design.

        Parameters
        ----------
        weights : array_like, optional
            Raw sampling weights; all ones when omitted.
        strata : array_like, optional
            Stratum labels; one implicit stratum when omitted.
        psu : array_like, optional
            PSU labels; each observation is its own PSU when omitted.
        population_psus : scalar, mapping or array_like, optional
            Population PSU count ``N_h`` per stratum, as a scalar, a
            ``{stratum: N_h}`` mapping, or a per-observation array.
        sampling_fraction : scalar, mapping or array_like, optional
            ``f_h`` in the same forms. May be combined with
            ``population_psus`` only if they agree to 1e-9.
        nest : bool
            Interpret PSU labels within stratum (labels reused across strata).
        n : int, optional
            Number of observations when no array argument is given.
        """
        lengths = {len(np.asarray(a)) for a in (weights, strata, psu) if a is not None}
        if n is not None:
            lengths.add(int(n))
        if len(lengths) != 1:
            raise DesignError("could not infer a single number of observations")
        n = lengths.pop()
        if n == 0:
            raise DesignError("design has no observations")

        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
        bad = np.flatnonzero(~np.isfinite(w) | (w <= 0))
        if bad.size:
            i = int(bad[0])
            raise DesignError(f"weights must be finite and positive; index {i} has {float(w[i])}")

        if strata is None:
            s_codes = np.zeros(n, dtype=np.int64)
            s_labels = np.array(["_all"], dtype=object)
        else:
            s_codes, s_labels = _codes(np.asarray(strata))

        if psu is None:
            p_codes = np.arange(n, dtype=np.int64)
            p_labels = np.arange(n)
        else:
            psu = np.asarray(psu)
            if nest:
                keys = np.array([f"{a}\x1f{b}" for a, b in zip(s_codes, psu)], dtype=object)
                p_codes, _ = _codes(keys)
                first = np.unique(p_codes, return_index=True)[1]
                p_labels = np.empty(first.size, dtype=object)
                p_labels[:] = [(s_labels[s_codes[i]], psu[i]) for i in first]
            else:
                p_codes, p_labels = _codes(psu)

        H = s_labels.size
        n_h = _psus_per_stratum(p_codes, s_codes, H)
        f = _resolve_fpc(population_psus, sampling_fraction, s_codes, s_labels, n_h, n)
        return cls(
            weights=w,
            strata=s_codes,
            psu=p_codes,
            fpc=f,
            stratum_labels=s_labels,
            psu_labels=np.asarray(p_labels, dtype=object),
            has_strata=strata is not None,
            has_psu=psu is not None,
        )

    @classmethod
    def iid(cls, n: int, weights=None) -> "SurveyDesign":
        """One stratum, observation-level PSUs, no FPC."""
        return cls.from_arrays(weights=weights, n=n)

    @classmethod
    def cluster(cls, psu, weights=None) -> "SurveyDesign":
        """One stratum, the given PSUs, no FPC."""
        return cls.from_arrays(weights=weights, psu=psu)

    # ------------------------------------------------------------ properties
    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_strata(self) -> int:
        return int(self.stratum_labels.size)

    @property
    def n_psu(self) -> int:
        return int(self._psu_stratum.size)

    @property
    def psu_stratum(self) -> np.ndarray:
        """Stratum code of each PSU."""
        return self._psu_stratum

    @property
    def psus_per_stratum(self) -> np.ndarray:
        return np.bincount(self._psu_stratum, minlength=self.n_strata)

    @property
    def df(self) -> int:
        return design_df(self)

    def normalized(self) -> NormalizedWeights:
        return normalize_weights(self.weights)

    # ------------------------------------------------------------- reshaping
    def take(self, index) -> "SurveyDesign":
        """Design for the rows ``index`` (rows may repeat).

        Sampling fractions are carried over from this design rather than
        recomputed from the PSUs that remain.
        """
        index = np.asarray(index)
        s_codes = self.strata[index]
        p_codes, _ = _codes(self.psu[index])
        used_strata = np.unique(s_codes)
        remap = np.full(self.n_strata, -1, dtype=np.int64)
        remap[used_strata] = np.arange(used_strata.size)
        psu_order = _first_appearance(self.psu[index])
        return SurveyDesign(
            weights=self.weights[index],
            strata=remap[s_codes],
            psu=p_codes,
            fpc=self.fpc[used_strata],
            stratum_labels=self.stratum_labels[used_strata],
            psu_labels=self.psu_labels[psu_order],
            has_strata=self.has_strata,
            has_psu=self.has_psu,
        )

    def with_weights(self, weights) -> "SurveyDesign":
        """Same strata and PSUs with new raw weights."""
        return SurveyDesign(
            weights=np.asarray(weights, dtype=float),
            strata=self.strata,
            psu=self.psu,
            fpc=self.fpc,
            stratum_labels=self.stratum_labels,
            psu_labels=self.psu_labels,
            has_strata=self.has_strata,
            has_psu=self.has_psu,
        )

    def cluster_only(self) -> "SurveyDesign":
        """Drop strata and FPC, keep PSUs and weights."""
        return SurveyDesign(
            weights=self.weights,
            strata=np.zeros(self.n, dtype=np.int64),
            psu=self.psu,
            fpc=np.zeros(1),
            stratum_labels=np.array(["_all"], dtype=object),
            psu_labels=self.psu_labels,
            has_strata=False,
            has_psu=self.has_psu,
        )

    def check_variance_ready(self):
        """Raise :class:`SingletonStratumError` for any stratum with n_h < 2."""
        n_h = self.psus_per_stratum
        bad = np.flatnonzero(n_h < 2)
        if bad.size:
            raise SingletonStratumError(self.stratum_labels[bad[0]])


def _first_appearance(codes):
    _, first = np.unique(codes, return_index=True)
    return codes[np.sort(first)]


def _psus_per_stratum(p_codes, s_codes, H):
    n_psu = int(p_codes.max()) + 1
    ps = np.full(n_psu, -1, dtype=np.int64)
    ps[p_codes] = s_codes
    if np.any(ps[p_codes] != s_codes):
        raise DesignError("a PSU label appears in more than one stratum; pass nest=True")
    return np.bincount(ps, minlength=H)


def _per_stratum(value, s_codes, s_labels, what):
    """Expand a scalar / mapping / per-observation array to one value per stratum."""
    H = s_labels.size
    if np.isscalar(value):
        return np.full(H, float(value))
    if isinstance(value, Mapping):
        out = np.empty(H)
        for h, lab in enumerate(s_labels):
            if lab not in value:
                raise DesignError(f"{what} missing for stratum {lab!r}")
            out[h] = float(value[lab])
        return out
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size != s_codes.size:
        raise DesignError(f"{what} must be a scalar, a mapping, or one value per observation")
    out = np.full(H, np.nan)
    out[s_codes] = arr
    if np.any(arr != out[s_codes]):
        raise DesignError(f"{what} must be constant within stratum")
    return out


def _resolve_fpc(population_psus, sampling_fraction, s_codes, s_labels, n_h, n):
    H = s_labels.size
    f_from_N = f_given = None
    if population_psus is not None:
        N_h = _per_stratum(population_psus, s_codes, s_labels, "population PSU count")
        if np.any(N_h < n_h):
            h = int(np.flatnonzero(N_h < n_h)[0])
            raise DesignError(
                f"stratum {s_labels[h]!r}: population PSU count {N_h[h]} is below sampled count {n_h[h]}"
            )
        f_from_N = n_h / N_h
    if sampling_fraction is not None:
        f_given = _per_stratum(sampling_fraction, s_codes, s_labels, "sampling fraction")
    if f_from_N is not None and f_given is not None:
        if np.any(np.abs(f_from_N - f_given) > 1e-9):
            raise DesignError("population PSU counts and sampling fractions disagree")
    f = f_given if f_given is not None else f_from_N
    if f is None:
        return np.zeros(H)
    if np.any(f < 0) or np.any(f > 1):
        raise DesignError("sampling fractions must lie in [0, 1]")
    return f


def design_df(design: SurveyDesign) -> int:
    """Survey degrees of freedom: sampled PSUs minus strata.

    With observation-level PSUs and a single stratum this is ``n - 1``.
    """
    n_h = design.psus_per_stratum
    df = int(n_h.sum() - (n_h > 0).sum())
    if df <= 0:
        raise DesignError(f"design has {df} degrees of freedom; inference is impossible")
    return df


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Long-format staggered-adoption data.

    Parameters
    ----------
    y : array_like
        Outcome per row.
    time : array_like of int
        Period per row.
    first_treat : array_like
        First treated period per row; ``0``, ``inf`` or any value above the
        last observed period means never treated.
    unit : array_like, optional
        Unit identifier. Required for panels; for repeated cross-sections
        each row is its own unit when omitted.
    covariates : array_like, optional
        ``(n, k)`` covariate matrix.
    covariate_names : sequence of str, optional
    panel : bool
        Balanced panel (True) or repeated cross-sections (False).
    """

    y: np.ndarray
    time: np.ndarray
    first_treat: np.ndarray
    unit: Optional[np.ndarray] = None
    covariates: Optional[np.ndarray] = None
    covariate_names: Optional[Sequence[str]] = None
    panel: bool = True
    # derived
    unit_codes: np.ndarray = field(init=False, repr=False)
    periods: np.ndarray = field(init=False, repr=False)
    period_codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size
        if n == 0:
            raise DesignError("dataset is empty")
        time = np.asarray(self.time)
        if time.shape != (n,):
            raise DesignError("time must have one entry per row")
        if not np.all(np.equal(np.mod(time, 1), 0)):
            raise DesignError("time periods must be integers")
        time = time.astype(np.int64)
        if not np.all(np.isfinite(y)):
            raise DesignError("outcome contains missing or non-finite values")

        g = np.asarray(self.first_treat, dtype=float).ravel()
        if g.shape != (n,):
            raise DesignError("first_treat must have one entry per row")
        tmax = time.max()
        g = np.where((g == 0) | (g > tmax) | np.isinf(g), NEVER, g)
        if np.any(np.isnan(g)):
            raise DesignError("first_treat has missing values")

        if self.unit is None:
            if self.panel:
                raise DesignError("panel data needs a unit identifier")
            unit = np.arange(n)
        else:
            unit = np.asarray(self.unit)
            if unit.shape != (n,):
                raise DesignError("unit must have one entry per row")
        ucodes, _ = _codes(unit)

        periods = np.unique(time)
        pcodes = np.searchsorted(periods, time).astype(np.int64)

        n_units = int(ucodes.max()) + 1
        g_unit = np.full(n_units, np.nan)
        g_unit[ucodes] = g
        same = (g_unit[ucodes] == g) | (np.isinf(g_unit[ucodes]) & np.isinf(g))
        if not np.all(same):
            raise DesignError("first_treat must be constant within unit")

        if self.panel:
            counts = np.zeros((n_units, periods.size), dtype=np.int64)
            np.add.at(counts, (ucodes, pcodes), 1)
            if np.any(counts != 1):
                raise DesignError("panel=True requires every unit observed exactly once in every period")

        X = self.covariates
        if X is not None:
            X = np.asarray(X, dtype=float)
            if X.ndim == 1:
                X = X[:, None]
            if X.shape[0] != n:
                raise DesignError("covariates must have one row per observation")
            if not np.all(np.isfinite(X)):
                raise DesignError("covariates contain missing or non-finite values")
            names = list(self.covariate_names) if self.covariate_names is not None else [
                f"x{j + 1}" for j in range(X.shape[1])
            ]
            if len(names) != X.shape[1]:
                raise DesignError("covariate_names length does not match covariates")
            object.__setattr__(self, "covariates", _readonly(X))
            object.__setattr__(self, "covariate_names", tuple(names))

        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "time", _readonly(time))
        object.__setattr__(self, "first_treat", _readonly(g))
        object.__setattr__(self, "unit", _readonly(unit))
        object.__setattr__(self, "unit_codes", _readonly(ucodes))
        object.__setattr__(self, "periods", _readonly(periods))
        object.__setattr__(self, "period_codes", _readonly(pcodes))

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def n_units(self) -> int:
        return int(self.unit_codes.max()) + 1

    @property
    def n_periods(self) -> int:
        return int(self.periods.size)

    @property
    def cohorts(self) -> np.ndarray:
        """Treated cohorts (first-treatment periods), sorted."""
        g = np.unique(self.first_treat)
        return g[np.isfinite(g)]

    def unit_first_row(self) -> np.ndarray:
        """Row index of each unit's first appearance, ordered by unit code."""
        rows = np.full(self.n_units, -1, dtype=np.int64)
        order = np.arange(self.n)[::-1]
        rows[self.unit_codes[order]] = order
        return rows

    def wide(self):
        """Outcome matrix ``(n_units, n_periods)`` for balanced panels."""
        if not self.panel:
            raise DesignError("wide layout requires panel data")
        Y = np.empty((self.n_units, self.n_periods))
        Y[self.unit_codes, self.period_codes] = self.y
        return Y

    def unit_first_treat(self) -> np.ndarray:
        return self.first_treat[self.unit_first_row()]

    def unit_covariates(self, period=None) -> Optional[np.ndarray]:
        """Covariates per unit, taken at ``period`` (default: each unit's first row)."""
        if self.covariates is None:
            return None
        if period is None:
            return self.covariates[self.unit_first_row()]
        rows = np.full(self.n_units, -1, dtype=np.int64)
        sel = np.flatnonzero(self.time == period)
        rows[self.unit_codes[sel]] = sel
        if np.any(rows < 0):
            raise DesignError(f"period {period} not observed for every unit")
        return self.covariates[rows]

    def take(self, index) -> "PanelDataset":
        """Rows ``index`` as a new dataset (whole units for panels)."""
        index = np.asarray(index)
        X = None if self.covariates is None else self.covariates[index]
        return PanelDataset(
            self.y[index],
            self.time[index],
            self.first_treat[index],
            unit=self.unit[index],
            covariates=X,
            covariate_names=self.covariate_names if X is not None else None,
            panel=self.panel,
        )

    def unit_design(self, design: SurveyDesign) -> SurveyDesign:
        """Collapse a row-aligned design to one row per unit (panel data).

        Weights, strata and PSUs must be constant within unit.
        """
        if design.n != self.n:
            raise DesignError("design rows do not match the dataset")
        rows = self.unit_first_row()
        u = self.unit_codes
        for name, arr in (("weights", design.weights), ("strata", design.strata), ("psu", design.psu)):
            if np.any(arr != arr[rows][u]):
                raise DesignError(f"survey {name} must be constant within unit")
        return design.take(rows)
