"""Staggered-adoption survey panels for the four simulation scenarios.

Outcome model for unit ``i`` in PSU ``p`` at period ``t``::

    Y_it = alpha_i + gamma_p + eta_pt + 0.5 t + b1 x1_i + b2 x2_i
           + delta x1_i t / T + tau_it + eps_it

Units sit in PSUs, PSUs in strata. Treatment timing is assigned by PSU,
either as a fixed allocation (in every stratum three PSUs start at period
3, three at period 5 and two are never treated, shuffled) or by
independent draws per PSU with those proportions. Effects grow with time
since adoption, ``tau_it = tau_h * phi(t - g)`` with ``phi(e) = e^k / c``.
With pooled normalization ``c`` makes the cohort-share weighted mean of
``phi`` over all post-treatment cells equal one; with per-cohort
normalization each cohort's own post-period mean is one. Either way the
scenario truth is the population mean of ``tau_h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from svydid.design import PanelDataset, SurveyDesign

__all__ = [
    "ScenarioConfig",
    "SCENARIOS",
    "scenario",
    "generate",
    "true_att",
    "effect_profile",
    "twfe_limit",
    "rep_rng",
    "stratum_base_weights",
    "psu_icc",
]

# Exponent of the effect path; makes the population TWFE estimand in the
# first scenario 2.0 - 1.686 (see ``twfe_limit``).
EFFECT_POWER = 2.0938030173


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one simulation scenario.

    ``n`` is the number of units per period: a panel has ``n`` units
    observed ``T`` times, a repeated cross-section draws ``n`` fresh units
    in every period.
    """

    name: str
    n: int = 2000
    H: int = 5
    n_h: int = 8
    N_h: int = 200
    T: int = 8
    cohorts: Tuple[int, ...] = (3, 5)
    psus_per_cohort: Tuple[int, ...] = (3, 3)  # per stratum; the rest never treated
    allocation: str = "fixed"          # "fixed" counts per stratum or "random" draws per PSU
    normalization: str = "pooled"      # "pooled" or "cohort" scaling of the effect path
    icc: float = 0.1
    weight_cv: float = 0.5
    jitter_cv: float = 0.2
    tau: Tuple[float, ...] = (2.0,) * 5
    informative: bool = False
    informative_strength: float = 0.0
    panel: bool = True
    delta: float = 0.0
    x1_shift: float = 0.0
    sigma_alpha: float = math.sqrt(0.05)
    sigma_gamma: float = math.sqrt(0.0523)
    sigma_eta: float = math.sqrt(0.031)
    sigma_eps: float = 0.6
    beta1: float = 0.5
    beta2: float = 0.3
    trend: float = 0.5
    effect_power: float = EFFECT_POWER
    base_ratio: Optional[float] = None   # geometric ratio of stratum base weights
    seed: int = 0

    def __post_init__(self):
        for nm in ("sigma_alpha", "sigma_gamma", "sigma_eta", "sigma_eps"):
            if getattr(self, nm) < 0:
                raise ValueError(f"{nm} must be nonnegative")
        if len(self.tau) != self.H:
            raise ValueError("tau needs one value per stratum")
        if sum(self.psus_per_cohort) >= self.n_h:
            raise ValueError("every stratum needs at least one never-treated PSU")
        if self.n < self.H * self.n_h:
            raise ValueError(f"n={self.n} cannot fill {self.H * self.n_h} PSUs")
        if self.allocation not in ("fixed", "random"):
            raise ValueError("allocation must be 'fixed' or 'random'")
        if self.normalization not in ("pooled", "cohort"):
            raise ValueError("normalization must be 'pooled' or 'cohort'")
        if min(self.cohorts) < 2 or max(self.cohorts) > self.T:
            raise ValueError("cohorts must have a pre-period and lie within 1..T")

    @property
    def n_psu(self) -> int:
        return self.H * self.n_h

    def with_n(self, n: int) -> "ScenarioConfig":
        return replace(self, n=n)


def _s2_tau():
    return (0.6, 2.25, 2.7, 3.1, 3.4)


def _base_ratio_for_truth(tau, target):
    tau = np.asarray(tau, dtype=float)
    h = np.arange(tau.size)
    f = lambda r: float(np.dot(r ** h, tau) / np.sum(r ** h)) - target
    return brentq(f, 1.0 + 1e-9, 10.0)


SCENARIOS: Dict[str, ScenarioConfig] = {
    "s1": ScenarioConfig(name="s1"),
    "s2": ScenarioConfig(
        name="s2",
        tau=_s2_tau(),
        informative=True,
        informative_strength=0.9,
        allocation="random",
        normalization="cohort",
        base_ratio=_base_ratio_for_truth(_s2_tau(), 2.6),
    ),
    "s3": ScenarioConfig(name="s3", panel=False, sigma_alpha=math.sqrt(1.2)),
    "s4": ScenarioConfig(name="s4", delta=1.5, x1_shift=1.0),
}


def scenario(name: str, n: Optional[int] = None, **overrides) -> ScenarioConfig:
    """Preset ``name`` with optional sample size and field overrides."""
    try:
        cfg = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None
    if n is not None:
        overrides["n"] = n
    return replace(cfg, **overrides) if overrides else cfg


# ----------------------------------------------------------------- effects

def _post_cells(cfg: ScenarioConfig):
    shares = np.asarray(cfg.psus_per_cohort, dtype=float)
    return [(g, t, s) for g, s in zip(cfg.cohorts, shares) for t in range(g, cfg.T + 1)]


def effect_profile(cfg: ScenarioConfig, k: Optional[float] = None):
    """Return ``phi(e, g)``: effect path by event time and cohort (zero before adoption)."""
    k = cfg.effect_power if k is None else k
    cells = _post_cells(cfg)
    if cfg.normalization == "pooled":
        c_all = sum(s * float(t - g) ** k for g, t, s in cells) / sum(s for _, _, s in cells)
        scale = {g: c_all for g in cfg.cohorts}
    else:
        scale = {
            g: float(np.mean([float(t - g) ** k for gg, t, _ in cells if gg == g])) for g in cfg.cohorts
        }

    def phi(e, g):
        e = np.asarray(e, dtype=float)
        g = np.broadcast_to(np.asarray(g, dtype=float), e.shape)
        c = np.ones_like(e)
        for gg, sc in scale.items():
            c[g == gg] = sc
        return np.where(e >= 0, np.power(np.maximum(e, 0.0), k) / c, 0.0)

    return phi


def twfe_limit(cfg: ScenarioConfig, k: Optional[float] = None) -> float:
    """Population TWFE coefficient for a unit effect of one.

    Uses the expected cohort masses of the PSU allocation and equal weights.
    """
    phi = effect_profile(cfg, k)
    T = cfg.T
    mass = np.array(list(cfg.psus_per_cohort) + [cfg.n_h - sum(cfg.psus_per_cohort)], dtype=float)
    firsts = list(cfg.cohorts) + [np.inf]
    t = np.arange(1, T + 1)
    D = np.array([(t >= g).astype(float) for g in firsts])
    Y = np.array([phi(t - g, g) if np.isfinite(g) else np.zeros(T) for g in firsts])
    W = np.repeat(mass[:, None], T, axis=1)

    def within(M):
        M = M - (M * W).sum(1, keepdims=True) / W.sum(1, keepdims=True)
        return M - (M * W).sum(0, keepdims=True) / W.sum(0, keepdims=True)

    Dd = within(D)
    return float((W * Dd * Y).sum() / (W * Dd * Dd).sum())


# ----------------------------------------------------------------- weights

def _lognormal_unit_mean(rng, size, cv):
    if cv <= 0:
        return np.ones(size)
    s2 = math.log1p(cv * cv)
    return np.exp(rng.normal(-0.5 * s2, math.sqrt(s2), size))


def _geometric_cv(r, H):
    b = r ** np.arange(H)
    return float(b.std() / b.mean())


def stratum_base_weights(cfg: ScenarioConfig) -> np.ndarray:
    """Relative stratum base weights (mean one).

    The geometric ratio either comes from the config or is solved so that,
    combined with the within-stratum jitter, the overall weight CV matches
    ``weight_cv``.
    """
    r = cfg.base_ratio
    if r is None:
        target = (1 + cfg.weight_cv ** 2) / (1 + cfg.jitter_cv ** 2) - 1
        if target <= 0:
            r = 1.0
        else:
            r = brentq(lambda x: _geometric_cv(x, cfg.H) - math.sqrt(target), 1.0 + 1e-12, 100.0)
    b = r ** np.arange(cfg.H)
    return b / b.mean()


def true_att(cfg: ScenarioConfig) -> float:
    """Population ATT: stratum effects averaged with population stratum shares.

    Sample sizes are equal across strata, so population shares are
    proportional to the stratum base weights.
    """
    b = stratum_base_weights(cfg)
    return float(np.dot(b, cfg.tau) / b.sum())


# ----------------------------------------------------------------- generation

def rep_rng(seed: int, rep: int) -> np.random.Generator:
    """Generator for replication ``rep``: keyed by (seed, rep), independent of order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(rep)])))


def _units_per_psu(n, n_psu):
    q, r = divmod(n, n_psu)
    return np.array([q + (j < r) for j in range(n_psu)], dtype=np.int64)


def generate(cfg: ScenarioConfig, rep: int = 0, rng: Optional[np.random.Generator] = None):
    """Draw one sample.

    Returns ``(data, design, truth)``. Rows of ``data`` and ``design`` are
    aligned; panels are ordered by unit then period.
    """
    rng = rep_rng(cfg.seed, rep) if rng is None else rng
    H, n_h, T = cfg.H, cfg.n_h, cfg.T
    P = cfg.n_psu
    psu_stratum = np.repeat(np.arange(H), n_h)

    # treatment timing by PSU, shuffled within stratum
    labels = []
    for g, k in zip(cfg.cohorts, cfg.psus_per_cohort):
        labels += [float(g)] * k
    labels += [0.0] * (n_h - len(labels))
    labels = np.array(labels)
    if cfg.allocation == "fixed":
        psu_first = np.concatenate([rng.permutation(labels) for _ in range(H)])
    else:
        # independent draws; redraw in the rare case a cohort or the comparison group is empty
        while True:
            psu_first = rng.choice(labels, size=P, replace=True)
            if all(np.any(psu_first == v) for v in np.unique(labels)):
                break

    gamma = rng.normal(0.0, cfg.sigma_gamma, P)
    eta = rng.normal(0.0, cfg.sigma_eta, (P, T))
    base = stratum_base_weights(cfg)
    phi = effect_profile(cfg)
    tau_h = np.asarray(cfg.tau, dtype=float)

    per_psu = _units_per_psu(cfg.n, P)
    unit_psu = np.repeat(np.arange(P), per_psu)
    n_u = cfg.n if cfg.panel else cfg.n * T
    if not cfg.panel:
        unit_psu = np.tile(unit_psu, T)
    unit_stratum = psu_stratum[unit_psu]
    unit_g = psu_first[unit_psu]
    treated = unit_g > 0

    alpha = rng.normal(0.0, cfg.sigma_alpha, n_u)
    x1 = rng.normal(0.0, 1.0, n_u) + cfg.x1_shift * treated
    x2 = rng.normal(0.0, 1.0, n_u)

    mult = _lognormal_unit_mean(rng, n_u, cfg.jitter_cv)
    if cfg.informative:
        mult = mult * _informative_multiplier(alpha, unit_stratum, H, cfg.informative_strength)
    w_raw = (cfg.N_h / n_h) * base[unit_stratum] * mult

    if cfg.panel:
        unit_idx = np.repeat(np.arange(n_u), T)
        time = np.tile(np.arange(1, T + 1), n_u)
    else:
        unit_idx = np.arange(n_u)
        time = np.repeat(np.arange(1, T + 1), cfg.n)
    p = unit_psu[unit_idx]
    g = unit_g[unit_idx]
    e = np.where(g > 0, time - g, -1.0)
    tau = tau_h[unit_stratum[unit_idx]] * phi(e, g)
    y = (
        alpha[unit_idx]
        + gamma[p]
        + eta[p, time - 1]
        + cfg.trend * time
        + cfg.beta1 * x1[unit_idx]
        + cfg.beta2 * x2[unit_idx]
        + cfg.delta * x1[unit_idx] * time / T
        + tau
        + rng.normal(0.0, cfg.sigma_eps, unit_idx.size)
    )
    data = PanelDataset(
        y=y,
        time=time,
        first_treat=g,
        unit=unit_idx if cfg.panel else None,
        covariates=np.column_stack([x1[unit_idx], x2[unit_idx]]),
        covariate_names=("x1", "x2"),
        panel=cfg.panel,
    )
    design = SurveyDesign.from_arrays(
        weights=w_raw[unit_idx],
        strata=unit_stratum[unit_idx],
        psu=p,
        population_psus=float(cfg.N_h),
    )
    return data, design, true_att(cfg)


def _informative_multiplier(alpha, stratum, H, strength):
    """exp(strength * normal score of the alpha rank), mean one within stratum."""
    out = np.empty_like(alpha)
    for h in range(H):
        idx = np.flatnonzero(stratum == h)
        ranks = np.argsort(np.argsort(alpha[idx]))
        z = norm.ppf((ranks + 0.5) / idx.size)
        m = np.exp(strength * z)
        out[idx] = m / m.mean()
    return out


def psu_icc(y, psu) -> float:
    """One-way ANOVA intraclass correlation of ``y`` grouped by ``psu``."""
    y = np.asarray(y, dtype=float)
    _, codes = np.unique(psu, return_inverse=True)
    k = codes.max() + 1
    cnt = np.bincount(codes, minlength=k).astype(float)
    means = np.bincount(codes, weights=y, minlength=k) / cnt
    grand = y.mean()
    N = y.size
    ssb = float(np.sum(cnt * (means - grand) ** 2))
    ssw = float(np.sum((y - means[codes]) ** 2))
    msb = ssb / (k - 1)
    msw = ssw / (N - k)
    m0 = (N - np.sum(cnt ** 2) / N) / (k - 1)
    s2b = max((msb - msw) / m0, 0.0)
    return s2b / (s2b + msw)
