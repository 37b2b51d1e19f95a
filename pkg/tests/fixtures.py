"""Synthetic CSV fixtures for the command-line tests."""

from __future__ import annotations

import numpy as np
import pandas as pd


def ladder_frame(seed: int = 20240601, per_psu: int = 30) -> pd.DataFrame:
    """Two-period panel in 31 strata with 2 PSUs each.

    Treatment share and period-2 shocks vary by PSU, and weights rise with
    the unit's treatment effect, so weighting moves the estimate and
    clustering widens the interval.
    """
    rng = np.random.default_rng(seed)
    H, P = 31, 2
    rows = []
    uid = 0
    for h in range(H):
        for p in (1, 2):
            share = rng.uniform(0.1, 0.9)
            shock = rng.normal(0, 0.6)
            for _ in range(per_psu):
                treated = rng.random() < share
                age = rng.normal()
                effect = rng.normal(0.1, 0.3)
                w = np.exp(1.5 * effect + rng.normal(0, 0.3)) * 1000.0
                base = rng.normal() + 0.4 * age
                for t in (1, 2):
                    y = base + 0.2 * (t == 2) + shock * (t == 2) + (effect if treated and t == 2 else 0.0)
                    y += rng.normal(0, 0.5)
                    rows.append((uid, t, y, 2.0 if treated else np.nan, w, h, p, age))
                uid += 1
    return pd.DataFrame(rows, columns=["id", "year", "y", "g", "wt", "sdmvstra", "sdmvpsu", "age"])


LADDER_COLUMNS = {
    "outcome": "y",
    "time": "year",
    "first_treat": "g",
    "unit": "id",
    "weights": "wt",
    "strata": "sdmvstra",
    "psu": "sdmvpsu",
    "covariates": "age",
}
