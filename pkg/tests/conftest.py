import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from svydid.design import PanelDataset, SurveyDesign  # noqa: E402


def make_staggered(seed=1, panel=True, n_units=60, T=5, strata=3, psus=3, hetero=True):
    """Small staggered panel (or cross-sections) with a matching design.

    Units are nested in ``strata * psus`` PSUs; weights, strata and PSUs are
    constant within unit.
    """
    rng = np.random.default_rng(seed)
    P = strata * psus
    if panel:
        unit_psu = np.arange(n_units) % P
        unit_g = rng.choice([3, 4, 0], n_units)
        unit_w = rng.uniform(0.5, 2.0, n_units)
        unit_x = rng.normal(size=(n_units, 2))
        unit = np.repeat(np.arange(n_units), T)
        time = np.tile(np.arange(1, T + 1), n_units)
        psu = unit_psu[unit]
        g = unit_g[unit]
        w = unit_w[unit]
        x = unit_x[unit]
    else:
        n = n_units * T
        unit = None
        time = np.tile(np.arange(1, T + 1), n_units)
        psu = rng.integers(0, P, n)
        g = rng.choice([3, 4, 0], n)
        w = rng.uniform(0.5, 2.0, n)
        x = rng.normal(size=(n, 2))
    shock = rng.normal(0, 0.5, (P, T + 1))
    eff = 1.5 + (0.8 * (g == 3) if hetero else 0.0)
    y = (
        rng.normal(size=time.size)
        + x @ np.array([0.5, -0.3])
        + shock[psu, time]
        + (g > 0) * (time >= g) * eff
        + 0.3 * x[:, 0] * (g > 0)
    )
    data = PanelDataset(y=y, time=time, first_treat=g, unit=unit, covariates=x, panel=panel)
    design = SurveyDesign.from_arrays(weights=w, strata=psu % strata, psu=psu)
    return data, design


@pytest.fixture
def staggered():
    return make_staggered()


@pytest.fixture
def staggered_rc():
    return make_staggered(seed=2, panel=False)
