"""Numpy implementations of the grouped kernels (fallback backend)."""

import numpy as np


def group_sum(values, codes, n_groups):
    k = values.shape[1]
    out = np.empty((n_groups, k))
    for j in range(k):
        out[:, j] = np.bincount(codes, weights=values[:, j], minlength=n_groups)
    return out


def stratified_meat(totals, psu_stratum, factor, n_strata):
    counts = np.bincount(psu_stratum, minlength=n_strata).astype(float)
    sums = group_sum(totals, psu_stratum, n_strata)
    means = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    centered = totals - means[psu_stratum]
    k = totals.shape[1]
    per = np.zeros((n_strata, k, k))
    scaled = centered * factor[psu_stratum][:, None]
    # one small (k x k) product per stratum
    for h in range(n_strata):
        rows = psu_stratum == h
        if rows.any():
            per[h] = scaled[rows].T @ centered[rows]
    return per.sum(axis=0), per


def _weighted_means(x, codes, w, n_groups):
    wsum = np.bincount(codes, weights=w, minlength=n_groups)
    sums = group_sum(x * w[:, None], codes, n_groups)
    return np.divide(sums, wsum[:, None], out=np.zeros_like(sums), where=wsum[:, None] > 0)


def demean_one_way(x, codes, w, n_groups):
    x -= _weighted_means(x, codes, w, n_groups)[codes]


def demean_two_way(x, codes1, n1, codes2, n2, w, tol, max_iter):
    it = 0
    delta = 0.0
    while it < max_iter:
        x -= _weighted_means(x, codes1, w, n1)[codes1]
        m2 = _weighted_means(x, codes2, w, n2)
        x -= m2[codes2]
        it += 1
        delta = float(np.abs(m2).max()) if m2.size else 0.0
        if delta <= tol:
            break
    return it, delta
