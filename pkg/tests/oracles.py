"""Slow, literal reference implementations used only by the tests.

Each oracle is written from the defining formula with explicit loops and
shares no code with the package.
"""

from __future__ import annotations

import math
from collections import defaultdict

import mpmath


def tsl_oracle(psi, strata, psu, fpc_by_stratum=None):
    """Scalar stratified-cluster variance by enumerating PSU totals."""
    totals = defaultdict(float)
    stratum_of = {}
    for v, h, j in zip(psi, strata, psu):
        totals[(h, j)] += float(v)
        stratum_of[(h, j)] = h
    by_h = defaultdict(list)
    for key, tot in totals.items():
        by_h[stratum_of[key]].append(tot)
    V = 0.0
    for h, tots in by_h.items():
        n_h = len(tots)
        f = 0.0 if fpc_by_stratum is None else fpc_by_stratum[h]
        mean = sum(tots) / n_h
        ss = sum((t - mean) ** 2 for t in tots)
        V += (1.0 - f) * n_h / (n_h - 1.0) * ss
    return V


def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting on lists of floats."""
    n = len(A)
    M = [list(map(float, A[i])) + [float(b[i])] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col]))
        M[col], M[piv] = M[piv], M[col]
        for r in range(col + 1, n):
            f = M[r][col] / M[col][col]
            for c in range(col, n + 1):
                M[r][c] -= f * M[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        s = M[r][n] - sum(M[r][c] * x[c] for c in range(r + 1, n))
        x[r] = s / M[r][r]
    return x


def wls_oracle(X, y, w):
    """Weighted normal equations assembled by loops, solved by elimination."""
    n, k = len(X), len(X[0])
    A = [[sum(w[i] * X[i][a] * X[i][b] for i in range(n)) for b in range(k)] for a in range(k)]
    rhs = [sum(w[i] * X[i][a] * y[i] for i in range(n)) for a in range(k)]
    return gauss_solve(A, rhs)


def invert(A):
    k = len(A)
    cols = []
    for j in range(k):
        e = [1.0 if i == j else 0.0 for i in range(k)]
        cols.append(gauss_solve(A, e))
    return [[cols[j][i] for j in range(k)] for i in range(k)]


def matmul(A, B):
    return [[sum(A[i][m] * B[m][j] for m in range(len(B))) for j in range(len(B[0]))] for i in range(len(A))]


def sandwich_oracle(X, u, w, strata, psu, fpc_by_stratum=None):
    """Bread (X'WX)^-1 and stratified meat of PSU score totals, by loops."""
    n, k = len(X), len(X[0])
    XtWX = [[sum(w[i] * X[i][a] * X[i][b] for i in range(n)) for b in range(k)] for a in range(k)]
    B = invert(XtWX)
    totals = defaultdict(lambda: [0.0] * k)
    stratum_of = {}
    for i in range(n):
        key = (strata[i], psu[i])
        stratum_of[key] = strata[i]
        for a in range(k):
            totals[key][a] += w[i] * X[i][a] * u[i]
    by_h = defaultdict(list)
    for key, t in totals.items():
        by_h[stratum_of[key]].append(t)
    meat = [[0.0] * k for _ in range(k)]
    for h, ts in by_h.items():
        n_h = len(ts)
        f = 0.0 if fpc_by_stratum is None else fpc_by_stratum[h]
        mean = [sum(t[a] for t in ts) / n_h for a in range(k)]
        c = (1.0 - f) * n_h / (n_h - 1.0)
        for t in ts:
            d = [t[a] - mean[a] for a in range(k)]
            for a in range(k):
                for b in range(k):
                    meat[a][b] += c * d[a] * d[b]
    return matmul(matmul(B, meat), B)


def hc1_oracle(X, y):
    """Textbook HC1: OLS, then (X'X)^-1 [n/(n-k) sum x x' u^2] (X'X)^-1."""
    n, k = len(X), len(X[0])
    beta = wls_oracle(X, y, [1.0] * n)
    u = [y[i] - sum(X[i][a] * beta[a] for a in range(k)) for i in range(n)]
    XtX = [[sum(X[i][a] * X[i][b] for i in range(n)) for b in range(k)] for a in range(k)]
    B = invert(XtX)
    meat = [[n / (n - k) * sum(X[i][a] * X[i][b] * u[i] ** 2 for i in range(n)) for b in range(k)] for a in range(k)]
    return beta, matmul(matmul(B, meat), B)


def dummy_twfe_oracle(y, d, unit, time, w):
    """Coefficient on ``d`` from WLS with explicit unit and period dummies."""
    units = sorted(set(unit))
    times = sorted(set(time))[1:]  # drop one period dummy
    X = []
    for i in range(len(y)):
        row = [float(d[i])]
        row += [1.0 if unit[i] == u else 0.0 for u in units]
        row += [1.0 if time[i] == t else 0.0 for t in times]
        X.append(row)
    return wls_oracle(X, y, w)[0]


def t_quantile_oracle(p, df, dps=30):
    """Student t quantile by root-finding on the exact CDF integral."""
    with mpmath.workdps(dps):
        nu = mpmath.mpf(df)
        c = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))

        def cdf(t):
            return mpmath.mpf(1) / 2 + mpmath.quad(lambda s: c * (1 + s * s / nu) ** (-(nu + 1) / 2), [0, t])

        # bracketing solver: the CDF is monotone and p > 1/2 puts the root in (0, 1e4)
        return float(mpmath.findroot(lambda t: cdf(t) - p, (mpmath.mpf(0), mpmath.mpf(10) ** 4), solver="illinois"))


def weighted_mean_diff(ys, ws):
    return sum(y * w for y, w in zip(ys, ws)) / sum(ws)


def iid_if_variance(psi):
    n = len(psi)
    m = sum(psi) / n
    return n / (n - 1.0) * sum((v - m) ** 2 for v in psi)


def isclose(a, b, rel=1e-10, abs_=0.0):
    return math.isclose(a, b, rel_tol=rel, abs_tol=abs_)
