import os
import subprocess
import sys

import numpy as np
import pytest

from svydid import _kernels

compiled = pytest.mark.skipif(_kernels._ckernels is None, reason="compiled kernels not built")


def inputs(seed=0, n=500, k=3, G=23):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, k)), rng.integers(0, G, n), rng.uniform(0.2, 3.0, n), G


def test_backend_name_is_known():
    assert _kernels.BACKEND in ("cython", "python")


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.backend_module("fortran")


def test_env_var_forces_fallback():
    code = "import svydid; print(svydid._kernels.BACKEND)"
    env = dict(os.environ, SVYDID_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_python_group_sum_matches_bincount():
    x, codes, _, G = inputs()
    got = _kernels.group_sum(x, codes, G, backend="python")
    want = np.column_stack([np.bincount(codes, x[:, j], minlength=G) for j in range(x.shape[1])])
    np.testing.assert_allclose(got, want, atol=1e-12)


@compiled
class TestBackendsAgree:
    def test_group_sum(self):
        x, codes, _, G = inputs(1)
        a = _kernels.group_sum(x, codes, G, backend="cython")
        b = _kernels.group_sum(x, codes, G, backend="python")
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)

    def test_stratified_meat(self):
        rng = np.random.default_rng(2)
        totals = rng.normal(size=(30, 3))
        stratum = np.repeat(np.arange(6), 5)
        factor = rng.uniform(0.5, 1.5, 6)
        ta, pa = _kernels.stratified_meat(totals, stratum, factor, 6, backend="cython")
        tb, pb = _kernels.stratified_meat(totals, stratum, factor, 6, backend="python")
        np.testing.assert_allclose(ta, tb, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(pa, pb, rtol=1e-12, atol=1e-13)

    def test_demean_one_way(self):
        x, codes, w, G = inputs(3)
        a = _kernels.demean_one_way(x, codes, w, G, backend="cython")
        b = _kernels.demean_one_way(x, codes, w, G, backend="python")
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_demean_two_way(self):
        x, c1, w, G = inputs(4)
        c2 = np.random.default_rng(5).integers(0, 7, c1.size)
        a, ia, _ = _kernels.demean_two_way(x, c1, G, c2, 7, w, backend="cython")
        b, ib, _ = _kernels.demean_two_way(x, c1, G, c2, 7, w, backend="python")
        np.testing.assert_allclose(a, b, atol=1e-9)
        assert abs(ia - ib) <= 1

    def test_one_dimensional_input(self):
        x, codes, w, G = inputs(6, k=1)
        a = _kernels.group_sum(x[:, 0], codes, G, backend="cython")
        assert a.shape == (G,)

    def test_does_not_modify_input(self):
        x, codes, w, G = inputs(7)
        before = x.copy()
        _kernels.demean_one_way(x, codes, w, G, backend="cython")
        np.testing.assert_array_equal(x, before)

    def test_end_to_end_estimates(self):
        code = (
            "import sys; sys.path.insert(0, 'tests');"
            "from conftest import make_staggered; from svydid.estimators import estimate;"
            "d, de = make_staggered(seed=9);"
            "print(*[repr(estimate(d, de, e).se) for e in ('cs_reg', 'twfe', 'sun_abraham')])"
        )
        root = os.path.dirname(os.path.dirname(__file__))
        runs = []
        for backend in ("cython", "python"):
            env = dict(os.environ, SVYDID_BACKEND=backend)
            out = subprocess.run([sys.executable, "-c", code], env=env, cwd=root, capture_output=True, text=True, check=True)
            runs.append([float(v) for v in out.stdout.split()])
        np.testing.assert_allclose(runs[0], runs[1], rtol=1e-9)
