"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 200000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from svydid import _kernels


def cases(rows: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    n_units = rows // 8
    units = np.repeat(np.arange(n_units), 8)
    periods = np.tile(np.arange(8), n_units)
    x = rng.normal(size=(rows, 3))
    w = rng.uniform(0.5, 2.0, rows)
    psu = rng.integers(0, 400, rows)
    totals = rng.normal(size=(400, 3))
    psu_stratum = np.arange(400) // 8
    factor = np.full(50, 8 / 7)
    return {
        "group_sum (400 PSUs)": lambda b: _kernels.group_sum(x, psu, 400, backend=b),
        "stratified_meat (50 strata)": lambda b: _kernels.stratified_meat(totals, psu_stratum, factor, 50, backend=b),
        "demean_one_way (units)": lambda b: _kernels.demean_one_way(x, units, w, n_units, backend=b),
        "demean_two_way (units x periods)": lambda b: _kernels.demean_two_way(
            x, units, n_units, periods, 8, w, backend=b
        ),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = ["python"] + (["cython"] if _kernels._ckernels is not None else [])
    print(f"rows={args.rows:,}  best of {args.repeat}  default backend: {_kernels.BACKEND}")
    print(f"{'kernel':<34}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases(args.rows).items():
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends]
        row = f"{name:<34}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
