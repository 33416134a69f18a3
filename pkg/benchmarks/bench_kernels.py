"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs both implementations of the two hot kernels over a range of problem
sizes, checks they agree bit-for-bit, and prints a timing table with the
compiled/python speedup.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from numeraire import _kernels_py

try:
    from numeraire import _kernels as _compiled
except ImportError:
    _compiled = None


def _time(fn, *args, repeats: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeats))


def bench_compound_returns(repeats: int) -> list[tuple[str, float, float]]:
    rows = []
    rng = np.random.default_rng(0)
    for paths, steps in ((1_000, 256), (10_000, 256), (2_000, 4_096)):
        r = rng.normal(scale=0.02, size=(paths, steps))
        r[rng.random(size=r.shape) < 1e-4] = -1.5  # sprinkle bankruptcies
        label = f"compound_returns {paths}x{steps}"
        t_py = _time(_kernels_py.compound_returns, r, repeats=repeats)
        if _compiled is None:
            rows.append((label, t_py, float("nan")))
            continue
        w_c, fb_c = _compiled.compound_returns(r)
        w_p, fb_p = _kernels_py.compound_returns(r)
        assert (w_c == w_p).all() and (fb_c == fb_p).all()
        rows.append((label, t_py, _time(_compiled.compound_returns, r,
                                        repeats=repeats)))
    return rows


def bench_bessel_euler(repeats: int) -> list[tuple[str, float, float]]:
    rows = []
    rng = np.random.default_rng(1)
    for paths, steps in ((200, 4_000), (200, 32_000), (2_000, 8_000)):
        z = rng.normal(size=(paths, steps))
        args = (z, 1.0 / steps, 1.0, 1e-6)
        label = f"bessel_euler {paths}x{steps}"
        t_py = _time(_kernels_py.bessel_euler, *args, repeats=repeats)
        if _compiled is None:
            rows.append((label, t_py, float("nan")))
            continue
        assert (_compiled.bessel_euler(*args)
                == _kernels_py.bessel_euler(*args)).all()
        rows.append((label, t_py, _time(_compiled.bessel_euler, *args,
                                        repeats=repeats)))
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5,
                        help="best-of-N timing repeats (default 5)")
    args = parser.parse_args()

    if _compiled is None:
        print("compiled extension not available; timing the fallback only\n")

    rows = (bench_compound_returns(args.repeats)
            + bench_bessel_euler(args.repeats))
    width = max(len(label) for label, _, _ in rows)
    print(f"{'kernel':<{width}}  {'python':>10}  {'compiled':>10}  "
          f"{'speedup':>8}")
    for label, t_py, t_c in rows:
        speed = f"{t_py / t_c:7.1f}x" if t_c == t_c else "     n/a"
        t_c_s = f"{t_c * 1e3:9.2f}ms" if t_c == t_c else "       n/a"
        print(f"{label:<{width}}  {t_py * 1e3:9.2f}ms  {t_c_s}  {speed}")


if __name__ == "__main__":
    main()
