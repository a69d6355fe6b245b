"""Benchmark the compiled quantile-regression core against the numpy twin.

Both backends expose the same ``solve(X, y, tau)`` and are compared on
identical problem instances, checking agreement of the attained objective
before timing. Run as a script:

    python3 benchmarks/backend_bench.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from quantbreak import _qr_numpy
from quantbreak.qrsolve import check_loss

try:
    from quantbreak import _qr_core

    HAVE_COMPILED = True
except ImportError:
    _qr_core = None
    HAVE_COMPILED = False

SIZES = ((100, 2), (250, 4), (500, 4), (1000, 6), (2000, 8))
TAUS = (0.25, 0.5)


def _instances(n, d, tau, count, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        X = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
        theta = rng.standard_normal(d)
        y = X @ theta + rng.standard_t(df=4, size=n)
        out.append((np.ascontiguousarray(X), np.ascontiguousarray(y), tau))
    return out


def _time_backend(solve, instances, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for X, y, tau in instances:
            solve(X, y, tau)
        best = min(best, time.perf_counter() - start)
    return best / len(instances)


def run(repeats=5, count=20, seed=0):
    rows = []
    for n, d in SIZES:
        for tau in TAUS:
            instances = _instances(n, d, tau, count, seed)
            for X, y, tau_ in instances:
                theta_np, _, _ = _qr_numpy.solve(X, y, tau_)
                obj_np = float(np.sum(check_loss(tau_, y - X @ theta_np)))
                if HAVE_COMPILED:
                    theta_c, _, _ = _qr_core.solve(X, y, tau_)
                    obj_c = float(np.sum(check_loss(tau_, y - X @ theta_c)))
                    if abs(obj_c - obj_np) > 1e-7 * (1.0 + abs(obj_np)):
                        raise AssertionError(
                            "backends disagree at n=%d d=%d tau=%g: %r vs %r"
                            % (n, d, tau_, obj_c, obj_np)
                        )
            t_np = _time_backend(_qr_numpy.solve, instances, repeats)
            t_c = (
                _time_backend(_qr_core.solve, instances, repeats)
                if HAVE_COMPILED
                else float("nan")
            )
            rows.append((n, d, tau, t_c, t_np))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--count", type=int, default=20)
    args = parser.parse_args(argv)

    rows = run(repeats=args.repeats, count=args.count)
    print("compiled backend available:", HAVE_COMPILED)
    header = "%6s %3s %5s %14s %14s %8s" % (
        "n", "d", "tau", "compiled (ms)", "numpy (ms)", "speedup",
    )
    print(header)
    print("-" * len(header))
    for n, d, tau, t_c, t_np in rows:
        speedup = t_np / t_c if t_c == t_c and t_c > 0 else float("nan")
        print(
            "%6d %3d %5.2f %14.3f %14.3f %7.1fx"
            % (n, d, tau, 1e3 * t_c, 1e3 * t_np, speedup)
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
