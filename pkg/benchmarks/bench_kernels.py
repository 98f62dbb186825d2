"""Compare the compiled and pure-Python tree kernels.

    python benchmarks/bench_kernels.py [--n 150] [--m 50] [--sweeps 20]

Both backends consume identical random streams, so the script also checks
that they return the same draws before reporting timings.
"""

import argparse
import time

import numpy as np

from mempate.bart import backend
from mempate.bart import model as bart


def problem(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = np.sin(2 * X[:, 0]) + X[:, 1] + 0.3 * rng.normal(size=n)
    return X, (y - y.mean()) / np.ptp(y)


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=150)
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--m", type=int, default=50)
    ap.add_argument("--sweeps", type=int, default=20)
    ap.add_argument("--prior-draws", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if backend.compiled_kernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    X, y = problem(args.n, args.p, 0)
    cfg = bart.default_bart_config(X, y, m=args.m, n_burn=args.sweeps // 2, n_keep=args.sweeps - args.sweeps // 2,
                                   change_moves=True)
    tasks = {
        "mcmc sweeps": lambda K: [d.value for d in bart.fit_mcmc(X, y, cfg, np.random.default_rng(1), kernels=K)],
        "prior evidence": lambda K: bart.marginal_log_likelihood_prior_mc(
            X, y, cfg, args.prior_draws, np.random.default_rng(2), kernels=K, return_draws=True)[1],
    }
    print(f"n={args.n} p={args.p} m={args.m} sweeps={args.sweeps} prior_draws={args.prior_draws}")
    print(f"{'task':<16}{'python (s)':>12}{'compiled (s)':>14}{'speedup':>10}  identical")
    for name, task in tasks.items():
        tp, out_p = best_of(lambda: task(backend.get("python")), 1)
        tc, out_c = best_of(lambda: task(backend.get("compiled")), args.repeat)
        same = all(np.array_equal(a, b) for a, b in zip(out_p, out_c))
        print(f"{name:<16}{tp:>12.3f}{tc:>14.4f}{tp / tc:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
