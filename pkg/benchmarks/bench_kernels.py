"""Time the CART split and routing kernels: numba against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

Both implementations live side by side in ``seqsynth.fitgen.kernels``; the
numba ones are compiled once before timing. A full tree fit is also timed in a
subprocess with ``SEQSYNTH_DISABLE_NUMBA=1`` so the end-to-end effect shows.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from seqsynth._accel import numba_enabled
from seqsynth.fitgen import kernels

FIT_SNIPPET = """
import time, numpy as np
from seqsynth.simlab.standin import make_standin
from seqsynth.tabular import encode_design
from seqsynth.fitgen import fit_cart
t = make_standin({n}, np.random.default_rng(0))
D = encode_design(t, ["SEX9", "AGE9", "MSTAT9"])
y = t.values("ILL9")
fit_cart(y[:500], D.take(np.arange(500)), categorical=True)
t0 = time.perf_counter()
for _ in range({repeat}):
    fit_cart(y, D, categorical=True)
print((time.perf_counter() - t0) / {repeat})
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def fit_time(n, repeat, disable):
    env = dict(os.environ)
    if disable:
        env["SEQSYNTH_DISABLE_NUMBA"] = "1"
    else:
        env.pop("SEQSYNTH_DISABLE_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", FIT_SNIPPET.format(n=n, repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not numba_enabled():
        print("numba is not available (or disabled); only the numpy kernels can be timed")
        return 1
    rng = np.random.default_rng(0)
    n = args.n
    xs = np.sort(rng.normal(size=n).round(2))
    ys = rng.normal(size=n)
    yc = rng.integers(0, 5, n)
    F = rng.normal(size=(n, 3))
    feature = np.array([0, 1, -1, -1, -1], dtype=np.int64)
    threshold = np.array([0.0, 0.5, 0, 0, 0])
    left = np.array([1, 3, -1, -1, -1], dtype=np.int64)
    right = np.array([2, 4, -1, -1, -1], dtype=np.int64)
    catmask = np.zeros((5, 1), dtype=bool)
    is_cat = np.zeros(5, dtype=bool)
    route_args = (F, feature, threshold, left, right, catmask, is_cat)
    cases = [
        ("best_split_reg", lambda: kernels.best_split_reg_numpy(xs, ys, 5),
         lambda: kernels.best_split_reg_numba(xs, ys, 5)),
        ("best_split_cls", lambda: kernels.best_split_cls_numpy(xs, yc, 5, 5),
         lambda: kernels.best_split_cls_numba(xs, yc, 5, 5)),
        ("route", lambda: kernels.route_numpy(*route_args), lambda: kernels.route_numba(*route_args)),
    ]
    print(f"n = {n}, best of {args.repeat}")
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, f_np, f_nb in cases:
        f_nb()  # compile
        a, b = best(f_np, args.repeat), best(f_nb, args.repeat)
        print(f"{name:<18}{a * 1e3:>12.3f}{b * 1e3:>12.3f}{a / b:>10.1f}")
    a = fit_time(n, args.repeat, disable=True)
    b = fit_time(n, args.repeat, disable=False)
    print(f"{'fit_cart (full)':<18}{a * 1e3:>12.1f}{b * 1e3:>12.1f}{a / b:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
