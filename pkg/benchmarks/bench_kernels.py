"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--features 64]

Kernel timings call both variants directly in one process. The end-to-end
row runs a full Guided IG attribution in a fresh interpreter per backend,
selected with GUIDEDIG_NUMBA, so dispatch is measured as users see it.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from guidedig import kernels
from guidedig.fixtures import bump_family

END_TO_END = """
import time, numpy as np
from guidedig import attribution as at, fixtures
m = fixtures.bump_family(0, n_features={n})
x = np.linspace(0, 1, m.n_features)
at.guided_ig_unbounded(m, x, np.zeros(m.n_features), 5)  # warm up / compile
t = time.perf_counter()
for _ in range({repeat}):
    at.guided_ig_unbounded(m, x, np.zeros(m.n_features), 500)
print((time.perf_counter() - t) / {repeat})
"""


def best(fn, repeat, number):
    fn()  # first call compiles the numba variant
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def gig_case(n, seed=0):
    rng = np.random.default_rng(seed)
    x, target = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    grad = rng.normal(size=n)
    d_target = 0.5 * float(np.abs(x - target).sum())
    return x, target, grad, d_target


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--features", type=int, default=64)
    args = ap.parse_args()
    n = args.features

    m = bump_family(0, n_features=n)
    x = np.linspace(0, 1, n)
    xs = np.random.default_rng(1).uniform(0, 1, (64, n))
    bump = (m.centers, m.amplitudes, m.gammas, m.offset)
    gx, gt, gg, gd = gig_case(n)

    def gig_call(fn):
        def run():
            fn(gx.copy(), gt, gg, 0.1, gd, np.zeros(n), np.zeros(n))
        return run

    rows = [
        ("bump value+grad", lambda: kernels.bump_value_grad_numba(x, *bump),
         lambda: kernels.bump_value_grad_numpy(x, *bump), 2000),
        ("bump batch of 64", lambda: kernels.bump_value_grad_batch_numba(xs, *bump),
         lambda: kernels.bump_value_grad_batch_numpy(xs, *bump), 200),
        ("guided step", gig_call(kernels.gig_step_numba), gig_call(kernels.gig_step_numpy), 2000),
    ]
    print(f"{'kernel':<22}{'numba':>12}{'numpy':>12}{'speedup':>10}   (N = {n})")
    for name, fast, slow, number in rows:
        a = best(fast, args.repeat, number)
        b = best(slow, args.repeat, number)
        print(f"{name:<22}{a * 1e6:>10.1f}us{b * 1e6:>10.1f}us{b / a:>9.1f}x")

    timings = {}
    for flag in ("1", "0"):
        env = dict(os.environ, GUIDEDIG_NUMBA=flag)
        code = END_TO_END.format(n=n, repeat=args.repeat)
        out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                             capture_output=True, text=True).stdout
        timings[flag] = float(out.strip())
    print(f"{'GIG T=500 end to end':<22}{timings['1'] * 1e3:>10.1f}ms{timings['0'] * 1e3:>10.1f}ms"
          f"{timings['0'] / timings['1']:>9.1f}x")


if __name__ == "__main__":
    main()
