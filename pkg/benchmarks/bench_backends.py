"""Time the numba and numpy filter backends on the kernels and on full planning runs.

    python benchmarks/bench_backends.py [--sizes 50 100 200] [--repeat 5]
"""

import argparse
import time

import numpy as np

from microled_repair import _kernels as K
from microled_repair.grid import InstanceSpec, generate_instance
from microled_repair.planner import PlanConfig, optimize_fixed_T


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_row(n, repeat):
    rng = np.random.default_rng(n)
    P = rng.integers(0, 2, (n + 3, n + 3)).astype(float)
    up = rng.normal(size=(n, n))
    wy, wx, wdy, wdx = (rng.normal(size=4) for _ in range(4))
    out = {}
    for name in K.available_backends():
        K.set_backend(name)

        def work():
            K.filter_apply(P, wy, wx)
            K.filter_grad(P, up, wy, wx, wdy, wdx)
            K.filter_adjoint(up, wy, wx)

        work()  # compile / warm up
        out[name] = best_of(work, repeat)
    return out


def plan_row(n, repeat, iters):
    c1, c2 = generate_instance(InstanceSpec.square(n, 0.35, 0.05, 0))
    cfg = PlanConfig(N_iter=iters, early_stop=False)
    out = {}
    for name in K.available_backends():
        K.set_backend(name)
        optimize_fixed_T(c1, c2, 1, PlanConfig(N_iter=1))
        out[name] = best_of(lambda: optimize_fixed_T(c1, c2, 5, cfg), repeat)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200, 500])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iters", type=int, default=20)
    args = ap.parse_args()
    names = K.available_backends()
    print(f"{'case':<24}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for n in args.sizes:
        for label, row in ((f"kernels {n}x{n}", kernel_row(n, args.repeat)),
                           (f"T=5 x{args.iters} iters {n}x{n}", plan_row(n, max(1, args.repeat // 2), args.iters))):
            speed = row["numpy"] / row["numba"] if "numba" in row else float("nan")
            print(f"{label:<24}" + "".join(f"{row[k] * 1e3:>10.2f}ms" for k in names) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
