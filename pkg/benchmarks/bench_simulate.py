"""Compare the compiled and pure-Python simulation kernels.

Usage: python benchmarks/bench_simulate.py [--horizon T] [--repeat R]
"""

import argparse
import time

import numpy as np

from aoce import SourceModel, alarm_profile, build, simulate, structured_policy_iteration
from aoce import Constant, Exponential, Logarithmic
from aoce.kernels import compiled_run_chunk, python_run_chunk

Q = [[0.7, 0.1, 0.1, 0.1], [0.05, 0.7, 0.15, 0.1], [0.1, 0.1, 0.6, 0.2], [0.05, 0.1, 0.05, 0.8]]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    prof = alarm_profile(4, Exponential(rate=0.3), Logarithmic(beta=1.0, base=10.0), Constant(1.0))
    mdp = build(SourceModel(np.array(Q)), prof, 0.9, 3.0, 20)
    pol = structured_policy_iteration(mdp).policy

    fast = compiled_run_chunk()
    t_py, r_py = best_of(lambda: simulate(mdp, pol, args.horizon, 0, run_chunk=python_run_chunk), args.repeat)
    print(f"python  : {t_py:8.3f} s  ({args.horizon / t_py:12.0f} slots/s)  cost {r_py.mean_cost:.6f}")
    if fast is None:
        print("compiled kernel not built; nothing to compare")
        return
    t_c, r_c = best_of(lambda: simulate(mdp, pol, args.horizon, 0, run_chunk=fast), args.repeat)
    print(f"compiled: {t_c:8.3f} s  ({args.horizon / t_c:12.0f} slots/s)  cost {r_c.mean_cost:.6f}")
    print(f"speedup : {t_py / t_c:8.1f}x")
    print("identical results:", r_py.batch_means == r_c.batch_means)


if __name__ == "__main__":
    main()
