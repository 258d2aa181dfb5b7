"""Throughput comparison of the compiled stepping kernel vs the pure-Python twin.

Run:  python benchmarks/backend_bench.py [--steps N]

Both backends execute the identical arithmetic (and produce bit-identical
trajectories); this measures the speed gap that justifies shipping the
compiled extension.
"""

import argparse
import math
import time

import numpy as np

import foodchain._kernel_py as kernel_py
from foodchain.model import build_spec, tilde_transform

try:
    import foodchain._kernel as kernel_c
except ImportError:
    kernel_c = None


def chain(n: int):
    a0 = [3.0] + [1.0] * (n - 1)
    aii = [1.0] + [0.2] * (n - 1)
    lo = [0.0] + [1.0] * (n - 1)
    hi = [1.0] * (n - 1) + [0.0]
    sigma = [0.4] + [0.0] * (n - 1)
    return build_spec(a0=a0, aii=aii, lo=lo, hi=hi, sigma=sigma)


def run(kernel, n: int, steps: int, dt: float = 1e-3) -> float:
    tilde = tilde_transform(chain(n))
    a0s = np.array(tilde.signed_a0())
    lo = np.array(tilde.lo)
    aii = np.array(tilde.aii)
    hi = np.array(tilde.hi)
    sig = np.array([s * math.sqrt(dt) for s in tilde.sigma])
    active = np.ones(n, dtype=np.uint8)
    y = np.zeros(n)
    xwork = np.empty(n)
    out = np.empty((0, n))
    floor_step = np.full(n, -1, dtype=np.int64)
    rng = np.random.default_rng(0)
    block = 1 << 14
    xi = rng.standard_normal((block, n))
    done = 0
    start = time.perf_counter()
    while done < steps:
        m = min(block, steps - done)
        kernel.step_chunk(a0s, lo, aii, hi, sig, active, y, xwork, xi[:m],
                          dt, 60.0, done, steps + 1, 0, out, 0, floor_step)
        done += m
    return time.perf_counter() - start


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=2_000_000)
    args = parser.parse_args()

    print(f"{'n':>3} {'backend':>10} {'steps/s':>14} {'time':>9}")
    for n in (2, 3, 6):
        pure = run(kernel_py, n, max(args.steps // 20, 10_000))
        rate_py = max(args.steps // 20, 10_000) / pure
        print(f"{n:>3} {'pure':>10} {rate_py:>14,.0f} {pure:>8.3f}s")
        if kernel_c is not None:
            comp = run(kernel_c, n, args.steps)
            rate_c = args.steps / comp
            print(f"{n:>3} {'compiled':>10} {rate_c:>14,.0f} {comp:>8.3f}s  ({rate_c / rate_py:,.0f}x)")
        else:
            print(f"{n:>3} {'compiled':>10} {'unavailable':>14}")


if __name__ == "__main__":
    main()
