"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_core.py [--repeat 5]

Also runs one small end-to-end synthesis under each backend in a subprocess
(the backend is picked at import time through PWCBF_PURE_PYTHON).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from pwcbf._core import _fallback

try:
    from pwcbf._core import _speedups
except ImportError:
    _speedups = None

E2E = """
import time
from pwcbf import BACKEND, build_partition, load_benchmark, synthesize
spec = load_benchmark("linear-convex")
part = build_partition(spec, (6, 6))
t = time.perf_counter()
res = synthesize(spec, part)
print(BACKEND, f"{time.perf_counter() - t:.2f}", repr(res.barrier.p_safe))
"""


def _inputs(rng, size):
    yl = rng.uniform(-4, 4, size)
    yu = yl + rng.uniform(0.01, 3, size)
    lo = rng.uniform(-3, 3, size)
    hi = lo + rng.uniform(0.1, 2, size)
    bbar = np.append(rng.uniform(0, 1, 60), 1.0)
    blo = rng.dirichlet(np.ones(61), size) * 0.5
    bhi = blo + rng.uniform(0, 0.3, (size, 61))
    return (yl, yu, lo, hi), (bbar, blo, bhi)


def bench(repeat: int) -> list[tuple[str, str, float]]:
    rng = np.random.default_rng(0)
    windows, greedy = _inputs(rng, 2000)
    rows = []
    impls = [("python", _fallback)] + ([("cython", _speedups)] if _speedups else [])
    for name, mod in impls:
        for label, fn, args in [("relax_windows x2000", mod.relax_windows, windows),
                                ("greedy_values 2000x61", mod.greedy_values, greedy),
                                ("greedy_inner 61", mod.greedy_inner, (greedy[0], greedy[1][0], greedy[2][0]))]:
            best = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))
            rows.append((label, name, best))
    return rows


def end_to_end() -> list[str]:
    out = []
    for flag in ("1", "0"):
        env = {**os.environ, "PWCBF_PURE_PYTHON": flag}
        proc = subprocess.run([sys.executable, "-c", E2E], capture_output=True, text=True, env=env)
        out.append(proc.stdout.strip() or proc.stderr.strip().splitlines()[-1])
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()
    rows = bench(args.repeat)
    print(f"{'kernel':<24}{'backend':<10}{'best [ms]':>12}")
    for label, name, t in rows:
        print(f"{label:<24}{name:<10}{1e3 * t:>12.3f}")
    by = {(label, name): t for label, name, t in rows}
    for label in dict.fromkeys(label for label, _, _ in rows):
        if (label, "cython") in by:
            print(f"speedup {label}: {by[label, 'python'] / by[label, 'cython']:.1f}x")
    if not args.skip_e2e:
        print("end-to-end linear-convex 6x6 (backend, seconds, p_safe):")
        for line in end_to_end():
            print("  " + line)


if __name__ == "__main__":
    main()
