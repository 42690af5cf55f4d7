"""Time the compiled kernels against the pure-Python fallback.

Run ``python benchmarks/bench_kernels.py [--scale 0.1]``.
"""

import argparse
import timeit

import numpy as np

from covert_renewal import kernels


def cases(scale: float):
    rng = np.random.default_rng(0)
    n = max(1000, int(10**6 * scale))
    arr = np.cumsum(rng.exponential(size=n))
    svc = rng.exponential(0.5, size=n)
    incoming = np.cumsum(rng.exponential(size=n))
    sends = np.cumsum(rng.exponential(0.99, size=n))
    overt = (rng.random(n) > 0.01).astype(np.uint8)
    M = max(100, int(10**4 * scale))
    cw = rng.exponential(size=(M, 20))
    dep = rng.exponential(size=20) + 0.5
    budget = max(1000, int(10**5 * scale))
    return {
        f"queue_recursion n={n}": lambda impl: kernels.queue_recursion(arr, svc, 0.0, impl=impl),
        f"buffer_walk n={n}": lambda impl: kernels.buffer_walk(incoming, sends, overt, 50, impl=impl),
        f"codebook_loglik {M}x20": lambda impl: kernels.codebook_loglik(cw, 0.3, dep, 2.0, impl=impl),
        f"scan_fresh_competitors {budget}": lambda impl: kernels.scan_fresh_competitors(
            np.random.default_rng(1), 0, 1.0, 1.0, 1.0, dep, 0.3, 2.0, np.inf, budget, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    names = sorted(backends)
    print(f"{'kernel':38s}" + "".join(f"{b:>12s}" for b in names) + ("     speedup" if len(names) > 1 else ""))
    rows = []
    for label, fn in cases(args.scale).items():
        t = {b: min(timeit.repeat(lambda: fn(backends[b]), number=1, repeat=args.repeat)) for b in names}
        line = f"{label:38s}" + "".join(f"{t[b]:11.4f}s" for b in names)
        if "cython" in t:
            line += f"{t['python'] / t['cython']:11.1f}x"
        print(line)
        rows.append((label, t))
    return rows


if __name__ == "__main__":
    main()
