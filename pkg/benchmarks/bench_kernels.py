"""Time the compiled oracle kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from metavrp.oracles import kernels


def _dist(n, rng):
    pts = rng.random((n, 2))
    return np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))


def _best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = kernels.backends()
    if "compiled" not in backends:
        print("compiled backend not built; only the python fallback is available")
    rng = np.random.default_rng(args.seed)
    cases = [("held_karp", n, _dist(n, rng)) for n in (10, 12)]
    cases += [("local_search", n, _dist(n, rng)) for n in (100, 200)]
    print(f"{'kernel':<14}{'n':>5}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for kernel, n, d in cases:
        times, outs = {}, {}
        for name, mod in backends.items():
            if kernel == "held_karp":
                fn = lambda mod=mod: mod.held_karp(d)
            else:
                init = mod.nearest_neighbor(d, 0)
                fn = lambda mod=mod, init=init: mod.local_search(d, init, 50)
            times[name], outs[name] = _best_time(fn, args.repeat)
        if len(outs) == 2 and outs["python"] != outs["compiled"]:
            raise SystemExit(f"{kernel} n={n}: backends disagree")
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{kernel:<14}{n:>5}" + "".join(f"{t:>11.4f}s" for t in times.values()) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
