"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows N] [--repeat R]

Both backends run on the same inputs and must agree before any timing is
reported. The first numba call is excluded (it pays for compilation or for
loading the on-disk cache).
"""

import argparse
import time

import numpy as np

from polyjur import _kernels


def random_forest(rng, n, depth_bias=0.9):
    # each node hangs below a recent node, which gives long chains
    parent = np.full(n, -1, dtype=np.int64)
    for i in range(1, n):
        if rng.random() < depth_bias:
            parent[i] = rng.integers(max(0, i - 8), i)
    return parent


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2_000_000)
    ap.add_argument("--nodes", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    n_groups = max(1, args.rows // 10)
    ids = rng.integers(0, n_groups, args.rows).astype(np.int64)
    parent = random_forest(rng, args.nodes)
    nodes = np.arange(args.nodes, dtype=np.int64)

    cases = {
        f"min_group_size rows={args.rows}": lambda: _kernels.min_group_size(ids, n_groups),
        f"ancestor_pairs nodes={args.nodes}": lambda: _kernels.ancestor_pairs(parent, nodes),
    }
    print(f"{'kernel':<36}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, fn in cases.items():
        timings, results = {}, {}
        for backend in ("numpy", "numba"):
            previous = _kernels.set_backend(backend)
            try:
                results[backend] = fn()
                timings[backend] = best_of(fn, args.repeat)
            finally:
                _kernels.set_backend(previous)
        a, b = results["numpy"], results["numba"]
        if isinstance(a, tuple):
            same = sorted(zip(*(x.tolist() for x in a))) == sorted(zip(*(x.tolist() for x in b)))
        else:
            same = a == b
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<36}{timings['numpy']:>10.4f}{timings['numba']:>10.4f}{timings['numpy'] / timings['numba']:>8.1f}x")


if __name__ == "__main__":
    main()
