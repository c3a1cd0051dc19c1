"""Time the KD-tree neighbor search against brute force on clustered region sets.

    python demos/knn_benchmark.py [--sizes 1000 5000 10000 20000] [--log demos/knn_benchmark.log]
"""

import argparse
import time

import numpy as np

from regionmatte.regions import knn_bruteforce, knn_kdtree


def clustered(n, rng):
    centers = rng.integers(0, 600, size=(8, 2))
    pts = centers[rng.integers(0, 8, 3 * n)] + np.round(rng.normal(0, 25, size=(3 * n, 2))).astype(np.int64)
    pts = np.unique(np.abs(pts), axis=0)
    return pts[rng.permutation(len(pts))[:n]]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return min(times), result


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000, 10000, 20000])
    parser.add_argument("--k", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--log")
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    knn_kdtree(clustered(100, rng), args.k)  # compile once
    lines = [f"{'regions':>8} {'brute (s)':>10} {'kd-tree (s)':>12} {'speedup':>8} equal"]
    for n in args.sizes:
        coords = clustered(n, rng)
        brute_t, brute = best_of(lambda: knn_bruteforce(coords, args.k), args.repeats)
        tree_t, tree = best_of(lambda: knn_kdtree(coords, args.k), args.repeats)
        lines.append(f"{len(coords):>8} {brute_t:>10.4f} {tree_t:>12.4f} {brute_t / tree_t:>7.1f}x "
                     f"{np.array_equal(brute, tree)}")
        print(lines[-1] if len(lines) > 2 else "\n".join(lines), flush=True)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
