"""Compiled kernels vs. the numpy fallback.

Usage: python3 bench/bench_kernels.py [--n 2048] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from sketchattack import _kernels_py as fallback

try:
    from sketchattack import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def cases(n, gen):
    order = gen.permutation(n).astype(np.int64)
    bucket_of = gen.integers(0, 8, n).astype(np.int64)
    present = gen.random(n) < 0.3
    stack = gen.random((256, n)) < 0.3
    raw = gen.integers(0, 1 << 32, n, dtype=np.uint64).astype(np.uint32)
    masked = (gen.random(n) < 0.05).astype(np.uint8)
    U8, union8 = np.empty(n, np.uint8), np.empty(n, np.uint8)
    sampled = (gen.random(n) < 0.3).astype(np.uint8)

    def board(mod):
        b = mod.ScoreBoard(n)
        for _ in range(200):
            b.update((gen.random(n) < 0.3).astype(np.uint8), 1e9)
        return b

    return {
        "kth_present (k=8)": lambda m: (lambda: m.kth_present(present, order, 8)),
        "kth_present_batch (256 rows)": lambda m: (lambda: m.kth_present_batch(stack, order, 8)),
        "bucket_minima (k=8)": lambda m: (lambda: m.bucket_minima(present, order, bucket_of, 8)),
        "bernoulli_union": lambda m: (lambda: m.bernoulli_union(raw, 1 << 30, masked, U8, union8)),
        "ScoreBoard.update": lambda m: (lambda b=board(m): b.update(sampled, 1e9)),
        "lower_median": lambda m: (lambda c=gen.integers(0, 1000, n): m.lower_median(c, masked)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    gen = np.random.default_rng(0)
    mods = [("fallback", fallback)] + ([("compiled", compiled)] if compiled else [])
    print(f"n={args.n}; best of {args.repeat}, microseconds per call")
    print(f"{'kernel':32s}" + "".join(f"{name:>12s}" for name, _ in mods) + f"{'speedup':>10s}")
    for label, make in cases(args.n, gen).items():
        times = []
        for _, mod in mods:
            fn = make(mod)
            number, _ = timeit.Timer(fn).autorange()
            times.append(min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number * 1e6)
        speed = f"{times[0] / times[1]:9.1f}x" if len(times) == 2 else ""
        print(f"{label:32s}" + "".join(f"{t:12.2f}" for t in times) + speed)
    if compiled is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
