"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]
"""
import argparse
import timeit

import numpy as np

from mvts import kernels


def cases(scale: float):
    rng = np.random.default_rng(0)
    n = max(1, int(1_000_000 * scale))
    values = rng.standard_normal(n)
    series = rng.standard_normal((8, max(1, int(20_000 * scale))))
    h = 200
    bits = kernels.numpy_backend.encode(series, h, 2.79)
    idx = rng.integers(0, h, n)
    p = rng.random((max(1, int(256 * scale)), 50, 24))
    p /= p.sum(axis=1, keepdims=True)
    q = kernels.numpy_backend.encode(rng.standard_normal((p.shape[0], 24)), 50, 2.29).astype(float)
    return {
        "bin_indices (1e6 values)": lambda k: k.bin_indices(values, h, 2.79),
        "encode (8 x 20000, h=200)": lambda k: k.encode(series, h, 2.79),
        "column_index (8 x 200 x 20000)": lambda k: k.column_index(bits),
        "midpoints (1e6 indices)": lambda k: k.midpoints(idx, h, 2.79),
        "roundtrip_abs_error (1e6)": lambda k: k.roundtrip_abs_error(values, h, 2.79),
        "emd_loss_grad (256 x 50 x 24)": lambda k: k.emd_loss_grad(p, q),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    backends = kernels.available_backends()
    names = sorted(backends)
    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(args.scale).items():
        best = {}
        for name in names:
            k = backends[name]
            fn(k)
            best[name] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        row = f"{label:34s}" + "".join(f"{best[n] * 1e3:10.2f}ms" for n in names)
        if "cython" in best and "numpy" in best:
            row += f"{best['numpy'] / best['cython']:11.1f}x"
        print(row)
    if "cython" not in backends:
        print("compiled backend not available; only the numpy backend was timed")


if __name__ == "__main__":
    main()
