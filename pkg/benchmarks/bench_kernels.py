"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one tab-separated row per kernel with the best-of-N wall time of each
backend and the speedup. Exits with status 1 if the extension is not built.
"""

import argparse
import sys
import timeit

import numpy as np

from ctrelm import _pykernels
from ctrelm.data import field_key

try:
    from ctrelm import _kernels
except ImportError:
    _kernels = None


def _hash_case(n=100_000):
    keys = [field_key(f"C{i % 26 + 1}", f"{i * 2654435761 % 10**8:08x}") for i in range(n)]
    return lambda impl: impl.hash_keys(keys, 12345)


def _coalesce_case(rows=50_000, per_row=39, dims=1 << 14):
    rng = np.random.default_rng(0)
    indptr = np.arange(0, rows * per_row + 1, per_row, dtype=np.int64)
    idx = rng.integers(0, dims, size=rows * per_row).astype(np.int64)
    vals = np.ones(rows * per_row)
    return lambda impl: impl.coalesce_rows(indptr, idx, vals)


def _sgd_case(n=10_000, fields=20, buckets=1 << 12, d=8):
    rng = np.random.default_rng(1)
    rows = (rng.integers(0, buckets, size=(n, fields)) + buckets * np.arange(fields)).astype(np.int64)
    labels = (rng.random(n) < 0.17).astype(float)
    emb0 = rng.uniform(-0.05, 0.05, size=(fields * buckets, d))
    proj0 = rng.uniform(-0.05, 0.05, size=(fields, d))

    def run(impl):
        impl.sgd_epoch(rows, labels, emb0.copy(), proj0.copy(), np.zeros(1), 0.05)
    return run


CASES = {
    "hash_keys (100k keys)": _hash_case,
    "coalesce_rows (50k rows x 39)": _coalesce_case,
    "sgd_epoch (10k rows x 20 fields, d=8)": _sgd_case,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    print("kernel\tcython_s\tpython_s\tspeedup")
    for name, make in CASES.items():
        run = make()
        times = {}
        for label, impl in (("cython", _kernels), ("python", _pykernels)):
            times[label] = min(timeit.repeat(lambda: run(impl), number=1, repeat=args.repeat))
        print(f"{name}\t{times['cython']:.4f}\t{times['python']:.4f}\t{times['python'] / times['cython']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
