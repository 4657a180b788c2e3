"""Bit-packed +/-1 linear algebra and a float-vs-binary matmul benchmark.

Layout: one row of a +/-1 matrix is stored LSB-first in 64-bit words,
+1 -> bit 1, -1 -> bit 0. Rows are padded with 1 bits; kernels take the true
row length and mask padding out before counting.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numba
import numpy as np
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

# prefer OpenMP for the parallel kernel; old TBB builds only emit warnings
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@dataclass
class PackedBitMatrix:
    rows: int
    cols: int
    words_per_row: int
    payload: np.ndarray  # (rows, words_per_row) uint64

    def __post_init__(self):
        self.payload = np.ascontiguousarray(self.payload, dtype=np.uint64)
        if self.payload.shape != (self.rows, self.words_per_row):
            raise ValueError("payload shape does not match rows x words_per_row")
        if self.words_per_row * 64 < self.cols:
            raise ValueError("words_per_row too small for cols")

    def row(self, i: int) -> np.ndarray:
        return self.payload[i]


@intrinsic
def _ctpop64(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        fn = builder.module.declare_intrinsic("llvm.ctpop", [ir.IntType(64)])
        return builder.call(fn, args)

    return sig, codegen


@numba.njit(cache=True)
def _dot_words(x, y, n):
    full = n // 64
    rem = n - full * 64
    s = 0
    for w in range(full):
        s += _ctpop64(~(x[w] ^ y[w]))
    if rem:
        mask = (np.uint64(1) << np.uint64(rem)) - np.uint64(1)
        s += _ctpop64(~(x[full] ^ y[full]) & mask)
    return 2 * s - n


@numba.njit(cache=True)
def _matmul_rows(A, B, n, out, r0, r1):
    full = n // 64
    rem = n - full * 64
    mask = (np.uint64(1) << np.uint64(rem)) - np.uint64(1)
    for i in range(r0, r1):
        for j in range(B.shape[0]):
            s = 0
            for w in range(full):
                s += _ctpop64(~(A[i, w] ^ B[j, w]))
            if rem:
                s += _ctpop64(~(A[i, full] ^ B[j, full]) & mask)
            out[i, j] = 2 * s - n


@numba.njit(cache=True)
def _matmul_seq(A, B, n):
    out = np.empty((A.shape[0], B.shape[0]), dtype=np.int64)
    _matmul_rows(A, B, n, out, 0, A.shape[0])
    return out


@numba.njit(cache=True, parallel=True)
def _matmul_par(A, B, n):
    out = np.empty((A.shape[0], B.shape[0]), dtype=np.int64)
    for i in numba.prange(A.shape[0]):
        _matmul_rows(A, B, n, out, i, i + 1)
    return out


def binary_dot(x, y, n: int) -> int:
    """Signed dot product of two packed +/-1 rows of true length n.

    Rows are uint64 word arrays or single-row PackedBitMatrix objects.
    """
    x = np.ascontiguousarray(x.payload[0] if isinstance(x, PackedBitMatrix) else x, dtype=np.uint64)
    y = np.ascontiguousarray(y.payload[0] if isinstance(y, PackedBitMatrix) else y, dtype=np.uint64)
    need = -(-n // 64)
    if n < 0 or x.size < need or y.size < need:
        raise ValueError("length mismatch between packed rows and n")
    return int(_dot_words(x, y, n))


def binary_matmul(A: PackedBitMatrix, B_t: PackedBitMatrix, parallel: bool = False) -> np.ndarray:
    """C = A @ B for +/-1 matrices, B given transposed (one packed row per column)."""
    if A.cols != B_t.cols:
        raise ValueError(f"inner dimensions differ: {A.cols} vs {B_t.cols}")
    kernel = _matmul_par if parallel else _matmul_seq
    return kernel(A.payload, B_t.payload, A.cols)


@numba.njit(cache=True)
def naive_matmul_f32(A, B_t):
    """Reference single-precision matmul, same operand layout as binary_matmul."""
    R, N = A.shape
    C = B_t.shape[0]
    out = np.empty((R, C), dtype=np.float32)
    for i in range(R):
        for j in range(C):
            acc = np.float32(0.0)
            for k in range(N):
                acc += A[i, k] * B_t[j, k]
            out[i, j] = acc
    return out


def _median_time(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_matmul(sizes, reps: int = 3, seed: int = 0, check: bool = True):
    """Time naive f32 matmul against binary_matmul on square +/-1 matrices.

    Both kernels are sequential, so the comparison is single-threaded.
    Returns a list of dicts with size, time_float_ms, time_binary_ms, speedup.
    """
    from .quant import pack_bits

    if reps < 1:
        raise ValueError("reps must be >= 1")
    sizes = list(sizes)
    if any(int(s) < 64 for s in sizes):
        raise ValueError("benchmark sizes must be >= 64")
    rng = np.random.default_rng(seed)
    report = []
    for n in sizes:
        n = int(n)
        a = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=(n, n))
        b = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=(n, n))
        bt = np.ascontiguousarray(b.T)
        pa, pb = pack_bits(a), pack_bits(bt)
        # warm-up doubles as an exactness check against real arithmetic
        c_bin = binary_matmul(pa, pb)
        c_flt = naive_matmul_f32(a, bt)
        if check and not np.array_equal(c_bin, c_flt.astype(np.int64)):
            raise AssertionError(f"binary matmul disagrees with float matmul at size {n}")
        tf = _median_time(lambda: naive_matmul_f32(a, bt), reps)
        tb = _median_time(lambda: binary_matmul(pa, pb), reps)
        report.append({"size": n, "time_float_ms": tf * 1e3, "time_binary_ms": tb * 1e3,
                       "speedup": tf / tb})
    return report


def write_bench_csv(path, report) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["size", "time_float_ms", "time_binary_ms", "speedup"])
        for r in report:
            w.writerow([r["size"], f"{r['time_float_ms']:.4f}", f"{r['time_binary_ms']:.4f}",
                        f"{r['speedup']:.3f}"])
