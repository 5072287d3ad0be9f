"""Pure-Python/numpy reference versions of the compiled kernels in ``_kernels.pyx``."""

import math

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def fmix64(z):
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & MASK64
    z ^= z >> 31
    return z


def fnv1a64(data, basis=FNV_OFFSET):
    h = basis
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def hash_key(key, seed):
    return fmix64(fnv1a64(key, FNV_OFFSET ^ (int(seed) & MASK64)))


def hash_keys(keys, seed):
    s = int(seed) & MASK64
    basis = FNV_OFFSET ^ s
    return np.fromiter((fmix64(fnv1a64(k, basis)) for k in keys), dtype=np.uint64, count=len(keys))


def coalesce_rows(indptr, idx, vals):
    indptr = np.asarray(indptr, dtype=np.int64)
    idx = np.asarray(idx, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    n_rows = len(indptr) - 1
    if len(idx) == 0:
        return np.zeros(n_rows + 1, dtype=np.int64), idx.copy(), vals.copy()
    row = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(indptr))
    order = np.lexsort((idx, row))
    row, idx, vals = row[order], idx[order], vals[order]
    first = np.ones(len(idx), dtype=bool)
    first[1:] = (row[1:] != row[:-1]) | (idx[1:] != idx[:-1])
    starts = np.flatnonzero(first)
    out_val = np.add.reduceat(vals, starts) if len(vals) else vals
    out_idx = idx[starts]
    counts = np.bincount(row[starts], minlength=n_rows)
    out_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=out_ptr[1:])
    return out_ptr, out_idx, out_val


def sgd_epoch(rows, labels, emb, proj, bias, lr):
    n = rows.shape[0]
    losses = np.zeros(n, dtype=np.float64)
    fields = np.arange(rows.shape[1])
    for i in range(n):
        present = rows[i] >= 0
        r = rows[i][present]
        f = fields[present]
        e = emb[r]
        u = proj[f]
        # overflow here is reported through the non-finite loss below
        with np.errstate(over="ignore", invalid="ignore"):
            z = float(bias[0] + np.sum(u * e))
        y = float(labels[i])
        if z >= 0:
            p = 1.0 / (1.0 + math.exp(-z))
        else:
            p = math.exp(z) / (1.0 + math.exp(z))
        loss = max(z, 0.0) + math.log1p(math.exp(-abs(z))) - y * z
        losses[i] = loss
        if not math.isfinite(loss):
            return losses, i
        g = lr * (p - y)
        emb[r] = e - g * u
        proj[f] = u - g * e
        bias[0] -= g
    return losses, -1
