"""Brute-force references, independent of the code paths they check."""
import math

import numpy as np


def direct_conv(x, w, b=None):
    """Per-pixel, per-offset accumulation with explicit bounds checks."""
    c_out, c_in, f, _ = w.shape
    _, h, wd = x.shape
    r = f // 2
    out = np.zeros((c_out, h, wd))
    if b is not None:
        out += np.asarray(b)[:, None, None]
    for y in range(h):
        for xx in range(wd):
            for u in range(f):
                for v in range(f):
                    sy, sx = y + u - r, xx + v - r
                    if 0 <= sy < h and 0 <= sx < wd:
                        out[:, y, xx] += w[:, :, u, v] @ x[:, sy, sx]
    return out


def triple_loop_conv(x, w, b):
    """Scalar loops for tiny instances."""
    c_out, c_in, f, _ = w.shape
    _, h, wd = x.shape
    r = f // 2
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for y in range(h):
            for xx in range(wd):
                s = b[o]
                for i in range(c_in):
                    for u in range(f):
                        for v in range(f):
                            sy, sx = y + u - r, xx + v - r
                            if 0 <= sy < h and 0 <= sx < wd:
                                s += w[o, i, u, v] * x[i, sy, sx]
                out[o, y, xx] = s
    return out


def central_diff(fn, arr, idx, eps=1e-5):
    old = arr[idx]
    arr[idx] = old + eps
    hi = fn()
    arr[idx] = old - eps
    lo = fn()
    arr[idx] = old
    return (hi - lo) / (2 * eps)


def rel_err(a, b):
    denom = max(abs(a), abs(b))
    return 0.0 if denom == 0 else abs(a - b) / denom


def xent_direct(logits, labels, s):
    """-sum_k q_k log p_k, averaged, written out with plain math."""
    total = 0.0
    n, k = logits.shape
    for row, lab in zip(logits, labels):
        z = [math.exp(v) for v in row]
        zs = sum(z)
        for c in range(k):
            q = (1 - s) * (c == lab) + s / k
            total -= q * math.log(z[c] / zs)
    return total / n


def positional_norm_bruteforce(w, u, v):
    s = 0.0
    for o in range(w.shape[0]):
        for i in range(w.shape[1]):
            s += w[o, i, u, v] ** 2
    return math.sqrt(s)


def diagonal_members(c_out, c_in, c_n, bi, bo, j):
    """(o, i) kernel indices on diagonal j of block pair (bi, bo)."""
    out = []
    for o in range(bo * c_n, (bo + 1) * c_n):
        for i in range(bi * c_n, (bi + 1) * c_n):
            if (o % c_n) % c_n == (i % c_n + j) % c_n:
                out.append((o, i))
    return out


def diagonal_norm_bruteforce(w, c_n, bi, bo, j):
    s = 0.0
    for o, i in diagonal_members(w.shape[0], w.shape[1], c_n, bi, bo, j):
        for u in range(w.shape[2]):
            for v in range(w.shape[3]):
                s += w[o, i, u, v] ** 2
    return math.sqrt(s)


def lasso_bruteforce(w, c_n):
    f = w.shape[2]
    pos = sum(positional_norm_bruteforce(w, u, v) for u in range(f) for v in range(f))
    diag = 0.0
    for bi in range(w.shape[1] // c_n):
        for bo in range(w.shape[0] // c_n):
            for j in range(c_n):
                diag += diagonal_norm_bruteforce(w, c_n, bi, bo, j)
    return pos, diag


def pareto_bruteforce(points):
    """O(n^2) non-dominated filter on (accuracy, reduction) pairs, duplicates collapsed."""
    uniq = sorted(set((a, r) for a, r in points))
    keep = []
    for a, r in uniq:
        dominated = any(
            (a2 >= a and r2 >= r) and (a2 > a or r2 > r) for a2, r2 in uniq
        )
        if not dominated:
            keep.append((a, r))
    return sorted(keep, key=lambda p: p[1])
