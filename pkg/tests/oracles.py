"""Independent reference implementations used to derive frozen test values.

Nothing here imports toeplab; each oracle is written from the definitions
with explicit loops so it can be read against the math directly.
"""

from __future__ import annotations

import math

import numpy as np


def toeplitz_entries(seq, n):
    """``T[i, j] = a_{i-j}`` with ``seq[k + n - 1] = a_k``."""
    t = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            t[i, j] = seq[i - j + n - 1]
    return t


def generalized_entries(seq_a, seq_b, n):
    """``a_{i-j}`` when ``i + j <= n`` (1-based) and ``b_{i-j}`` otherwise."""
    t = np.zeros((n, n), dtype=complex)
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            src = seq_a if i + j <= n else seq_b
            t[i - 1, j - 1] = src[i - j + n - 1]
    return t


def backward_identity(n):
    p = np.zeros((n, n))
    for i in range(n):
        p[i, n - 1 - i] = 1.0
    return p


def pairings(m):
    """All pair partitions of ``range(m)`` by first-element recursion."""
    if m == 0:
        return [[]]
    if m % 2:
        return []
    out = []
    items = list(range(m))

    def rec(rest, acc):
        if not rest:
            out.append(list(acc))
            return
        a = rest[0]
        for idx in range(1, len(rest)):
            b = rest[idx]
            rec(rest[1:idx] + rest[idx + 1:], acc + [(a, b)])

    rec(items, [])
    return out


def double_factorial(m):
    return math.prod(range(m, 0, -2)) if m > 0 else 1


def toeplitz_pairing_volume(pairing, res=100, chunk=1 << 22):
    """Volume of ``{x0 in [0,1], y in [-1,1]^k : every partial walk stays in [0,1]}``.

    The walk moves by ``+y_b`` at the first element of block ``b`` and by
    ``-y_b`` at the second, the symmetric Toeplitz matching rule. Midpoint
    rule with ``res`` points per axis.
    """
    m = 2 * len(pairing)
    steps = np.zeros((m, len(pairing)))
    for b, (r, s) in enumerate(pairing):
        steps[r, b], steps[s, b] = 1.0, -1.0
    mid = (np.arange(res) + 0.5) / res
    x_axis, y_axis = mid, 2 * mid - 1
    dims = 1 + len(pairing)
    total = 0.0
    # iterate over the y-grid in flattened chunks; x0 is vectorized
    ys = np.array(np.meshgrid(*([y_axis] * (dims - 1)), indexing="ij")).reshape(dims - 1, -1).T
    per = max(1, chunk // res)
    for lo in range(0, len(ys), per):
        y = ys[lo:lo + per]
        walk = np.cumsum(y @ steps.T, axis=1)  # (ny, m)
        pos = x_axis[None, :, None] + walk[:, None, :]
        ok = np.all((pos >= 0) & (pos <= 1), axis=2)
        total += ok.sum()
    return total / res ** dims * 2 ** (dims - 1)


def trace_by_loops(mats):
    """``Tr(M_1 ... M_k)`` by plain matrix products."""
    out = np.eye(mats[0].shape[0], dtype=complex)
    for m in mats:
        out = out @ m
    return complex(np.trace(out))


def toeplitz_pairing_volume_mc(pairing, points=1 << 22, seed=0):
    """Plain Monte Carlo version of :func:`toeplitz_pairing_volume`;
    returns ``(volume, standard_error)``."""
    k = len(pairing)
    steps = np.zeros((2 * k, k))
    for b, (r, s) in enumerate(pairing):
        steps[r, b], steps[s, b] = 1.0, -1.0
    rng = np.random.default_rng(seed)
    x0 = rng.random(points)
    y = 2 * rng.random((points, k)) - 1
    pos = x0[:, None] + np.cumsum(y @ steps.T, axis=1)
    f = float(np.all((pos >= 0) & (pos <= 1), axis=1).mean())
    box = 2.0 ** k
    return box * f, box * np.sqrt(f * (1 - f) / points)
