"""Pair partitions of ``{1..2k}`` and the sign maps of the limit formulas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PairPartition, double_factorial

__all__ = ["OddSize", "ShapeMismatch", "SignMaps", "enumerate_pairings", "count_pairings",
           "sign_maps", "segment_of"]


class OddSize(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


def enumerate_pairings(size: int):
    """All pair partitions of ``{1..size}`` in canonical order.

    The smallest unmatched element is always matched first, walking partners
    in increasing order, so the list order is deterministic.
    """
    if size % 2:
        raise OddSize(f"cannot pair an odd set of size {size}")
    if size == 0:
        return [PairPartition(())]
    out = []
    # stack of (remaining elements, blocks so far)
    stack = [(tuple(range(1, size + 1)), ())]
    while stack:
        rest, blocks = stack.pop()
        if not rest:
            out.append(PairPartition(blocks))
            continue
        first = rest[0]
        # push in reverse so the smallest partner is expanded first
        for i in range(len(rest) - 1, 0, -1):
            stack.append((rest[1:i] + rest[i + 1:], blocks + ((first, rest[i]),)))
    return out


def count_pairings(size: int) -> int:
    if size % 2:
        raise OddSize(size)
    return double_factorial(size - 1)


def pairing_arrays(size: int):
    """Pairings as an int array ``(count, size)`` of block labels ``0..k-1``
    and a boolean array marking block openers; fast path for large ``k``."""
    pairings = enumerate_pairings(size)
    labels = np.array([[t - 1 for t in p.proj] for p in pairings], dtype=np.int64)
    opener = np.zeros_like(labels, dtype=bool)
    for row, p in enumerate(pairings):
        for r, _ in p.blocks:
            opener[row, r - 1] = True
    return labels, opener


def segment_of(k_cum, size):
    """Segment number (1-based) of each position given cumulative lengths."""
    seg = np.zeros(size, dtype=int)
    start = 0
    for c, kc in enumerate(k_cum, start=1):
        seg[start:kc] = c
        start = kc
    return seg


@dataclass(frozen=True)
class SignMaps:
    eps_prime: tuple
    eps_pi: tuple
    xi: tuple
    nu: tuple
    eta: tuple


def sign_maps(pi: PairPartition, eps, k_cum=None, hankel=False) -> SignMaps:
    """Sign maps of a pairing for star vector ``eps``.

    ``eps`` holds +1 (plain) or -1 (adjoint); strings ``"1"``/``"*"`` are
    accepted. ``k_cum`` gives cumulative P-segment lengths; ``nu`` is +1 on
    even segments and -1 on odd ones. Without ``k_cum`` every position is its
    own segment (the symmetric-Hankel convention ``nu_t = (-1)^t``).
    ``eta`` follows the (T,P) rule when ``k_cum`` is given and ``hankel`` is
    false, and the Hankel rule otherwise.
    """
    e = tuple(_eps(x) for x in eps)
    size = 2 * pi.k
    if len(e) != size:
        raise ShapeMismatch(f"star vector has length {len(e)}, pairing needs {size}")
    if k_cum is not None:
        if not k_cum or k_cum[-1] != size or any(b < a for a, b in zip(k_cum, k_cum[1:])):
            raise ShapeMismatch("segment lengths inconsistent with the word")
        seg = segment_of(k_cum, size)
    else:
        seg = np.arange(1, size + 1)
    nu = tuple(1 if c % 2 == 0 else -1 for c in seg)
    eps_pi = [0] * size
    xi = [1] * size
    eta = [1] * size
    for r, s in pi.blocks:
        eps_pi[r - 1], eps_pi[s - 1] = -1, 1
        xi[r - 1] = -1 if e[r - 1] == e[s - 1] else 1
        if k_cum is not None and not hankel:
            same = e[r - 1] * e[s - 1] == nu[r - 1] * nu[s - 1]
        else:
            same = nu[r - 1] == nu[s - 1]
        eta[s - 1] = -1 if same else 1
    return SignMaps(e, tuple(eps_pi), tuple(xi), nu, tuple(eta))


def _eps(x):
    if isinstance(x, (bool, np.bool_)):
        return -1 if x else 1
    if x is None or x == 1 or x == "1":
        return 1
    if x == -1 or x == "*":
        return -1
    raise ValueError(f"bad star marker {x!r}")
