"""Correlated input sequences and structured matrices.

Sequences are stored as arrays ``seq[k + n - 1] = a_k`` for
``k = -(n-1) .. n-1``. Matrices are kept in that compact form and only
expanded by :func:`to_dense` on request.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .model import (Base, CorrelationSpec, DeterministicSymbol, Flavor, SpecError,
                    covariance_factor, validate_spec)

__all__ = [
    "MatrixKind", "StructuredMatrix", "InvalidFlavor", "DimensionMismatch",
    "make_rng", "sample_pair_reflected", "sample_generalized", "realize", "to_dense",
    "matvec", "apply", "symbol_sequence", "DENSE_CAP", "FFT_THRESHOLD",
]

DENSE_CAP = 512
FFT_THRESHOLD = 256


class InvalidFlavor(SpecError):
    pass


class DimensionMismatch(ValueError):
    pass


class MatrixKind(enum.Enum):
    TOEPLITZ = "Toeplitz"
    GEN_TOEPLITZ = "GenToeplitz"
    DET_TOEPLITZ = "DetToeplitz"
    DET_GEN_TOEPLITZ = "DetGenToeplitz"
    BACKWARD_IDENTITY = "BackwardIdentity"


def make_rng(seed, *stream):
    """Counter-based generator keyed by ``seed`` and a stream path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def _base_draws(rng, base, shape):
    if base is Base.GAUSSIAN:
        return rng.standard_normal(shape)
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def sample_pair_reflected(spec: CorrelationSpec, n: int, seed=0, stream=()):
    """Draw ``a_{-(n-1)} .. a_{n-1}`` for the pair-reflected flavors."""
    if spec.flavor is Flavor.GENERALIZED:
        raise InvalidFlavor("use sample_generalized for the generalized flavor")
    validate_spec(spec)
    rng = make_rng(seed, *stream)
    m = n - 1
    seq = np.zeros(2 * n - 1, dtype=complex)
    fl = spec.flavor
    if fl is Flavor.HERMITIAN:
        c2 = np.array([[spec.sigma_x2, spec.rho[0]], [spec.rho[0], spec.sigma_y2]])
        f = _factor2(c2)
        xy = _base_draws(rng, spec.base, (n, f.shape[1])) @ f.T
        a = xy[:, 0] + 1j * xy[:, 1]
        seq[m:] = a
        seq[m] = a[0].real
        seq[:m] = np.conj(a[1:])[::-1]
        return seq
    if fl is Flavor.REAL_SYMMETRIC:
        x = np.sqrt(spec.sigma_x2) * _base_draws(rng, spec.base, n)
        seq[m:] = x
        seq[:m] = x[1:][::-1]
        return seq
    f = covariance_factor(spec)
    q = _base_draws(rng, spec.base, (m, f.shape[1])) @ f.T
    seq[m + 1:] = q[:, 0] + 1j * q[:, 1]
    seq[:m] = (q[:, 2] + 1j * q[:, 3])[::-1]
    # the diagonal entry keeps only the (x, y) correlation
    c2 = np.array([[spec.sigma_x2, spec.rho[0]], [spec.rho[0], spec.sigma_y2]])
    xy = _base_draws(rng, spec.base, _factor2(c2).shape[1]) @ _factor2(c2).T
    seq[m] = xy[0] + 1j * xy[1]
    return seq


def _factor2(c2):
    from .model import pivoted_cholesky
    return pivoted_cholesky(c2)


def sample_generalized(spec: CorrelationSpec, n: int, seed=0, stream=()):
    """Draw the two sequences ``(a, b)`` of a generalized Toeplitz matrix."""
    if spec.flavor is not Flavor.GENERALIZED:
        raise InvalidFlavor("sample_generalized needs the generalized flavor")
    if spec.reflected_corr != 0:
        raise InvalidFlavor("reflected-pair correlation is not supported in the generalized model")
    validate_spec(spec)
    rng = make_rng(seed, *stream)
    f = covariance_factor(spec)
    q = _base_draws(rng, spec.base, (2 * n - 1, f.shape[1])) @ f.T
    return q[:, 0] + 1j * q[:, 1], q[:, 2] + 1j * q[:, 3]


def symbol_sequence(symbol: DeterministicSymbol, n: int):
    return symbol.values(np.arange(-(n - 1), n))


@dataclass(frozen=True, eq=False)
class StructuredMatrix:
    """An ``n x n`` Toeplitz-family matrix stored by its defining sequences."""

    kind: MatrixKind
    n: int
    a: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        for s in (self.a, self.b):
            if s is not None and len(s) != 2 * self.n - 1:
                raise DimensionMismatch(f"sequence length {len(s)} does not match n={self.n}")

    @property
    def generalized(self):
        return self.kind in (MatrixKind.GEN_TOEPLITZ, MatrixKind.DET_GEN_TOEPLITZ)

    def fft_symbol(self, size, adjoint=False):
        """Cached FFT of the circulant embedding of the first sequence."""
        key = (size, adjoint)
        cache = self.__dict__.setdefault("_fft", {})
        if key not in cache:
            cache[key] = sfft.fft(_circulant_column(self.a, self.n, size, adjoint))
        return cache[key]


def realize(kind, sequences, n):
    kind = MatrixKind(kind)
    if kind is MatrixKind.BACKWARD_IDENTITY:
        return StructuredMatrix(kind, n)
    if kind in (MatrixKind.GEN_TOEPLITZ, MatrixKind.DET_GEN_TOEPLITZ):
        a, b = sequences
        return StructuredMatrix(kind, n, np.asarray(a, complex), np.asarray(b, complex))
    a = sequences[0] if isinstance(sequences, tuple) else sequences
    return StructuredMatrix(kind, n, np.asarray(a, complex))


def _toeplitz_dense(seq, n):
    i = np.arange(n)
    return seq[(i[:, None] - i[None, :]) + n - 1]


def to_dense(m: StructuredMatrix, cap=DENSE_CAP):
    n = m.n
    if n > cap:
        raise DimensionMismatch(f"dense form refused above n={cap}")
    return _dense(m)


def _dense(m):
    n = m.n
    if m.kind is MatrixKind.BACKWARD_IDENTITY:
        return np.eye(n, dtype=complex)[::-1].copy()
    ta = _toeplitz_dense(m.a, n)
    if not m.generalized:
        return ta
    i = np.arange(1, n + 1)
    upper = (i[:, None] + i[None, :]) <= n
    return np.where(upper, ta, _toeplitz_dense(m.b, n))


def _circulant_column(seq, n, size, adjoint):
    # first column of the circulant that embeds T (or T^*)
    col = np.zeros(size, dtype=complex)
    s = np.conj(seq[::-1]) if adjoint else seq
    col[:n] = s[n - 1:]
    col[size - (n - 1):] = s[:n - 1]
    return col


def _fft_size(n):
    return 1 << int(np.ceil(np.log2(2 * n - 1)))


def apply(m: StructuredMatrix, x, adjoint=False, method="auto"):
    """Multiply ``m`` (or its adjoint) into ``x`` of shape ``(n,)`` or ``(n, k)``."""
    x = np.asarray(x)
    n = m.n
    if x.shape[0] != n:
        raise DimensionMismatch(f"vector length {x.shape[0]} != {n}")
    if m.kind is MatrixKind.BACKWARD_IDENTITY:
        return x[::-1].copy()
    if m.generalized:
        d = m.__dict__.get("_dense")
        if d is None:
            d = m.__dict__.setdefault("_dense", _dense(m))
        return (d.conj().T if adjoint else d) @ x
    if method == "direct" or (method == "auto" and n <= FFT_THRESHOLD):
        d = _toeplitz_dense(m.a, n)
        return (d.conj().T if adjoint else d) @ x
    size = _fft_size(n)
    lam = m.fft_symbol(size, adjoint)
    xf = sfft.fft(x, n=size, axis=0)
    if x.ndim == 2:
        xf *= lam[:, None]
    else:
        xf *= lam
    return sfft.ifft(xf, axis=0)[:n]


def _effective(m, adjoint):
    # sequence whose Toeplitz matrix equals m or m^*
    return np.conj(m.a[::-1]) if adjoint else m.a


def toeplitz_product(m1: StructuredMatrix, m2: StructuredMatrix, adj1=False, adj2=False):
    """Dense product of two plain Toeplitz matrices in ``O(n^2)``.

    With ``C = A B`` the entries satisfy
    ``C[i+1, j+1] = C[i, j] + a_{i+1} b_{-1-j} - a_{i+1-n} b_{n-1-j}``, so the
    first row and column plus one rank-two update per row give all of ``C``.
    """
    n = m1.n
    if m1.generalized or m2.generalized or m2.n != n:
        raise DimensionMismatch("toeplitz_product takes two plain Toeplitz matrices of one size")
    al, be = _effective(m1, adj1), _effective(m2, adj2)
    c = np.empty((n, n), dtype=complex)
    e0 = np.zeros(n)
    e0[0] = 1.0
    c[:, 0] = apply(m1, apply(m2, e0, adj2), adj1)
    c[0, :] = apply(m2, apply(m1, e0, not adj1), not adj2).conj()
    if n == 1:
        return c
    u1 = al[n:]            # a_{i+1}, i = 0..n-2
    u2 = al[:n - 1]        # a_{i+1-n}
    v1 = be[n - 2::-1]     # b_{-1-j}, j = 0..n-2
    v2 = be[::-1][:n - 1]  # b_{n-1-j}
    for i in range(n - 1):
        c[i + 1, 1:] = c[i, :-1] + u1[i] * v1 - u2[i] * v2
    return c


def matvec(m: StructuredMatrix, v, adjoint=False, method="auto"):
    v = np.asarray(v)
    if v.ndim != 1:
        raise DimensionMismatch("matvec takes a vector")
    return apply(m, v, adjoint, method)
