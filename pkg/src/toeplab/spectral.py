"""Self-adjoint matrix polynomials, Hermitian eigenvalues and empirical
spectral distributions."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .ensembles import _dense
from .limits import Integrator, limit_moment
from .model import NotSelfAdjoint, as_polynomial, double_factorial
from .trace import _map, _operator, hermitian_copies, realize_word

__all__ = [
    "NoConvergence", "realize_polynomial", "eigenvalues_hermitian", "jacobi_eigh",
    "ESDReport", "ESDStudy", "esd_report", "esd_study", "limit_moments", "JACOBI_MAX_N",
]

JACOBI_MAX_N = 128
SWEEP_CAP = 60


class NoConvergence(RuntimeError):
    pass


def realize_polynomial(Q, realized, n, spec=None, scaled=True):
    """Dense matrix of a self-adjoint polynomial for one realization.

    Random letters carry ``n**-0.5`` when ``scaled``. Toeplitz copies whose
    spec is Hermitian or real symmetric count as self-adjoint letters in
    the formal check.
    """
    Q = as_polynomial(Q)
    herm = hermitian_copies(Q, spec) if spec is not None else set()
    if not Q.is_self_adjoint(hermitian=herm):
        raise NotSelfAdjoint(f"polynomial {Q} is not self-adjoint")
    out = np.zeros((n, n), dtype=complex)
    for c, w in Q.terms:
        m = np.eye(n, dtype=complex)
        nrand = 0
        for x in w:
            op, adj = _operator(x, realized, n)
            d = _dense(op)
            m = m @ (d.conj().T if adj else d)
            nrand += x.kind.random
        out += c * m * (float(n) ** (-nrand / 2) if scaled else 1.0)
    scale = max(np.max(np.abs(out)), 1e-300)
    if np.max(np.abs(out - out.conj().T)) > 1e-10 * scale:
        raise NotSelfAdjoint("realized matrix is not Hermitian")
    return 0.5 * (out + out.conj().T)


# ---------------------------------------------------------------- Jacobi

@functools.lru_cache(maxsize=32)
def _schedule(m):
    """Round-robin pairings of ``0..m-1`` (``m`` even): ``m - 1`` rounds of
    ``m / 2`` disjoint pairs covering every pair once."""
    idx = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array([idx[i] for i in range(m // 2)])
        q = np.array([idx[m - 1 - i] for i in range(m // 2)])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        idx = [idx[0], idx[-1]] + idx[1:-1]
    return tuple(rounds)


def jacobi_eigh(a, tol=1e-11, max_sweeps=SWEEP_CAP, vectors=False):
    """Cyclic complex Jacobi on a Hermitian matrix.

    Each round rotates ``n/2`` disjoint ``(p, q)`` planes at once. Sweeps
    stop when the off-diagonal Frobenius mass is at most ``tol * ||A||_F``.
    Returns ``(eigenvalues, vectors or None)`` in diagonal order.
    """
    a = np.array(a, dtype=complex)
    n = a.shape[0]
    if n == 1:
        return a.real.diagonal().copy(), (np.eye(1, dtype=complex) if vectors else None)
    m = n + (n % 2)
    if m != n:
        pad = np.zeros((m, m), dtype=complex)
        pad[:n, :n] = a
        a = pad
    v = np.eye(m, dtype=complex) if vectors else None
    norm = np.linalg.norm(a)
    if norm == 0:
        return np.zeros(n), (np.eye(n, dtype=complex) if vectors else None)
    rounds = _schedule(m)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off <= tol * norm:
            break
        for p, q in rounds:
            apq = a[p, q]
            mag = np.abs(apq)
            live = mag > 1e-300
            phase = np.where(live, apq / np.where(live, mag, 1.0), 1.0)
            app, aqq = a[p, p].real, a[q, q].real
            tau = np.where(live, (aqq - app) / (2 * np.where(live, mag, 1.0)), 0.0)
            t = np.where(live, np.sign(tau + (tau == 0)) / (np.abs(tau) + np.sqrt(1 + tau * tau)), 0.0)
            c = 1 / np.sqrt(1 + t * t)
            s = t * c
            ph = np.conj(phase)  # e^{-i phi}
            # columns: A <- A V with V = [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cp - s * ph * cq
            a[:, q] = s * cp + c * ph * cq
            # rows: A <- V^H A
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - (s * phase)[:, None] * rq
            a[q, :] = s[:, None] * rp + (c * phase)[:, None] * rq
            if vectors:
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * ph * vq
                v[:, q] = s * vp + c * ph * vq
    else:
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off > tol * norm:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = a.diagonal().real[:n].copy()
    if vectors:
        v = v[:n, :n]
    return w, v


def eigenvalues_hermitian(a, tol=1e-11, method="auto", check=True, seed=0):
    """Sorted eigenvalues of a Hermitian matrix.

    ``method="jacobi"`` uses :func:`jacobi_eigh`; ``"lapack"`` uses
    ``numpy.linalg.eigvalsh``; ``"auto"`` picks Jacobi up to
    ``JACOBI_MAX_N``. With ``check`` the Jacobi path verifies
    ``||A v - lambda v|| <= 1e-8 ||A||_F`` on ten sampled pairs.
    """
    a = np.asarray(a)
    n = a.shape[0]
    scale = max(np.max(np.abs(a)), 1e-300) if a.size else 1.0
    if np.max(np.abs(a - a.conj().T), initial=0.0) > 1e-10 * scale:
        raise NotSelfAdjoint("matrix is not Hermitian")
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_N else "lapack"
    if method == "lapack":
        return np.sort(np.linalg.eigvalsh(a))
    if method != "jacobi":
        raise ValueError(f"unknown method {method!r}")
    w, v = jacobi_eigh(a, tol, vectors=check)
    if check and n:
        rng = np.random.default_rng(seed)
        fro = np.linalg.norm(a)
        for i in rng.choice(n, size=min(10, n), replace=False):
            r = np.linalg.norm(a @ v[:, i] - w[i] * v[:, i])
            if r > 1e-8 * max(fro, 1e-300):
                raise NoConvergence(f"eigenpair residual {r:.3g} too large")
    return np.sort(w)


# ---------------------------------------------------------------- ESD

@dataclass(frozen=True)
class ESDReport:
    eigenvalues: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    moments: tuple
    n: int
    seed: int
    polynomial: str


def esd_report(eigs, n, seed, descriptor, max_moment=8, bins="fd"):
    eigs = np.sort(np.asarray(eigs, dtype=float))
    edges = np.histogram_bin_edges(eigs, bins=bins)
    counts, _ = np.histogram(eigs, bins=edges)
    moments = tuple(float(np.mean(eigs ** j)) for j in range(1, max_moment + 1))
    return ESDReport(eigs, edges, counts, moments, n, seed, descriptor)


def limit_moments(Q, spec=None, symbols=None, max_moment=8, integ=None):
    """Limit moments ``phi(Q^j)`` for ``j = 1..max_moment`` through the word
    expansion of each power."""
    Q = as_polynomial(Q)
    integ = integ or Integrator(samples=1 << 16, replicates=8)
    vals, ses = [], []
    for j in range(1, max_moment + 1):
        tot, var = 0j, 0.0
        for c, w in Q.power(j).terms:
            r = limit_moment(w, spec, symbols, integ)
            tot += c * r.value
            var += (abs(c) * r.se) ** 2
        vals.append(complex(tot))
        ses.append(float(np.sqrt(var)))
    return vals, ses


def _esd_one(rep, Q, spec, symbols, n, seed, method):
    word = tuple(x for _, w in Q.terms for x in w)
    mats = realize_word(word, n, spec, symbols, seed, rep)
    return eigenvalues_hermitian(realize_polynomial(Q, mats, n, spec), method=method)


@dataclass(frozen=True)
class ESDStudy:
    """Per-n empirical moments with standard errors next to the limits;
    ``reports[n]`` holds one :class:`ESDReport` per replicate."""

    reports: dict
    empirical: dict
    empirical_se: dict
    limits: tuple
    limit_se: tuple
    gaussian_bound: dict
    polynomial: str

    def to_dict(self):
        return {
            "polynomial": self.polynomial,
            "limits": [[v.real, v.imag] for v in self.limits],
            "limit_se": list(self.limit_se),
            "gaussian_bound": {str(k): v for k, v in self.gaussian_bound.items()},
            "per_n": {str(n): {"moments": list(self.empirical[n]),
                               "se": list(self.empirical_se[n])} for n in self.empirical},
        }


def gaussian_bound(limits):
    """``m_{2k} <= (2k-1)!! m_2^k`` for every even moment available."""
    m2 = limits[1].real
    out = {}
    for j in range(2, len(limits) + 1, 2):
        k = j // 2
        out[j] = bool(limits[j - 1].real <= double_factorial(2 * k - 1) * m2 ** k + 1e-9)
    return out


def esd_study(Q, spec=None, n_list=(256,), replicates=10, seed=0, max_moment=8,
              symbols=None, integ=None, method="auto", with_limits=True):
    """Empirical spectral moments of ``Q`` over sizes ``n_list``, compared with
    the limit moments and the Gaussian moment bound."""
    Q = as_polynomial(Q)
    reports, emp, emp_se = {}, {}, {}
    for n in n_list:
        fn = functools.partial(_esd_one, Q=Q, spec=spec, symbols=symbols, n=n, seed=seed,
                               method=method)
        eig_sets = _map(fn, range(replicates))
        per = np.array([[np.mean(e ** j) for j in range(1, max_moment + 1)] for e in eig_sets])
        emp[n] = tuple(per.mean(axis=0))
        emp_se[n] = tuple(per.std(axis=0, ddof=1) / np.sqrt(replicates)) if replicates > 1 \
            else tuple([float("inf")] * max_moment)
        reports[n] = [esd_report(e, n, seed, str(Q), max_moment) for e in eig_sets]
    if with_limits:
        lims, lse = limit_moments(Q, spec, symbols, max_moment, integ)
        bound = gaussian_bound(lims)
    else:
        lims, lse, bound = (), (), {}
    return ESDStudy(reports, emp, emp_se, tuple(lims), tuple(lse), bound, str(Q))
