"""Exact traces of monomial words, index-sum trace formulas, and Monte Carlo
estimates of ``phi_n = (1/n) E Tr``."""

from __future__ import annotations

import csv
import enum
import functools
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ensembles import (MatrixKind, StructuredMatrix, _dense, apply, toeplitz_product, make_rng, realize,
                        sample_generalized, sample_pair_reflected, symbol_sequence)
from .model import (Flavor, Kind, as_polynomial, NotSelfAdjoint, Polynomial, as_word, format_word, normalize_word,
                    segment_word)

__all__ = [
    "TraceMethod", "TraceResult", "MissingCopy", "TooLarge", "realize_word", "trace_word",
    "trace_formula_toeplitz", "trace_formula_with_P", "trace_formula_generalized",
    "hutchinson_trace", "PhiEstimate", "empirical_phi", "ConcentrationResult",
    "concentration_probe", "write_replicate_csv", "worker_count", "hermitian_copies",
]

FORMULA_MAX_N = 16
FORMULA_MAX_LEN = 5


class MissingCopy(KeyError):
    pass


class TooLarge(ValueError):
    pass


class TraceMethod(enum.Enum):
    DENSE = "DensePropagation"
    STRUCTURED = "StructuredPropagation"
    INDEX_SUM = "IndexSumFormula"
    HUTCHINSON = "Hutchinson"


@dataclass(frozen=True)
class TraceResult:
    value: complex
    method: TraceMethod
    n: int
    se: float = 0.0


# ---------------------------------------------------------------- realization

def _pick(obj, copy):
    if isinstance(obj, dict):
        if copy not in obj:
            raise MissingCopy(f"no specification for copy {copy}")
        return obj[copy]
    if obj is None:
        raise MissingCopy(f"no specification for copy {copy}")
    return obj


def realize_word(word, n, spec=None, symbols=None, seed=0, replicate=0):
    """Draw every matrix a word needs; keys are ``(Kind, copy)``.

    Random copies use the stream ``(replicate, family, copy)`` so a copy is
    identical across words within one replicate.
    """
    mats = {}
    for x in as_word(word):
        key = (x.kind, x.copy)
        if x.kind is Kind.P or key in mats:
            continue
        if x.kind is Kind.T:
            seq = sample_pair_reflected(_pick(spec, x.copy), n, seed, (replicate, 1, x.copy))
            mats[key] = realize(MatrixKind.TOEPLITZ, seq, n)
        elif x.kind is Kind.TG:
            a, b = sample_generalized(_pick(spec, x.copy), n, seed, (replicate, 2, x.copy))
            mats[key] = realize(MatrixKind.GEN_TOEPLITZ, (a, b), n)
        elif x.kind is Kind.D:
            sym = _pick(symbols, x.copy)
            mats[key] = realize(MatrixKind.DET_TOEPLITZ, symbol_sequence(sym, n), n)
        else:
            sym = _pick(symbols, x.copy)
            mats[key] = realize(MatrixKind.DET_GEN_TOEPLITZ,
                                (symbol_sequence(sym, n), symbol_sequence(sym.second, n)), n)
    return mats


_PCACHE: dict = {}


def _backward(n):
    m = _PCACHE.get(n)
    if m is None:
        m = _PCACHE.setdefault(n, StructuredMatrix(MatrixKind.BACKWARD_IDENTITY, n))
    return m


def _operator(letter, mats, n):
    if letter.kind is Kind.P:
        return _backward(n), False
    key = (letter.kind, letter.copy)
    if key not in mats:
        raise MissingCopy(f"letter {letter} has no realized matrix")
    m = mats[key]
    if m.n != n:
        raise ValueError(f"matrix for {letter} has dimension {m.n}, expected {n}")
    return m, letter.star


def _transpose(m: StructuredMatrix, adjoint: bool):
    """Structured matrix equal to the transpose of ``m`` (or of ``m^*``)."""
    if m.kind is MatrixKind.BACKWARD_IDENTITY:
        return m
    cache = m.__dict__.setdefault("_transposes", {})
    if adjoint not in cache:
        f = np.conj if adjoint else (lambda s: s[::-1])
        seqs = (f(m.a),) if m.b is None else (f(m.a), f(m.b))
        cache[adjoint] = StructuredMatrix(m.kind, m.n, *seqs)
    return cache[adjoint]


def _dense_op(m, adjoint):
    d = _dense(m)
    return d.conj().T if adjoint else d


def _plain(m):
    return m.kind in (MatrixKind.TOEPLITZ, MatrixKind.DET_TOEPLITZ)


def _is_p(m):
    return m.kind is MatrixKind.BACKWARD_IDENTITY


def _propagate(ops):
    """Product ``M_1 ... M_h`` built by pushing the identity through the
    letters from the right. A trailing ``P`` becomes a column flip and a
    trailing pair of plain Toeplitz letters is multiplied directly."""
    flip = len(ops) > 1 and _is_p(ops[-1][0])
    if flip:
        ops = ops[:-1]
    x = None
    if len(ops) >= 2 and all(_plain(m) for m, _ in ops[-2:]):
        (m1, a1), (m2, a2) = ops[-2:]
        x, ops = toeplitz_product(m1, m2, a1, a2), ops[:-2]
    for m, adj in reversed(ops):
        x = _dense_op(m, adj) if x is None else apply(m, x, adj)
    return x[:, ::-1] if flip else x


def _half_cost(ops):
    if ops and _is_p(ops[-1][0]):
        ops = ops[:-1]
    if len(ops) >= 2 and all(_plain(m) for m, _ in ops[-2:]):
        ops = ops[:-2]
    return sum(0 if _is_p(m) else (1 if _plain(m) else 4) for m, _ in ops)


def _split(ops):
    h = len(ops) // 2
    left = [(_transpose(m, adj), False) for m, adj in reversed(ops[:h])]
    return left, ops[h:]


def _best_rotation(ops):
    best, cost = ops, None
    for r in range(len(ops)):
        rot = ops[r:] + ops[:r]
        left, right = _split(rot)
        c = _half_cost(left) + _half_cost(right)
        if cost is None or c < cost:
            best, cost = rot, c
    return best


def trace_word(word, realized, n, method="structured", scaled=True):
    """Trace of a normalized word for one realization.

    Each random letter carries a factor ``n**-0.5`` when ``scaled``. The
    structured method forms the right half of the word by propagation, the
    transpose of the left half likewise, and contracts the two.
    """
    word = normalize_word(word)
    nrand = sum(1 for x in word if x.kind.random)
    scale = float(n) ** (-nrand / 2) if scaled else 1.0
    if not word:
        return TraceResult(complex(n), TraceMethod(_method_name(method)), n)
    ops = [_operator(x, realized, n) for x in word]
    if method == "dense":
        prod = _dense_op(*ops[0])
        for m, adj in ops[1:]:
            prod = prod @ _dense_op(m, adj)
        return TraceResult(complex(np.trace(prod)) * scale, TraceMethod.DENSE, n)
    if len(ops) == 1:
        m, adj = ops[0]
        val = np.trace(_dense_op(m, adj))
    else:
        left, right = _split(_best_rotation(ops))
        val = np.sum(_propagate(left) * _propagate(right))
    return TraceResult(complex(val) * scale, TraceMethod.STRUCTURED, n)


def _method_name(method):
    return {"dense": "DensePropagation", "structured": "StructuredPropagation"}.get(
        method, "StructuredPropagation")


def hutchinson_trace(word, realized, n, probes=64, seed=0, scaled=True):
    """Stochastic trace estimate with Rademacher probes (exploration only)."""
    word = normalize_word(word)
    nrand = sum(1 for x in word if x.kind.random)
    scale = float(n) ** (-nrand / 2) if scaled else 1.0
    rng = make_rng(seed, 7)
    z = rng.integers(0, 2, size=(n, probes)).astype(float) * 2 - 1
    x = z.astype(complex)
    for letter in reversed(word):
        m, adj = _operator(letter, realized, n)
        x = apply(m, x, adj)
    est = np.sum(z * x, axis=0) * scale
    se = float(np.std(est.real, ddof=1) / np.sqrt(probes)) if probes > 1 else float("inf")
    return TraceResult(complex(est.mean()), TraceMethod.HUTCHINSON, n, se)


# ---------------------------------------------------------------- index sums

def _check_caps(n, length):
    if n > FORMULA_MAX_N or length > FORMULA_MAX_LEN:
        raise TooLarge(f"index-sum formulas are capped at n <= {FORMULA_MAX_N} and length <= "
                       f"{FORMULA_MAX_LEN} (got n={n}, length={length})")


def _coef_table(letter, realized, n, second=False):
    m, adj = _operator(letter, realized, n)
    seq = m.b if second else m.a
    return np.conj(seq) if adj else seq


def _index_grid(n, count):
    r = np.arange(-(n - 1), n)
    if count == 0:
        return np.zeros((1, 0), dtype=np.int64)
    g = np.stack(np.meshgrid(*([r] * count), indexing="ij"), axis=-1)
    return g.reshape(-1, count)


def trace_formula_toeplitz(word, realized, n, scaled=True):
    """Trace of a word of Toeplitz letters by the explicit index sum

    ``sum_j sum_i prod_t a^{eps_t}_{i_t} prod_l chi(j + sum_{t>=l} eps'_t i_t)``
    restricted to ``sum_t eps'_t i_t = 0``.
    """
    word = as_word(word)
    _check_caps(n, len(word))
    if any(x.kind not in (Kind.T, Kind.D) for x in word):
        raise ValueError("trace_formula_toeplitz takes Toeplitz letters only")
    nrand = sum(1 for x in word if x.kind.random)
    scale = float(n) ** (-nrand / 2) if scaled else 1.0
    L = len(word)
    if L == 0:
        return TraceResult(complex(n), TraceMethod.INDEX_SUM, n)
    eps = np.array([x.eps for x in word])
    tabs = [_coef_table(x, realized, n) for x in word]
    free = _index_grid(n, L - 1)
    last = -eps[-1] * (free @ eps[:-1])
    keep = np.abs(last) <= n - 1
    idx = np.concatenate([free[keep], last[keep, None]], axis=1)
    coef = np.ones(len(idx), dtype=complex)
    for t in range(L):
        coef *= tabs[t][idx[:, t] + n - 1]
    # partial sums from the right: steps of letters l..L
    steps = idx * eps
    tails = np.cumsum(steps[:, ::-1], axis=1)[:, ::-1]
    total = 0j
    for j in range(1, n + 1):
        pos = j + tails
        ok = np.all((pos >= 1) & (pos <= n), axis=1)
        total += coef[ok].sum()
    return TraceResult(total * scale, TraceMethod.INDEX_SUM, n)


def _segment_frame(word, n):
    p, segments, k = segment_word(word)
    letters = [x for s in segments for x in s]
    seg_of = np.concatenate([[c] * len(s) for c, s in enumerate(segments, start=1)]).astype(int) \
        if letters else np.zeros(0, int)
    return p, letters, seg_of, k


def _frame_positions(idx, eps, seg_of, p, j):
    """Positions in the reflected frame after each letter acts (the
    ``m_{k,e}`` arguments) together with the source positions."""
    steps = idx * eps
    sign = np.where((p - seg_of) % 2 == 0, 1, -1)
    K = steps.shape[1]
    after = np.empty(steps.shape, dtype=np.int64)
    before = np.empty(steps.shape, dtype=np.int64)
    outer = np.zeros(len(steps), dtype=np.int64)
    start = K
    for e in range(p, 0, -1):
        cols = np.nonzero(seg_of == e)[0]
        if len(cols):
            lo, hi = cols[0], cols[-1] + 1
            inner = np.cumsum(steps[:, lo:hi][:, ::-1], axis=1)[:, ::-1]
            s = sign[lo]
            after[:, lo:hi] = j + s * inner + outer[:, None]
            before[:, lo:hi - 1] = after[:, lo + 1:hi]
            before[:, hi - 1] = j + outer
            outer = outer + s * inner[:, 0]
        start = cols[0] if len(cols) else start
    return after, before, outer


def trace_formula_with_P(word, realized, n, scaled=True):
    """Trace of a word mixing ``P`` and Toeplitz letters by the index sum
    over P-segments.

    With segment sums ``S_c`` and ``p`` P-letters, the closing constraint is
    ``sum_c (-1)^{p-c} S_c = 0`` for even ``p`` and ``= n + 1 - 2j`` for odd
    ``p``.
    """
    word = normalize_word(word)
    _check_caps(n, len(word))
    if not any(x.kind is Kind.P for x in word):
        return trace_formula_toeplitz(word, realized, n, scaled)
    p, letters, seg_of, _ = _segment_frame(word, n)
    if any(x.kind not in (Kind.T, Kind.D) for x in letters):
        raise ValueError("trace_formula_with_P takes P and Toeplitz letters only")
    nrand = sum(1 for x in letters if x.kind.random)
    scale = float(n) ** (-nrand / 2) if scaled else 1.0
    K = len(letters)
    eps = np.array([x.eps for x in letters], dtype=np.int64)
    idx = _index_grid(n, K)
    coef = np.ones(len(idx), dtype=complex)
    for t, x in enumerate(letters):
        coef *= _coef_table(x, realized, n)[idx[:, t] + n - 1]
    total = 0j
    for j in range(1, n + 1):
        after, _, closing = _frame_positions(idx, eps, seg_of, p, j)
        ok = np.all((after >= 1) & (after <= n), axis=1)
        alt = closing  # sum_c (-1)^{p-c} S_c
        ok &= (alt == 0) if p % 2 == 0 else (alt == n + 1 - 2 * j)
        total += coef[ok].sum()
    return TraceResult(total * scale, TraceMethod.INDEX_SUM, n)


def _in_a(x, step, n):
    # A_i = [max(1, 1 - i), (n - i)/2] with i the signed step
    return (x >= np.maximum(1, 1 - step)) & (2 * x <= n - step)


def _in_b(x, step, n):
    return (2 * x > n - step) & (x <= np.minimum(n - step, n))


def trace_formula_generalized(word, realized, n, scaled=True):
    """Index-sum trace for generalized Toeplitz letters, optionally with P.

    A letter with signed step ``i`` at source row ``x`` reads its ``a`` entry
    when ``x`` lies in ``A_i = [max(1, 1-i), (n-i)/2]`` and its ``b`` entry
    when ``x`` lies in ``B_i = ((n-i)/2, min(n-i, n)]``. The source is the
    position before the letter acts, in true (unreflected) coordinates.
    """
    word = normalize_word(word)
    _check_caps(n, len(word))
    has_p = any(x.kind is Kind.P for x in word)
    if has_p:
        p, letters, seg_of, _ = _segment_frame(word, n)
    else:
        p, letters, seg_of = 0, list(word), np.ones(len(word), dtype=int) * 0
    if any(x.kind not in (Kind.TG, Kind.DG, Kind.T, Kind.D) for x in letters):
        raise ValueError("unexpected letter")
    nrand = sum(1 for x in letters if x.kind.random)
    scale = float(n) ** (-nrand / 2) if scaled else 1.0
    K = len(letters)
    if K == 0:
        return trace_formula_with_P(word, realized, n, scaled)
    eps = np.array([x.eps for x in letters], dtype=np.int64)
    tab_a = [_coef_table(x, realized, n) for x in letters]
    tab_b = [_coef_table(x, realized, n, second=x.kind.generalized) for x in letters]
    if has_p:
        idx = _index_grid(n, K)
    else:
        free = _index_grid(n, K - 1)
        last = -eps[-1] * (free @ eps[:-1])
        keep = np.abs(last) <= n - 1
        idx = np.concatenate([free[keep], last[keep, None]], axis=1)
    steps = idx * eps
    reflected = ((p - seg_of) % 2 == 1) if has_p else np.zeros(K, bool)
    total = 0j
    for j in range(1, n + 1):
        if has_p:
            after, before, closing = _frame_positions(idx, eps, seg_of, p, j)
            ok = np.all((after >= 1) & (after <= n), axis=1)
            ok &= (closing == 0) if p % 2 == 0 else (closing == n + 1 - 2 * j)
            src = np.where(reflected, n + 1 - before, before)
        else:
            tails = np.cumsum(steps[:, ::-1], axis=1)[:, ::-1]
            before = np.concatenate([j + tails[:, 1:], np.full((len(idx), 1), j)], axis=1)
            src = before
            ok = np.ones(len(idx), bool)
        if not ok.any():
            continue
        s, st, ix = src[ok], steps[ok], idx[ok]
        prod = np.ones(len(s), dtype=complex)
        for t in range(K):
            ina = _in_a(s[:, t], st[:, t], n)
            inb = _in_b(s[:, t], st[:, t], n)
            prod *= np.where(ina, tab_a[t][ix[:, t] + n - 1], 0) + \
                np.where(inb, tab_b[t][ix[:, t] + n - 1], 0)
        total += prod.sum()
    return TraceResult(total * scale, TraceMethod.INDEX_SUM, n)


# ---------------------------------------------------------------- Monte Carlo

def worker_count():
    try:
        return max(1, int(os.environ.get("TOEPLAB_WORKERS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    w = worker_count()
    if w <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * w))))


def _phi_one(rep, word, spec, symbols, n, seed, method):
    mats = realize_word(word, n, spec, symbols, seed, rep)
    return trace_word(word, mats, n, method).value / n


@dataclass(frozen=True)
class PhiEstimate:
    mean: complex
    se_re: float
    se_im: float
    n: int
    replicates: int
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def se(self):
        return complex(self.se_re, self.se_im)

    @property
    def se_abs(self):
        return float(np.hypot(self.se_re, self.se_im))


def _summarize(samples, n, keep):
    samples = np.asarray(samples, dtype=complex)
    r = len(samples)
    se_re = float(np.std(samples.real, ddof=1) / np.sqrt(r)) if r > 1 else float("inf")
    se_im = float(np.std(samples.imag, ddof=1) / np.sqrt(r)) if r > 1 else float("inf")
    return PhiEstimate(complex(samples.mean()), se_re, se_im, n, r, samples if keep else None)


def empirical_phi(word, spec=None, n=256, replicates=100, seed=0, symbols=None,
                  method="structured", return_samples=False):
    """Monte Carlo estimate of ``phi_n`` for a word with scaled random letters."""
    if replicates < 2:
        raise ValueError("need at least two replicates")
    word = normalize_word(word)
    fn = functools.partial(_phi_one, word=word, spec=spec, symbols=symbols, n=n, seed=seed,
                           method=method)
    return _summarize(_map(fn, range(replicates)), n, return_samples)


def write_replicate_csv(path, word, estimate: PhiEstimate, seed):
    """One row per replicate: seed, n, word, re, im."""
    if estimate.samples is None:
        raise ValueError("estimate carries no samples")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "replicate", "n", "word", "re", "im"])
        for i, v in enumerate(estimate.samples):
            w.writerow([seed, i, estimate.n, format_word(word), repr(float(v.real)),
                        repr(float(v.imag))])


# ---------------------------------------------------------------- concentration

@dataclass(frozen=True)
class ConcentrationResult:
    fourth_central_moment: float
    se: float
    mean: float
    n: int
    replicates: int
    reliable: bool


def _fast_square(poly: Polynomial):
    """``(c, letter)`` when ``Q = c * X`` with ``X`` a single Toeplitz letter."""
    if len(poly.terms) != 1:
        return None
    c, w = poly.terms[0]
    if len(w) == 1 and w[0].kind in (Kind.T, Kind.D):
        return c, w[0]
    return None


def _effective_seq(m, star):
    return np.conj(m.a[::-1]) if star else m.a


def _conc_one(rep, poly, k, spec, symbols, n, seed, fast):
    if fast is not None:
        c, letter = fast
        mats = realize_word((letter,), n, spec, symbols, seed, rep)
        s = _effective_seq(mats[(letter.kind, letter.copy)], letter.star)
        w = n - np.abs(np.arange(-(n - 1), n))
        tr = np.sum(w * s * s[::-1])
        scale = 1.0 / n if letter.kind.random else 1.0
        return complex(c * c * tr * scale / n)
    word_all = tuple(x for _, w in poly.terms for x in w)
    mats = realize_word(word_all, n, spec, symbols, seed, rep)
    return sum(c * trace_word(w, mats, n).value for c, w in poly.terms) / n


def _jackknife_m4(x):
    x = np.asarray(x, dtype=float)
    N = len(x)
    y = x - x.mean()
    m4 = float(np.mean(y ** 4))
    if N < 3:
        return m4, float("inf")
    s1, s2, s3, s4 = (np.sum(y ** p) for p in (1, 2, 3, 4))
    mu = (s1 - y) / (N - 1)
    loo = (s4 - 4 * mu * s3 + 6 * mu ** 2 * s2 - 4 * mu ** 3 * s1 + N * mu ** 4
           - (y - mu) ** 4) / (N - 1)
    se = float(np.sqrt((N - 1) / N * np.sum((loo - loo.mean()) ** 2)))
    return m4, se


def hermitian_copies(Q, spec):
    """``(Kind, copy)`` keys of Toeplitz letters whose spec makes them Hermitian."""
    out = set()
    for x in as_polynomial(Q).letters:
        if x.kind is Kind.T:
            try:
                s = _pick(spec, x.copy)
            except MissingCopy:
                continue
            if s.flavor in (Flavor.HERMITIAN, Flavor.REAL_SYMMETRIC):
                out.add((x.kind, x.copy))
    return out


def concentration_probe(Q, k, spec=None, n=256, replicates=2000, seed=0, symbols=None):
    """Fourth central moment of ``(1/n) Tr(Q^k)`` across replicates.

    ``Q`` is a :class:`Polynomial`, its text form or a single word.
    Self-adjoint input is required so the statistic is real.
    """
    Q = as_polynomial(Q)
    herm = hermitian_copies(Q, spec)
    Q = Q.unstar(herm)
    if not Q.is_self_adjoint(hermitian=herm):
        raise NotSelfAdjoint("concentration_probe needs a self-adjoint polynomial")
    poly = Q.power(k)
    if not any(x.kind.random for x in poly.letters):
        val = _conc_one(0, poly, k, spec, symbols, n, seed, None)
        return ConcentrationResult(0.0, 0.0, float(np.real(val)), n, replicates, True)
    fast = _fast_square(Q) if k == 2 else None
    fn = functools.partial(_conc_one, poly=poly, k=k, spec=spec, symbols=symbols, n=n,
                           seed=seed, fast=fast)
    vals = np.real(np.asarray(_map(fn, range(replicates))))
    m4, se = _jackknife_m4(vals)
    return ConcentrationResult(m4, se, float(vals.mean()), n, replicates, replicates >= 10)
