"""Specification and word types shared by every module.

A :class:`CorrelationSpec` fixes the second-order structure of the random
input sequences, a :class:`DeterministicSymbol` an absolutely summable
deterministic sequence, and a :class:`MonomialWord` the product whose
normalized trace is studied.
"""

from __future__ import annotations

import configparser
import enum
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "Flavor", "Base", "Kind", "CorrelationSpec", "DeterministicSymbol",
    "Letter", "MonomialWord", "PairPartition",
    "SpecError", "NotPSD", "FlavorConflict", "NoP", "ParseError",
    "validate_spec", "covariance_factor", "normalize_word", "segment_word",
    "parse_word", "format_word", "adjoint_word", "load_spec", "parse_spec_text",
    "load_symbol", "Polynomial", "as_word", "P", "T", "D", "Tg", "Dg",
]

PSD_TOL = 1e-12


class SpecError(ValueError):
    """Base class for invalid specifications."""


class NotPSD(SpecError):
    pass


class FlavorConflict(SpecError):
    pass


class NoP(ValueError):
    pass


class ParseError(ValueError):
    pass


class Flavor(enum.Enum):
    PAIR_REFLECTED = "PairReflected"
    GENERALIZED = "Generalized"
    HERMITIAN = "Hermitian"
    REAL_SYMMETRIC = "RealSymmetric"
    REAL_ASYMMETRIC = "RealAsymmetric"


class Base(enum.Enum):
    GAUSSIAN = "GaussianMix"
    RADEMACHER = "RademacherMix"


@dataclass(frozen=True)
class CorrelationSpec:
    """Second-order description of the random input entries.

    For the pair-reflected flavors the six correlations refer to the
    quadruple ``(x_j, y_j, x_{-j}, y_{-j})``::

        rho1 = E[x_j y_j]      rho2 = E[x_j x_{-j}]   rho3 = E[x_j y_{-j}]
        rho4 = E[x_{-j} y_j]   rho5 = E[y_j y_{-j}]   rho6 = E[x_{-j} y_{-j}]

    For the generalized flavor they refer to ``(x_j, y_j, x'_j, y'_j)`` with
    ``a_j = x_j + i y_j`` and ``b_j = x'_j + i y'_j``::

        rho1 = E[x y]    rho2 = E[x x']   rho3 = E[x y']
        rho4 = E[x' y]   rho5 = E[x' y']  rho6 = E[y y']

    ``reflected_corr`` is a correlation between ``a_j`` and ``a_{-j}`` in the
    generalized model. Only zero is supported by the limit formulas.
    """

    sigma_x2: float = 0.5
    sigma_y2: float = 0.5
    rho: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    flavor: Flavor = Flavor.PAIR_REFLECTED
    base: Base = Base.GAUSSIAN
    moment_cap_check: bool = True
    reflected_corr: float = 0.0

    def __post_init__(self):
        rho = tuple(float(r) for r in self.rho)
        if len(rho) != 6:
            raise SpecError("rho must have six entries")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "sigma_x2", float(self.sigma_x2))
        object.__setattr__(self, "sigma_y2", float(self.sigma_y2))
        object.__setattr__(self, "flavor", Flavor(self.flavor))
        object.__setattr__(self, "base", Base(self.base))

    @classmethod
    def generalized(cls, rho=(0.0,) * 6, beta=0.5, **kw):
        """Generalized-model spec with real-part variance ``beta``."""
        return cls(sigma_x2=beta, sigma_y2=1.0 - beta, rho=rho,
                   flavor=Flavor.GENERALIZED, **kw)

    @classmethod
    def hermitian(cls, sigma_x2=0.5, sigma_y2=0.5, rho1=0.0, **kw):
        """Hermitian spec; the forced relations come from ``a_{-j} = conj(a_j)``."""
        rho = (rho1, sigma_x2, -rho1, rho1, -sigma_y2, -rho1)
        return cls(sigma_x2=sigma_x2, sigma_y2=sigma_y2, rho=rho,
                   flavor=Flavor.HERMITIAN, **kw)

    @classmethod
    def real_symmetric(cls, sigma_x2=1.0, **kw):
        return cls(sigma_x2=sigma_x2, sigma_y2=0.0,
                   rho=(0.0, sigma_x2, 0.0, 0.0, 0.0, 0.0),
                   flavor=Flavor.REAL_SYMMETRIC, **kw)

    def with_base(self, base):
        return CorrelationSpec(self.sigma_x2, self.sigma_y2, self.rho, self.flavor,
                               Base(base), self.moment_cap_check, self.reflected_corr)

    @property
    def is_generalized(self):
        return self.flavor is Flavor.GENERALIZED

    @property
    def beta(self):
        return self.sigma_x2

    def covariance(self):
        """The 4x4 covariance of the defining quadruple (not validated)."""
        r1, r2, r3, r4, r5, r6 = self.rho
        sx, sy = self.sigma_x2, self.sigma_y2
        if self.is_generalized:
            # (x, y, x', y'); b shares the real/imaginary split of a
            return np.array([[sx, r1, r2, r3],
                             [r1, sy, r4, r6],
                             [r2, r4, sx, r5],
                             [r3, r6, r5, sy]], dtype=float)
        return np.array([[sx, r1, r2, r3],
                         [r1, sy, r4, r5],
                         [r2, r4, sx, r6],
                         [r3, r5, r6, sy]], dtype=float)


def pivoted_cholesky(c, tol=PSD_TOL):
    """Return ``F`` with ``F @ F.T == c`` using LAPACK's pivoted Cholesky.

    Raises :class:`NotPSD` when a negative pivot below ``-tol`` shows up or the
    reconstruction misses ``c`` by more than ``tol`` scaled by its size.
    """
    c = np.asarray(c, dtype=float)
    scale = max(1.0, float(np.max(np.abs(c))))
    u, piv, rank, info = lapack.dpstrf(c, lower=1, tol=tol)
    if info < 0:
        raise NotPSD("pivoted Cholesky failed")
    k = c.shape[0]
    low = np.tril(u)[:, :rank]
    f = np.zeros((k, rank))
    f[piv - 1] = low
    resid = c - f @ f.T
    if np.max(np.abs(resid)) > 1e3 * tol * scale * k:
        raise NotPSD(f"covariance is not positive semidefinite (residual {np.max(np.abs(resid)):.3g})")
    return f


def validate_spec(spec: CorrelationSpec):
    """Check flavor constraints and PSD-ness; return the 4x4 covariance."""
    sx, sy = spec.sigma_x2, spec.sigma_y2
    r1, r2, r3, r4, r5, r6 = spec.rho
    if sx < 0 or sy < 0:
        raise NotPSD("variances must be non-negative")
    if any(abs(r) > 1 for r in spec.rho):
        raise NotPSD("correlations must satisfy |rho_i| <= 1")
    fl = spec.flavor
    eps = 1e-12
    if fl is Flavor.GENERALIZED:
        if abs(sx + sy - 1.0) > eps:
            raise FlavorConflict("generalized entries need sigma_x2 + sigma_y2 = 1")
        if spec.reflected_corr != 0:
            raise FlavorConflict("reflected-pair correlation is not supported in the generalized model")
    elif fl is Flavor.HERMITIAN:
        if abs(r2 - sx) > eps or abs(r3 + r4) > eps or abs(r5 + sy) > eps:
            raise FlavorConflict("Hermitian flavor needs rho2 = sigma_x2, rho3 = -rho4, rho5 = -sigma_y2")
    elif fl is Flavor.REAL_SYMMETRIC:
        if sy != 0 or abs(r2 - sx) > eps:
            raise FlavorConflict("real symmetric flavor needs sigma_y2 = 0 and rho2 = sigma_x2")
    elif fl is Flavor.REAL_ASYMMETRIC:
        if sy != 0:
            raise FlavorConflict("real asymmetric flavor needs sigma_y2 = 0")
    if fl is not Flavor.HERMITIAN and any(r < 0 for r in spec.rho):
        warnings.warn("negative correlation accepted; only |rho| <= 1 and PSD are enforced",
                      stacklevel=2)
    c = spec.covariance()
    covariance_factor(spec)
    return c


_FACTORS: dict = {}


def covariance_factor(spec: CorrelationSpec):
    """Cached pivoted-Cholesky factor of the spec covariance."""
    key = (spec.sigma_x2, spec.sigma_y2, spec.rho, spec.flavor)
    f = _FACTORS.get(key)
    if f is None:
        f = pivoted_cholesky(spec.covariance())
        _FACTORS[key] = f
    return f


# ---------------------------------------------------------------- symbols

@dataclass(frozen=True)
class DeterministicSymbol:
    """An absolutely summable sequence ``d_k``.

    ``family`` is one of ``"finite"`` (``params`` is a tuple of ``(k, d_k)``),
    ``"geometric"`` (``params = (r,)``, ``d_k = scale * r**|k|``) or
    ``"poly"`` (``params = (p,)``, ``d_k = scale * (1 + |k|)**(-p)``).
    ``paired`` holds ``d''`` for the generalized model; ``d'`` is ``self``.
    """

    family: str = "finite"
    params: tuple = ((0, 1.0),)
    scale: complex = 1.0
    paired: "DeterministicSymbol | None" = None

    def __post_init__(self):
        if self.family not in ("finite", "geometric", "poly"):
            raise SpecError(f"unknown symbol family {self.family!r}")
        if self.family == "geometric" and not abs(self.params[0]) < 1:
            raise SpecError("geometric symbol needs |r| < 1")
        if self.family == "poly" and not self.params[0] > 1:
            raise SpecError("polynomial decay needs exponent > 1")

    @classmethod
    def finite(cls, values, paired=None):
        items = values.items() if isinstance(values, dict) else values
        return cls("finite", tuple((int(k), complex(v)) for k, v in items), 1.0, paired)

    @classmethod
    def geometric(cls, r, scale=1.0, paired=None):
        return cls("geometric", (complex(r) if isinstance(r, complex) else float(r),), scale, paired)

    @classmethod
    def poly(cls, p, scale=1.0, paired=None):
        return cls("poly", (float(p),), scale, paired)

    @property
    def second(self):
        """``d''``; defaults to ``d'`` when no pair was given."""
        return self.paired if self.paired is not None else self

    def values(self, ks):
        ks = np.asarray(ks)
        a = np.abs(ks)
        if self.family == "finite":
            out = np.zeros(ks.shape, dtype=complex)
            for k, v in self.params:
                out[ks == k] += v
            return out
        if self.family == "geometric":
            return self.scale * np.power(complex(self.params[0]), a)
        return self.scale * np.power(1.0 + a, -self.params[0]) + 0j

    def support_radius(self):
        if self.family == "finite":
            return max((abs(k) for k, _ in self.params), default=0)
        return None

    def l1(self):
        """Sum of ``|d_k|`` over all integers."""
        if self.family == "finite":
            return float(sum(abs(v) for _, v in self.params))
        s = abs(self.scale)
        if self.family == "geometric":
            r = abs(self.params[0])
            return s * (1 + r) / (1 - r)
        from scipy.special import zeta
        return s * (2 * float(zeta(self.params[0])) - 1)

    def tail(self, k):
        """Closed-form bound on ``sum_{|j| > k} |d_j|``."""
        if self.family == "finite":
            return float(sum(abs(v) for j, v in self.params if abs(j) > k))
        s = abs(self.scale)
        if self.family == "geometric":
            r = abs(self.params[0])
            return 2 * s * r ** (k + 1) / (1 - r)
        p = self.params[0]
        return 2 * s * (k + 1) ** (1 - p) / (p - 1)


# ---------------------------------------------------------------- words

class Kind(enum.Enum):
    P = "P"
    T = "T"
    D = "D"
    TG = "Tg"
    DG = "Dg"

    @property
    def random(self):
        return self in (Kind.T, Kind.TG)

    @property
    def deterministic(self):
        return self in (Kind.D, Kind.DG)

    @property
    def generalized(self):
        return self in (Kind.TG, Kind.DG)


@dataclass(frozen=True)
class Letter:
    kind: Kind
    copy: int = 1
    star: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.P:
            object.__setattr__(self, "copy", 0)
            object.__setattr__(self, "star", False)

    @property
    def eps(self):
        """+1 for the plain letter, -1 for its adjoint."""
        return -1 if self.star else 1

    def adjoint(self):
        return self if self.kind is Kind.P else Letter(self.kind, self.copy, not self.star)

    def __str__(self):
        if self.kind is Kind.P:
            return "P"
        return f"{self.kind.value}{self.copy}{'*' if self.star else ''}"


P = Letter(Kind.P)


def T(copy=1, star=False):
    return Letter(Kind.T, copy, star)


def D(copy=1, star=False):
    return Letter(Kind.D, copy, star)


def Tg(copy=1, star=False):
    return Letter(Kind.TG, copy, star)


def Dg(copy=1, star=False):
    return Letter(Kind.DG, copy, star)


MonomialWord = tuple  # a tuple of Letter; () is the identity


_TOKEN = re.compile(r"^(P|Tg|Dg|T|D)(\d*)(\*?)$")


def parse_word(text: str) -> tuple:
    """Parse ``"P.T1.T2*.Dg1"`` into a tuple of letters.

    The copy index defaults to 1. An empty string is the identity word.
    """
    text = text.strip()
    if not text:
        return ()
    out = []
    for tok in text.split("."):
        m = _TOKEN.match(tok.strip())
        if not m:
            raise ParseError(f"cannot parse letter {tok!r}")
        kind, num, star = m.groups()
        if kind == "P":
            if num or star:
                raise ParseError("P takes no copy index or star")
            out.append(P)
        else:
            out.append(Letter(Kind(kind), int(num) if num else 1, bool(star)))
    return tuple(out)


def format_word(word: Sequence[Letter]) -> str:
    return ".".join(str(x) for x in word)


def as_word(word) -> tuple:
    return parse_word(word) if isinstance(word, str) else tuple(word)


def adjoint_word(word):
    return tuple(x.adjoint() for x in reversed(as_word(word)))


def normalize_word(word) -> tuple:
    """Cancel adjacent ``P P`` pairs (``P`` is an involution)."""
    out = []
    for x in as_word(word):
        if x.kind is Kind.P and out and out[-1].kind is Kind.P:
            out.pop()
        else:
            out.append(x)
    return tuple(out)


def segment_word(word):
    """Rotate the word to start at a ``P`` and split it at the ``P``'s.

    Returns ``(p, segments, k)`` with ``k`` the cumulative segment lengths.
    """
    word = as_word(word)
    pos = [i for i, x in enumerate(word) if x.kind is Kind.P]
    if not pos:
        raise NoP("word has no P letter")
    rot = word[pos[0]:] + word[:pos[0]]
    segments, cur = [], None
    for x in rot:
        if x.kind is Kind.P:
            if cur is not None:
                segments.append(tuple(cur))
            cur = []
        else:
            cur.append(x)
    segments.append(tuple(cur))
    k = tuple(int(v) for v in np.cumsum([len(s) for s in segments]))
    return len(segments), segments, k


def reassemble(segments):
    out = []
    for s in segments:
        out.append(P)
        out.extend(s)
    return tuple(out)


# ---------------------------------------------------------------- pairings

@dataclass(frozen=True)
class PairPartition:
    """Pair partition of ``{1..2k}``; blocks ``(r_t, s_t)`` with ``r_t < s_t``
    and openers increasing. ``proj[i-1]`` is the block index of ``i``."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(sorted(tuple(sorted(b)) for b in self.blocks))
        object.__setattr__(self, "blocks", blocks)
        elems = sorted(x for b in blocks for x in b)
        if elems != list(range(1, 2 * len(blocks) + 1)):
            raise ValueError("blocks must partition {1..2k}")

    @property
    def k(self):
        return len(self.blocks)

    @property
    def proj(self):
        out = [0] * (2 * self.k)
        for t, (r, s) in enumerate(self.blocks, start=1):
            out[r - 1] = t
            out[s - 1] = t
        return tuple(out)

    def partner(self, i):
        for r, s in self.blocks:
            if i == r:
                return s
            if i == s:
                return r
        raise KeyError(i)


# ---------------------------------------------------------------- config

_FLAVOR_ALIASES = {f.value.lower(): f for f in Flavor}
_BASE_ALIASES = {"gaussian": Base.GAUSSIAN, "gaussianmix": Base.GAUSSIAN,
                 "rademacher": Base.RADEMACHER, "rademachermix": Base.RADEMACHER}


def _read_flat(text: str) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[spec]\n" + text)
    return dict(cp["spec"])


def parse_spec_text(text: str):
    """Parse a flat ``key = value`` spec file.

    Keys: ``sigma_x2, sigma_y2, rho1..rho6, flavor, base, beta`` and
    optionally ``symbol.family, symbol.params, symbol.scale`` plus the same
    with prefix ``symbol2.`` for ``d''``. Returns ``(spec, symbol_or_None)``.
    """
    kv = _read_flat(text)
    flavor = _FLAVOR_ALIASES[kv.get("flavor", "PairReflected").strip().lower()]
    base = _BASE_ALIASES[kv.get("base", "gaussian").strip().lower()]
    rho = tuple(float(kv.get(f"rho{i}", 0.0)) for i in range(1, 7))
    if flavor is Flavor.GENERALIZED:
        beta = float(kv.get("beta", kv.get("sigma_x2", 0.5)))
        spec = CorrelationSpec.generalized(rho, beta, base=base,
                                           reflected_corr=float(kv.get("reflected_corr", 0.0)))
    else:
        spec = CorrelationSpec(float(kv.get("sigma_x2", 0.5)), float(kv.get("sigma_y2", 0.5)),
                               rho, flavor, base)
    validate_spec(spec)
    return spec, _symbol_from(kv)


def _symbol_from(kv, prefix="symbol"):
    fam = kv.get(f"{prefix}.family")
    if fam is None:
        return None
    fam = fam.strip().lower()
    raw = kv.get(f"{prefix}.params", "")
    scale = complex(kv.get(f"{prefix}.scale", "1").replace(" ", ""))
    second = _symbol_from(kv, "symbol2") if prefix == "symbol" else None
    if fam in ("finite", "finitesupport"):
        pairs = []
        for item in raw.split(","):
            if item.strip():
                k, v = item.split(":")
                pairs.append((int(k), complex(v.strip().replace(" ", ""))))
        return DeterministicSymbol("finite", tuple(pairs), 1.0, second)
    val = complex(raw.strip()) if "j" in raw else float(raw)
    if fam == "geometric":
        return DeterministicSymbol("geometric", (val,), scale, second)
    if fam in ("poly", "polydecay"):
        return DeterministicSymbol("poly", (float(val.real) if isinstance(val, complex) else val,),
                                   scale, second)
    raise ParseError(f"unknown symbol family {fam!r}")


def load_spec(path):
    with open(path) as fh:
        return parse_spec_text(fh.read())


def load_symbol(text: str):
    return _symbol_from(_read_flat(text))


def spec_to_dict(spec: CorrelationSpec) -> dict:
    return {"sigma_x2": spec.sigma_x2, "sigma_y2": spec.sigma_y2,
            "rho": list(spec.rho), "flavor": spec.flavor.value, "base": spec.base.value}


def double_factorial(m: int) -> int:
    return math.prod(range(m, 0, -2)) if m > 0 else 1


def iter_letters(word: Iterable[Letter], kinds):
    return [i for i, x in enumerate(word) if x.kind in kinds]


# ---------------------------------------------------------------- polynomials

@dataclass(frozen=True)
class Polynomial:
    """A formal polynomial ``sum_i c_i w_i`` over monomial words."""

    terms: tuple

    def __post_init__(self):
        merged: dict = {}
        for c, w in self.terms:
            w = normalize_word(w)
            merged[w] = merged.get(w, 0) + complex(c)
        object.__setattr__(self, "terms", tuple((c, w) for w, c in merged.items() if c != 0))

    @classmethod
    def word(cls, word, coef=1.0):
        return cls(((coef, as_word(word)),))

    @classmethod
    def parse(cls, text: str):
        """Parse lines or ``+``-separated items of the form ``coef word``."""
        items = []
        for chunk in re.split(r"[\n+]", text):
            chunk = chunk.split("#")[0].strip()
            if not chunk:
                continue
            parts = chunk.split()
            if len(parts) == 1:
                items.append((1.0, parse_word(parts[0])))
            else:
                items.append((complex(parts[0]), parse_word(parts[1])))
        return cls(tuple(items))

    def adjoint(self):
        return Polynomial(tuple((np.conj(c), adjoint_word(w)) for c, w in self.terms))

    def unstar(self, keys):
        """Drop stars on letters whose ``(kind, copy)`` is in ``keys``
        (letters known to be Hermitian matrices)."""
        keys = set(keys)
        fix = lambda w: tuple(Letter(x.kind, x.copy) if (x.kind, x.copy) in keys else x
                              for x in w)
        return Polynomial(tuple((c, fix(w)) for c, w in self.terms))

    def is_self_adjoint(self, tol=1e-12, hermitian=()):
        if hermitian:
            q = self.unstar(hermitian)
            return q.adjoint().unstar(hermitian)._close(q, tol)
        return self._close(self.adjoint(), tol)

    def _close(self, other_poly, tol):
        mine = dict((w, c) for c, w in self.terms)
        other = dict((w, c) for c, w in other_poly.terms)
        keys = set(mine) | set(other)
        return all(abs(mine.get(k, 0) - other.get(k, 0)) <= tol for k in keys)

    def power(self, k: int):
        """Expand ``Q^k`` into a polynomial (words are concatenated, not reduced)."""
        out = {(): 1.0 + 0j}
        for _ in range(k):
            nxt: dict = {}
            for w1, c1 in out.items():
                for c2, w2 in self.terms:
                    w = normalize_word(w1 + w2)
                    nxt[w] = nxt.get(w, 0) + c1 * c2
            out = nxt
        return Polynomial(tuple((c, w) for w, c in out.items()))

    @property
    def letters(self):
        return {x for _, w in self.terms for x in w}

    def __str__(self):
        return " + ".join(f"{c.real:g}{c.imag:+g}j {format_word(w)}" for c, w in self.terms)


class NotSelfAdjoint(ValueError):
    pass


def as_polynomial(Q) -> Polynomial:
    """Coerce a polynomial, its text form or a single word to :class:`Polynomial`."""
    if isinstance(Q, Polynomial):
        return Q
    if isinstance(Q, str):
        return Polynomial.parse(Q)
    return Polynomial.word(as_word(Q))
