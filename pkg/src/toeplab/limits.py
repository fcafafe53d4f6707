"""Limiting *-moments as pair-partition sums of weighted indicator volumes.

Two evaluators are provided.

* Formula integrands (``method="formula"``) follow the closed forms for
  each family: plain Toeplitz words, Toeplitz words with ``P``, symmetric
  Hankel words and the generalized Toeplitz and Hankel words.
* The walk integrand (``method="walk"``) follows the scaled row position
  through the word letter by letter. Every position is an affine form in
  ``(z_0, z_1, ..., z_k)``, so indicators, region tests and sign branches
  are all evaluated from one matrix product. It handles any word over the
  full alphabet and serves as an independent cross-check of the formulas.

Integrals run over ``z_0 in [0, 1]`` and ``z in [-1, 1]^k`` (Lebesgue
measure, so a volume is at most one) with scrambled Sobol points or a
midpoint grid.
"""

from __future__ import annotations

import functools
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import qmc

from .ensembles import make_rng
from .model import (DeterministicSymbol, Flavor, Kind, Letter, NoP, PairPartition,
                    as_word, format_word, normalize_word, segment_word, validate_spec)
from .partitions import enumerate_pairings, sign_maps

__all__ = [
    "Integrator", "Contribution", "LimitMomentResult", "MixedModels", "TailBoundTooLarge",
    "theta_plain", "theta_TP", "theta_H", "gen_weight_T", "gen_weight_H", "pair_expectation",
    "limit_moment_T", "limit_moment_TP", "limit_moment_Hsym", "limit_moment_D",
    "limit_moment_Dgen", "limit_moment_Tgen", "limit_moment_Hgen", "limit_moment_TPgen",
    "limit_moment_mixed", "limit_moment", "walk_limit", "hankel_expand", "lattice_sum",
]

MAX_K = 1 << 20
CHUNK = 1 << 17


class MixedModels(ValueError):
    pass


class TailBoundTooLarge(ValueError):
    pass


# ---------------------------------------------------------------- results

@dataclass(frozen=True)
class Integrator:
    """Integration settings: ``"qmc"`` (scrambled Sobol, ``samples`` points
    per replicate) or ``"grid"`` (midpoint rule, ``resolution`` per axis)."""

    kind: str = "qmc"
    samples: int = 1 << 20
    replicates: int = 16
    resolution: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("qmc", "grid"):
            raise ValueError(f"unknown integrator {self.kind!r}")
        if self.kind == "qmc" and (self.samples < 2 or self.samples & (self.samples - 1)):
            raise ValueError("QMC sample count must be a power of two")
        if self.kind == "qmc" and self.replicates < 2:
            raise ValueError("need at least two scrambling replicates")

    def describe(self):
        if self.kind == "qmc":
            return {"kind": "QMC", "samples": self.samples, "replicates": self.replicates,
                    "seed": self.seed}
        return {"kind": "GridRiemann", "resolution": self.resolution}


@dataclass(frozen=True)
class Contribution:
    partition: str
    weight: complex
    volume: float
    volume_se: float
    se: float = 0.0

    @property
    def value(self):
        return self.weight * self.volume


@dataclass(frozen=True)
class LimitMomentResult:
    value: complex
    se: float
    contributions: tuple = ()
    method: dict = field(default_factory=dict)
    word: str = ""

    def to_dict(self):
        return {
            "word": self.word,
            "value": [self.value.real, self.value.imag],
            "se": self.se,
            "method": self.method,
            "contributions": [
                {"partition": c.partition, "weight": [c.weight.real, c.weight.imag],
                 "volume": c.volume, "volume_se": c.volume_se, "se": c.se}
                for c in self.contributions],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _zero(word, why):
    return LimitMomentResult(0j, 0.0, (), {"kind": "Exact", "reason": why}, format_word(word))


def _pid(pi: PairPartition):
    return "".join(f"({r},{s})" for r, s in pi.blocks)


# ---------------------------------------------------------------- weights

def _e(x):
    """Star marker to +1/-1."""
    if isinstance(x, (bool, np.bool_)):
        return -1 if x else 1
    return -1 if x in (-1, "*") else 1


def pair_expectation(cov, slot_r, slot_s, eps_r, eps_s):
    """``E[u_r u_s]`` where ``u = x + i eps' y`` is read from slot 0 or 1 of
    the quadruple with covariance ``cov``."""
    er, es = _e(eps_r), _e(eps_s)
    xr, yr, xs, ys = 2 * slot_r, 2 * slot_r + 1, 2 * slot_s, 2 * slot_s + 1
    return complex(cov[xr, xs] - er * es * cov[yr, ys],
                   es * cov[xr, ys] + er * cov[yr, xs])


def theta_plain(eps_r, eps_s, spec):
    """Pair weight of two Toeplitz letters with no ``P`` between them."""
    er, es = _e(eps_r), _e(eps_s)
    r1, r2, r3, r4, r5, r6 = spec.rho
    if er != es:
        return complex(spec.sigma_x2 + spec.sigma_y2)
    return complex(r2 - r5, er * (r3 + r4))


def theta_TP(eps_r, eps_s, nu_r, nu_s, positive, spec):
    """Four-branch pair weight for Toeplitz letters separated by ``P``
    segments with parities ``nu_r``, ``nu_s``.

    The matched indices satisfy ``i_s = i_r`` when
    ``nu_r nu_s eps'_r eps'_s = -1`` and ``i_s = -i_r`` otherwise;
    ``positive`` is the sign of ``i_r``.
    """
    er, es = _e(eps_r), _e(eps_s)
    sx, sy = spec.sigma_x2, spec.sigma_y2
    r1, r2, r3, r4, r5, r6 = spec.rho
    dn = nu_r == nu_s
    de = er == es
    if nu_r * nu_s * er * es == -1:
        r = r1 if positive else r6
        return (sx + sy) * (dn and not de) + complex(sx - sy, er * 2 * r) * ((not dn) and de)
    e = er if positive else es
    return complex(r2 + r5, e * (r4 - r3)) * ((not dn) and (not de)) + \
        complex(r2 - r5, e * (r4 + r3)) * (dn and de)


def theta_H(eps_r, eps_s, nu_r, nu_s, positive, spec, uncorrected=False):
    """Pair weight for symmetric Hankel letters.

    ``z_r = z_s`` when ``nu_r != nu_s``. The opposite-sign branches use
    ``rho5``; ``uncorrected=True`` uses ``rho6`` there instead, which disagrees
    with direct computation of the pair expectation.
    """
    er, es = _e(eps_r), _e(eps_s)
    sx, sy = spec.sigma_x2, spec.sigma_y2
    r1, r2, r3, r4, r5, r6 = spec.rho
    de = er == es
    if nu_r != nu_s:
        r = r1 if positive else r6
        return complex(sx + sy) if not de else complex(sx - sy, er * 2 * r)
    e = er if positive else es
    rr = r6 if uncorrected else r5
    if not de:
        return complex(r2 + rr, e * (r4 - r3))
    return complex(r2 - rr, e * (r4 + r3))


def _in_a_tilde(w, z):
    return (w >= np.maximum(0.0, -z)) & (w <= 0.5 * (1 - z))


def _in_b_tilde(w, z):
    return (w > 0.5 * (1 - z)) & (w <= np.minimum(1 - z, 1.0))


def gen_weight_T(eps_r, eps_s, spec, w_r, w_s, z):
    """Pair weight of two generalized Toeplitz letters at source positions
    ``w_r``, ``w_s`` with common scaled index ``z``.

    Letter ``t`` reads ``a`` when ``w_t`` lies in ``A~`` of its signed step
    ``eps'_t z`` and ``b`` when it lies in ``B~``. Works on arrays.
    """
    er, es = _e(eps_r), _e(eps_s)
    if er == es:
        return np.zeros(np.broadcast(w_r, w_s, z).shape, dtype=complex)
    r1, r2, r3, r4, r5, r6 = spec.rho
    ar, br = _in_a_tilde(w_r, er * z), _in_b_tilde(w_r, er * z)
    as_, bs = _in_a_tilde(w_s, es * z), _in_b_tilde(w_s, es * z)
    cr = complex(r2 + r6, -er * (r3 - r4))
    cs = complex(r2 + r6, -es * (r3 - r4))
    return ((ar & as_) + (br & bs)) + cr * (ar & bs) + cs * (br & as_)


def gen_weight_H(eps_r, eps_s, nu_r, nu_s, spec, w_r, w_s, z, uncorrected=False):
    """Pair weight of two generalized Hankel letters ``P T_g`` (or
    ``T_g^* P``) at source positions ``w_r``, ``w_s`` with common index ``z``.

    A plain letter reads ``a`` on ``A~_z`` and ``b`` on ``B~_z``; a starred
    letter does the opposite, since ``T_g^*`` acts after the reflection.
    Same-star ``aa`` and ``bb`` pairs carry ``(2 beta - 1) + 2 i eps' rho``.
    ``uncorrected=True`` reproduces the uncorrected variant: regions
    ``A~_{eps' z}``/``B~_{eps' z}`` for both letters and no ``2 beta - 1``.
    """
    er, es = _e(eps_r), _e(eps_s)
    shape = np.broadcast(w_r, w_s, z).shape
    if nu_r == nu_s:
        return np.zeros(shape, dtype=complex)
    r1, r2, r3, r4, r5, r6 = spec.rho
    de = er == es
    if uncorrected:
        ar, br = _in_a_tilde(w_r, er * z), _in_b_tilde(w_r, er * z)
        as_, bs = _in_a_tilde(w_s, es * z), _in_b_tilde(w_s, es * z)
        base = 0.0
    else:
        ar, br = _in_a_tilde(w_r, z), _in_b_tilde(w_r, z)
        as_, bs = _in_a_tilde(w_s, z), _in_b_tilde(w_s, z)
        if er < 0:
            ar, br = br, ar
        if es < 0:
            as_, bs = bs, as_
        base = 2 * spec.beta - 1
    c1 = complex(base, er * 2 * r1) if de else 1.0
    c4 = complex(base, er * 2 * r5) if de else 1.0
    c2 = complex(r2 - r6, er * (r4 + r3)) if de else complex(r2 + r6, er * (r4 - r3))
    c3 = complex(r2 - r6, es * (r4 + r3)) if de else complex(r2 + r6, es * (r4 - r3))
    return c1 * (ar & as_) + c4 * (br & bs) + c2 * (ar & bs) + c3 * (br & as_)


# ---------------------------------------------------------------- integration

def _sobol_chunks(dim, integ: Integrator, rep):
    eng = qmc.Sobol(d=dim, scramble=True, seed=make_rng(integ.seed, 11, dim, rep))
    left = integ.samples
    while left:
        m = min(left, CHUNK)
        yield eng.random(m)
        left -= m


def _grid_chunks(dim, res):
    mids = (np.arange(res) + 0.5) / res
    total = res ** dim
    step = max(1, CHUNK)
    for start in range(0, total, step):
        idx = np.arange(start, min(total, start + step))
        cols = []
        for _ in range(dim):
            cols.append(mids[idx % res])
            idx = idx // res
        yield np.stack(cols[::-1], axis=1)


def _integrate(fns, k, integ: Integrator):
    """Integrate each ``fn(z0, z) -> (value, support)``.

    Returns per-fn ``(value, value_se, volume, volume_se)`` and the standard
    error of the summed value. All fns share the same points, so the summed
    error comes from the per-replicate totals rather than from the per-fn
    errors in quadrature.
    """
    dim = k + 1
    jac = 2.0 ** k
    nf = len(fns)
    reps = integ.replicates if integ.kind == "qmc" else 1
    vals = np.zeros((nf, reps), dtype=complex)
    vols = np.zeros((nf, reps))
    for rep in range(reps):
        chunks = _sobol_chunks(dim, integ, rep) if integ.kind == "qmc" \
            else _grid_chunks(dim, integ.resolution)
        count = 0
        for u in chunks:
            z0, z = u[:, 0], 2.0 * u[:, 1:] - 1.0
            count += len(u)
            for i, fn in enumerate(fns):
                v, s = fn(z0, z)
                vals[i, rep] += np.sum(v)
                vols[i, rep] += np.sum(s)
        vals[:, rep] *= jac / count
        vols[:, rep] *= jac / count
    out = []
    for i in range(nf):
        if reps > 1:
            se = float(np.hypot(vals[i].real.std(ddof=1), vals[i].imag.std(ddof=1)) / np.sqrt(reps))
            vse = float(vols[i].std(ddof=1) / np.sqrt(reps))
        else:
            se = vse = 0.0
        out.append((complex(vals[i].mean()), se, float(vols[i].mean()), vse))
    tot = vals.sum(axis=0)
    total_se = float(np.hypot(tot.real.std(ddof=1), tot.imag.std(ddof=1)) / np.sqrt(reps)) \
        if reps > 1 else 0.0
    return out, total_se


def _assemble(word, pis, fns, k, integ, skipped=()):
    """Integrate the per-pairing integrands and build the result."""
    res, total_se = _integrate(fns, k, integ) if fns else ([], 0.0)
    contribs = []
    total = 0j
    for pi, (v, se, vol, vse) in zip(pis, res):
        w = v / vol if vol > 0 else 0j
        contribs.append(Contribution(_pid(pi), complex(w), vol, vse, se))
        total += v
    for pi in skipped:
        contribs.append(Contribution(_pid(pi), 0j, 0.0, 0.0, 0.0))
    return LimitMomentResult(complex(total), total_se, tuple(contribs),
                             integ.describe(), format_word(word))


# ---------------------------------------------------------------- affine helpers

def _unit(ncol, i):
    v = np.zeros(ncol)
    v[i] = 1.0
    return v


def _eval_forms(forms, z0, z):
    """Evaluate affine forms over the basis ``(1, z0, z_1..z_k)``."""
    forms = np.asarray(forms)
    out = forms[:, 0][None, :] + z0[:, None] * forms[:, 1][None, :]
    if z.shape[1]:
        out = out + z @ forms[:, 2:].T
    return out


def _support(pos, tol=0.0):
    return np.all((pos >= -tol) & (pos <= 1 + tol), axis=1)


def _copy_ok(word_r, pi):
    return all(word_r[r - 1].copy == word_r[s - 1].copy and word_r[r - 1].kind is word_r[s - 1].kind
               for r, s in pi.blocks)


def _spec_for(spec, copy):
    if isinstance(spec, dict):
        if copy not in spec:
            raise KeyError(f"no specification for copy {copy}")
        spec = spec[copy]
    _validated(spec)
    return spec


@functools.lru_cache(maxsize=256)
def _validated(spec):
    validate_spec(spec)
    return True


# ---------------------------------------------------------------- formula integrands

def _check_letters(word, allowed, name):
    bad = [str(x) for x in word if x.kind not in allowed]
    if bad:
        raise ValueError(f"{name} does not accept letters {bad}")


def limit_moment_T(word, spec, integ: Integrator = Integrator(), method="formula"):
    """Limit of ``phi_n`` for a word of scaled Toeplitz letters (no ``P``,
    no deterministic letters)."""
    word = as_word(word)
    _check_letters(word, (Kind.T,), "limit_moment_T")
    if method == "walk":
        return walk_limit(word, spec, integ=integ)
    if len(word) % 2:
        return _zero(word, "odd number of random letters")
    if not word:
        return LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, "")
    k = len(word) // 2
    eps = [x.eps for x in word]
    ncol = k + 2
    pis, fns, skipped = [], [], []
    for pi in enumerate_pairings(2 * k):
        if not _copy_ok(word, pi):
            skipped.append(pi)
            continue
        w = 1 + 0j
        for r, s in pi.blocks:
            w *= theta_plain(eps[r - 1], eps[s - 1], _spec_for(spec, word[r - 1].copy))
        sm = sign_maps(pi, eps)
        forms = []
        for l in range(2 * k):
            f = _unit(ncol, 1)
            for t in range(l, 2 * k):
                f = f + sm.eps_pi[t] * _unit(ncol, 1 + pi.proj[t])
            forms.append(f)
        forms = np.array(forms)
        pis.append(pi)
        fns.append(_const_weight_fn(forms, w))
    return _assemble(word, pis, fns, k, integ, skipped)


def _const_weight_fn(forms, w):
    def fn(z0, z):
        s = _support(_eval_forms(forms, z0, z))
        return w * s, s
    return fn


def limit_moment_TP(word, spec, integ: Integrator = Integrator(), method="formula"):
    """Limit for words mixing ``P`` and scaled Toeplitz letters.

    Zero unless both the ``P`` count and the Toeplitz count are even. The
    pair weights depend on the sign of the shared variable, so weight and
    indicators are integrated jointly.
    """
    word = normalize_word(word)
    _check_letters(word, (Kind.T, Kind.P), "limit_moment_TP")
    if not any(x.kind is Kind.P for x in word):
        return limit_moment_T(word, spec, integ, method)
    if method == "walk":
        return walk_limit(word, spec, integ=integ)
    p, segments, kcum = segment_word(word)
    letters = [x for seg in segments for x in seg]
    if p % 2:
        return _zero(word, "odd number of P letters")
    if len(letters) % 2:
        return _zero(word, "odd number of random letters")
    if not letters:
        return LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, format_word(word))
    k = len(letters) // 2
    ncol = k + 2
    eps = [x.eps for x in letters]
    seg_of = []
    for c, seg in enumerate(segments, start=1):
        seg_of += [c] * len(seg)
    pis, fns, skipped = [], [], []
    for pi in enumerate_pairings(2 * k):
        if not _copy_ok(letters, pi):
            skipped.append(pi)
            continue
        sm = sign_maps(pi, eps, kcum)
        # signed step of letter t as a form: eps'_t eta(t) z_{pi'(t)}
        steps = [eps[t] * sm.eta[t] * _unit(ncol, 1 + pi.proj[t]) for t in range(2 * k)]
        seg_sum = {c: sum((steps[t] for t in range(2 * k) if seg_of[t] == c), np.zeros(ncol))
                   for c in range(1, p + 1)}
        forms = []
        for l in range(2 * k):
            e = seg_of[l]
            inner = sum((steps[t] for t in range(l, 2 * k) if seg_of[t] == e), np.zeros(ncol))
            outer = sum(((-1) ** c * seg_sum[c] for c in range(e + 1, p + 1)), np.zeros(ncol))
            forms.append(_unit(ncol, 1) + (-1) ** e * inner + outer)
        blocks = [(r - 1, s - 1, b) for b, (r, s) in enumerate(pi.blocks)]
        tables = []
        for r, s, b in blocks:
            sp = _spec_for(spec, letters[r].copy)
            tables.append((b, theta_TP(eps[r], eps[s], sm.nu[r], sm.nu[s], True, sp),
                           theta_TP(eps[r], eps[s], sm.nu[r], sm.nu[s], False, sp)))
        pis.append(pi)
        fns.append(_signed_weight_fn(np.array(forms), tables))
    return _assemble(word, pis, fns, k, integ, skipped)


def _signed_weight_fn(forms, tables):
    def fn(z0, z):
        s = _support(_eval_forms(forms, z0, z))
        w = np.ones(len(z0), dtype=complex)
        for b, wp, wm in tables:
            w *= np.where(z[:, b] >= 0, wp, wm)
        return w * s, s
    return fn


def hankel_expand(word, generalized=False):
    """Rewrite Hankel atoms as ``P`` and Toeplitz letters: ``H = P T`` and
    ``H^* = T^* P``. Input letters are ``T``/``Tg`` read as Hankel atoms."""
    out = []
    for x in as_word(word):
        if x.kind is Kind.P:
            raise ValueError("Hankel words take Hankel atoms only")
        out += [x, Letter(Kind.P)] if x.star else [Letter(Kind.P), x]
    return tuple(out)


def limit_moment_Hsym(word, spec, integ: Integrator = Integrator(), method="formula",
                      uncorrected=False):
    """Limit for a word of symmetric Hankel atoms ``H^{(tau) eps}``.

    ``word`` holds ``T`` letters, each read as the Hankel atom built from
    that copy.
    """
    word = as_word(word)
    _check_letters(word, (Kind.T,), "limit_moment_Hsym")
    label = "H:" + format_word(word)
    if method == "walk":
        r = walk_limit(hankel_expand(word), spec, integ=integ)
        return LimitMomentResult(r.value, r.se, r.contributions, r.method, label)
    if len(word) % 2:
        return LimitMomentResult(0j, 0.0, (), {"kind": "Exact", "reason": "odd"}, label)
    if not word:
        return LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, label)
    k = len(word) // 2
    ncol = k + 2
    eps = [x.eps for x in word]
    pis, fns, skipped = [], [], []
    for pi in enumerate_pairings(2 * k):
        if not _copy_ok(word, pi):
            skipped.append(pi)
            continue
        sm = sign_maps(pi, eps, hankel=True)
        forms = []
        for t in range(2 * k):
            f = _unit(ncol, 1)
            for l in range(t, 2 * k):
                f = f + (-1) ** (l + 1) * sm.eta[l] * _unit(ncol, 1 + pi.proj[l])
            forms.append(f)
        tables = []
        for b, (r, s) in enumerate(pi.blocks):
            sp = _spec_for(spec, word[r - 1].copy)
            nr, ns = sm.nu[r - 1], sm.nu[s - 1]
            tables.append((b, theta_H(eps[r - 1], eps[s - 1], nr, ns, True, sp, uncorrected),
                           theta_H(eps[r - 1], eps[s - 1], nr, ns, False, sp, uncorrected)))
        pis.append(pi)
        fns.append(_signed_weight_fn(np.array(forms), tables))
    r = _assemble(word, pis, fns, k, integ, skipped)
    return LimitMomentResult(r.value, r.se, r.contributions, r.method, label)


def limit_moment_Tgen(word, spec, integ: Integrator = Integrator(), method="formula"):
    """Limit for a word of scaled generalized Toeplitz letters.

    Only opposite-star pairs with equal indices survive. Each letter is
    tested at its source position ``w_t = z_0 + sum_{l > t} eps'_l z``.
    """
    word = as_word(word)
    _check_letters(word, (Kind.TG,), "limit_moment_Tgen")
    if method == "walk":
        return walk_limit(word, spec, integ=integ)
    if len(word) % 2:
        return _zero(word, "odd number of random letters")
    if not word:
        return LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, "")
    k = len(word) // 2
    ncol = k + 2
    eps = [x.eps for x in word]
    pis, fns, skipped = [], [], []
    for pi in enumerate_pairings(2 * k):
        if not _copy_ok(word, pi) or any(eps[r - 1] == eps[s - 1] for r, s in pi.blocks):
            skipped.append(pi)
            continue
        src = []
        for t in range(2 * k):
            f = _unit(ncol, 1)
            for l in range(t + 1, 2 * k):
                f = f + eps[l] * _unit(ncol, 1 + pi.proj[l])
            src.append(f)
        pis.append(pi)
        fns.append(_gen_T_fn(np.array(src), pi, eps, word, spec))
    return _assemble(word, pis, fns, k, integ, skipped)


def _gen_T_fn(src, pi, eps, word, spec):
    def fn(z0, z):
        w = _eval_forms(src, z0, z)
        val = np.ones(len(z0), dtype=complex)
        sup = np.ones(len(z0), dtype=bool)
        for b, (r, s) in enumerate(pi.blocks):
            zb = z[:, b]
            sp = _spec_for(spec, word[r - 1].copy)
            val *= gen_weight_T(eps[r - 1], eps[s - 1], sp, w[:, r - 1], w[:, s - 1], zb)
            for t in (r - 1, s - 1):
                step = eps[t] * zb
                sup &= _in_a_tilde(w[:, t], step) | _in_b_tilde(w[:, t], step)
        return val * sup, sup
    return fn


def limit_moment_Hgen(word, spec, integ: Integrator = Integrator(), method="formula",
                      uncorrected=False):
    """Limit for a word of generalized Hankel atoms ``P T_g`` (``T_g^* P``
    for starred letters). ``word`` holds ``Tg`` letters."""
    word = as_word(word)
    _check_letters(word, (Kind.TG,), "limit_moment_Hgen")
    label = "H:" + format_word(word)
    if method == "walk":
        r = walk_limit(hankel_expand(word), spec, integ=integ)
        return LimitMomentResult(r.value, r.se, r.contributions, r.method, label)
    if len(word) % 2:
        return LimitMomentResult(0j, 0.0, (), {"kind": "Exact", "reason": "odd"}, label)
    if not word:
        return LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, label)
    k = len(word) // 2
    ncol = k + 2
    eps = [x.eps for x in word]
    nu = [1 if (t + 1) % 2 == 0 else -1 for t in range(2 * k)]
    pis, fns, skipped = [], [], []
    for pi in enumerate_pairings(2 * k):
        if not _copy_ok(word, pi) or any(nu[r - 1] == nu[s - 1] for r, s in pi.blocks):
            skipped.append(pi)
            continue
        # each atom maps w -> 1 - w - z; walk from the right end at z0
        src = [None] * (2 * k)
        cur = _unit(ncol, 1)
        for t in range(2 * k - 1, -1, -1):
            src[t] = cur
            cur = _unit(ncol, 0) - cur - _unit(ncol, 1 + pi.proj[t])
        pis.append(pi)
        fns.append(_gen_H_fn(np.array(src), pi, eps, nu, word, spec, uncorrected))
    r = _assemble(word, pis, fns, k, integ, skipped)
    return LimitMomentResult(r.value, r.se, r.contributions, r.method, label)


def _gen_H_fn(src, pi, eps, nu, word, spec, uncorrected):
    def fn(z0, z):
        w = _eval_forms(src, z0, z)
        val = np.ones(len(z0), dtype=complex)
        sup = np.ones(len(z0), dtype=bool)
        for b, (r, s) in enumerate(pi.blocks):
            zb = z[:, b]
            sp = _spec_for(spec, word[r - 1].copy)
            val *= gen_weight_H(eps[r - 1], eps[s - 1], nu[r - 1], nu[s - 1], sp,
                                w[:, r - 1], w[:, s - 1], zb, uncorrected)
            for t in (r - 1, s - 1):
                sup &= _in_a_tilde(w[:, t], zb) | _in_b_tilde(w[:, t], zb)
        return val * sup, sup
    return fn


# ---------------------------------------------------------------- deterministic sums

def _symbol_for(symbols, copy):
    if isinstance(symbols, dict):
        if copy not in symbols:
            raise KeyError(f"no symbol for copy {copy}")
        return symbols[copy]
    if symbols is None:
        raise KeyError(f"no symbol for copy {copy}")
    return symbols


def _choose_K(syms, p, tol):
    radii = [s.support_radius() for s in syms]
    if all(r is not None for r in radii):
        return max(radii, default=0), 0.0
    l1 = max(s.l1() for s in syms)

    def bound(K):
        return p * max(s.tail(K) for s in syms) * l1 ** (p - 1)
    if bound(MAX_K) > tol:
        raise TailBoundTooLarge(f"tail bound {bound(MAX_K):.3g} exceeds {tol:g} at K={MAX_K}")
    lo, hi = 0, 1
    while bound(hi) > tol:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (mid, hi) if bound(mid) > tol else (lo, mid)
    return hi, bound(hi)


def lattice_sum(factors, K):
    """``sum prod_t c_t(i_t)`` over ``|i_t| <= K`` with ``sum_t sigma_t i_t = 0``.

    ``factors`` holds ``(values, sigma)`` with ``values`` indexed by
    ``i + K`` and ``sigma = +-1``.
    """
    if not factors:
        return 1 + 0j
    acc = np.array([1 + 0j])
    for vals, sig in factors:
        g = vals if sig > 0 else vals[::-1]
        acc = np.convolve(acc, g) if len(acc) * len(g) < 1 << 22 else fftconvolve(acc, g)
    return complex(acc[(len(acc) - 1) // 2])


def _det_values(letter, sym, K):
    v = sym.values(np.arange(-K, K + 1))
    return np.conj(v) if letter.star else v


def _reflection_signs(word):
    out, left = [], 0
    for x in word:
        out.append(-1 if left % 2 else 1)
        if x.kind is Kind.P:
            left += 1
    return out


def limit_moment_D(word, symbols, tol=1e-12, K=None):
    """Limit of ``phi_n`` for words in deterministic Toeplitz letters and
    ``P``: the constrained lattice sum ``sum prod d^{eps}_{i_t}`` with
    ``sum_t s_t eps'_t i_t = 0``, where ``s_t`` records reflections to the
    left of letter ``t``. Zero for an odd ``P`` count."""
    word = normalize_word(word)
    _check_letters(word, (Kind.D, Kind.P), "limit_moment_D")
    return _det_limit(word, symbols, tol, K, generalized=False)


def limit_moment_Dgen(word, symbols, tol=1e-12, K=None, method="exact"):
    """Limit for words in deterministic generalized Toeplitz letters and ``P``.

    ``method="exact"`` integrates the start position ``z_0``: each letter
    reads ``d'`` when its (reflected) position is at most one half and
    ``d''`` otherwise, giving the average of two lattice sums.
    ``method="averaged"`` applies the symbol ``(d' + d'')/2`` to every
    letter; this differs from the exact limit whenever both symbols
    contribute (for ``d' = delta_0``, ``d'' = -delta_0`` the matrix squares to
    the identity yet the averaged form gives zero).
    """
    word = normalize_word(word)
    _check_letters(word, (Kind.DG, Kind.D, Kind.P), "limit_moment_Dgen")
    if method not in ("exact", "averaged"):
        raise ValueError(f"unknown method {method!r}")
    return _det_limit(word, symbols, tol, K, generalized=True, averaged=method == "averaged")


def _det_limit(word, symbols, tol, K, generalized, averaged=False):
    signs = _reflection_signs(word)
    p = sum(1 for x in word if x.kind is Kind.P)
    if p % 2:
        return _zero(word, "odd number of P letters")
    dets = [(t, x) for t, x in enumerate(word) if x.kind.deterministic]
    syms = []
    for _, x in dets:
        s = _symbol_for(symbols, x.copy)
        syms += [s, s.second] if x.kind is Kind.DG else [s]
    if K is None:
        K, bound = _choose_K(syms, max(1, len(dets)), tol)
    else:
        l1 = max((s.l1() for s in syms), default=0.0)
        bound = len(dets) * max((s.tail(K) for s in syms), default=0.0) * l1 ** max(0, len(dets) - 1)
    method = {"kind": "ExactSum", "K": int(K), "tail_bound": float(bound)}
    if averaged:
        facs = []
        for t, x in dets:
            s = _symbol_for(symbols, x.copy)
            v = _det_values(x, s, K)
            if x.kind is Kind.DG:
                v = 0.5 * (v + _det_values(x, s.second, K))
            facs.append((v, signs[t] * x.eps))
        val = lattice_sum(facs, K)
        method["form"] = "averaged"
    else:
        # letters in unreflected stretches sit at z0, reflected ones at 1 - z0
        val = 0j
        for low in (True, False):
            facs = []
            for t, x in dets:
                s = _symbol_for(symbols, x.copy)
                use_first = x.kind is Kind.D or (low == (signs[t] > 0))
                facs.append((_det_values(x, s if use_first else s.second, K), signs[t] * x.eps))
            val += 0.5 * lattice_sum(facs, K)
    c = Contribution("lattice", complex(val), 1.0, 0.0, 0.0)
    return LimitMomentResult(complex(val), 0.0, (c,), method, format_word(word))


# ---------------------------------------------------------------- walk

@dataclass
class _WalkPlan:
    after: np.ndarray
    before: np.ndarray
    blocks: list            # (block, r_pos, s_pos, eta)
    det: list               # positions of deterministic letters
    dg: list                # positions of Dg letters (pattern bits)
    signs: list


def _walk_plan(word, rand_pos, pi):
    L = len(word)
    k = pi.k
    ncol = k + 2
    signs = _reflection_signs(word)
    coef = {}
    blocks = []
    for b, (r, s) in enumerate(pi.blocks):
        tr, ts = rand_pos[r - 1], rand_pos[s - 1]
        eta = -signs[tr] * word[tr].eps * signs[ts] * word[ts].eps
        coef[tr] = (b, 1)
        coef[ts] = (b, eta)
        blocks.append((b, tr, ts, eta))
    after = np.zeros((L, ncol))
    before = np.zeros((L, ncol))
    cur = _unit(ncol, 1)
    for t in range(L - 1, -1, -1):
        before[t] = cur
        x = word[t]
        if x.kind is Kind.P:
            cur = _unit(ncol, 0) - cur
        elif t in coef:
            b, c = coef[t]
            cur = cur + x.eps * c * _unit(ncol, 2 + b)
        after[t] = cur
    if not np.allclose(after[0], _unit(ncol, 1)):
        raise AssertionError("walk does not close; parity checks should have caught this")
    det = [t for t, x in enumerate(word) if x.kind.deterministic]
    dg = [t for t in det if word[t].kind is Kind.DG]
    return _WalkPlan(after, before, blocks, det, dg, signs)


def _det_table(word, plan, symbols, tol, K):
    """Lattice sums for every ``d'``/``d''`` pattern of the ``Dg`` letters."""
    if not plan.det:
        return np.array([1 + 0j]), {"K": 0, "tail_bound": 0.0}
    syms = []
    for t in plan.det:
        s = _symbol_for(symbols, word[t].copy)
        syms += [s, s.second] if word[t].kind is Kind.DG else [s]
    if K is None:
        K, bound = _choose_K(syms, len(plan.det), tol)
    else:
        bound = float("nan")
    table = np.zeros(1 << len(plan.dg), dtype=complex)
    for pat in range(len(table)):
        facs = []
        for t in plan.det:
            s = _symbol_for(symbols, word[t].copy)
            if word[t].kind is Kind.DG and (pat >> plan.dg.index(t)) & 1:
                s = s.second
            facs.append((_det_values(word[t], s, K), plan.signs[t] * word[t].eps))
        table[pat] = lattice_sum(facs, K)
    return table, {"K": int(K), "tail_bound": float(bound)}


def _block_tables(word, plan, spec, gen_weight):
    """Per block: for pair-reflected letters the weights for ``z >= 0`` and
    ``z < 0``; for generalized letters a 2x2 table over ``a``/``b`` reads."""
    out = []
    for b, tr, ts, eta in plan.blocks:
        x, y = word[tr], word[ts]
        sp = _spec_for(spec, x.copy)
        cov = sp.covariance()
        if x.kind is Kind.TG:
            if eta < 0:
                return None
            tab = np.array([[gen_weight(x.eps, y.eps, ra, rb, sp) for rb in (0, 1)]
                            for ra in (0, 1)])
            out.append(("g", b, tr, ts, tab))
        else:
            wp = pair_expectation(cov, 0, 0 if eta > 0 else 1, x.eps, y.eps)
            wm = pair_expectation(cov, 1, 1 if eta > 0 else 0, x.eps, y.eps)
            out.append(("s", b, tr, ts, (wp, wm)))
    return out


def _default_gen_weight(eps_r, eps_s, read_r, read_s, spec):
    return pair_expectation(spec.covariance(), read_r, read_s, eps_r, eps_s)


def _walk_fn(plan, tables, det_table):
    def fn(z0, z):
        pa = _eval_forms(plan.after, z0, z)
        pb = _eval_forms(plan.before, z0, z)
        sup = _support(pa)
        val = np.ones(len(z0), dtype=complex)
        for kind, b, tr, ts, tab in tables:
            if kind == "s":
                val *= np.where(z[:, b] >= 0, tab[0], tab[1])
            else:
                rr = (pb[:, tr] + pa[:, tr] > 1).astype(int)
                rs = (pb[:, ts] + pa[:, ts] > 1).astype(int)
                val *= tab[rr, rs]
        if len(det_table) > 1:
            idx = np.zeros(len(z0), dtype=int)
            for bit, t in enumerate(plan.dg):
                idx |= (2 * pb[:, t] > 1).astype(int) << bit
            val *= det_table[idx]
        else:
            val *= det_table[0]
        return val * sup, sup
    return fn


def walk_limit(word, spec=None, symbols=None, integ: Integrator = Integrator(), tol=1e-12,
               K=None, gen_weight=None):
    """Limit of ``phi_n`` for any normalized word by integrating the scaled
    walk of the row position.

    Pair-reflected (``T``) and generalized (``Tg``) random letters cannot be
    mixed. ``gen_weight(eps_r, eps_s, read_r, read_s, spec)`` overrides the
    pair weight of generalized letters (``read`` is 0 for ``a``, 1 for ``b``).
    """
    word = normalize_word(word)
    if not word:
        return LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, "")
    kinds = {x.kind for x in word}
    if Kind.T in kinds and Kind.TG in kinds:
        raise MixedModels("a word cannot mix pair-reflected and generalized random letters")
    p = sum(1 for x in word if x.kind is Kind.P)
    rand_pos = [t for t, x in enumerate(word) if x.kind.random]
    if p % 2:
        return _zero(word, "odd number of P letters")
    if len(rand_pos) % 2:
        return _zero(word, "odd number of random letters")
    gen_weight = gen_weight or _default_gen_weight
    k = len(rand_pos) // 2
    rand_letters = [word[t] for t in rand_pos]
    pis, fns, skipped = [], [], []
    meta = {}
    for pi in enumerate_pairings(2 * k):
        if not _copy_ok(rand_letters, pi):
            skipped.append(pi)
            continue
        plan = _walk_plan(word, rand_pos, pi)
        tables = _block_tables(word, plan, spec, gen_weight)
        if tables is None:
            skipped.append(pi)
            continue
        det_table, meta = _det_table(word, plan, symbols, tol, K)
        pis.append(pi)
        fns.append(_walk_fn(plan, tables, det_table))
    if k == 0 and pis:
        # no random letters: integrate over z0 exactly (piecewise constant at 1/2)
        fn = fns[0]
        v_lo, _ = fn(np.array([0.25]), np.zeros((1, 0)))
        v_hi, _ = fn(np.array([0.75]), np.zeros((1, 0)))
        val = complex(0.5 * (v_lo[0] + v_hi[0]))
        m = {"kind": "ExactSum", **meta}
        return LimitMomentResult(val, 0.0, (Contribution("()", val, 1.0, 0.0, 0.0),), m,
                                 format_word(word))
    res = _assemble(word, pis, fns, k, integ, skipped)
    method = dict(res.method)
    method["evaluator"] = "walk"
    if meta.get("K"):
        method.update({"K": meta["K"], "tail_bound": meta["tail_bound"]})
    return LimitMomentResult(res.value, res.se, res.contributions, method, res.word)


def limit_moment_TPgen(word, spec, integ: Integrator = Integrator(), gen_weight=None):
    """Limit for words mixing ``P`` and generalized Toeplitz letters.

    The pair weight is a callback ``gen_weight(eps_r, eps_s, read_r, read_s,
    spec)``; the default is the covariance of the two entries read.
    """
    word = normalize_word(word)
    _check_letters(word, (Kind.TG, Kind.P), "limit_moment_TPgen")
    return walk_limit(word, spec, integ=integ, gen_weight=gen_weight)


# ---------------------------------------------------------------- mixed words

def limit_moment_mixed(word, spec=None, symbols=None, integ: Integrator = Integrator(),
                       tol=1e-12, K=None):
    """Limit for a word over the full alphabet.

    For pair-reflected random letters the limit factorizes: the lattice sum
    of the ``(P, D)`` subword times the limit of the ``(P, T)`` subword,
    provided the ``P`` count and the random count are both even. Words with
    generalized letters couple the deterministic symbols to the walk
    position and are integrated jointly.
    """
    word = normalize_word(word)
    kinds = {x.kind for x in word}
    if Kind.T in kinds and Kind.TG in kinds:
        raise MixedModels("a word cannot mix pair-reflected and generalized random letters")
    p = sum(1 for x in word if x.kind is Kind.P)
    nrand = sum(1 for x in word if x.kind.random)
    if p % 2:
        return _zero(word, "odd number of P letters")
    if nrand % 2:
        return _zero(word, "odd number of random letters")
    if Kind.TG in kinds or Kind.DG in kinds:
        return walk_limit(word, spec, symbols, integ, tol, K)
    det_word = tuple(x for x in word if x.kind in (Kind.P, Kind.D))
    rand_word = tuple(x for x in word if x.kind in (Kind.P, Kind.T))
    d = limit_moment_D(det_word, symbols, tol, K) if any(x.kind is Kind.D for x in word) \
        else LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, "")
    t = limit_moment_TP(rand_word, spec, integ) if nrand else \
        LimitMomentResult(1 + 0j, 0.0, (), {"kind": "Exact"}, "")
    val = d.value * t.value
    contribs = tuple(Contribution(c.partition, c.weight * d.value, c.volume, c.volume_se,
                                  c.se * abs(d.value)) for c in t.contributions)
    if not contribs:
        contribs = (Contribution("()", val, 1.0, 0.0, 0.0),)
    method = {"kind": "Product", "deterministic": d.method, "random": t.method,
              "deterministic_value": [d.value.real, d.value.imag],
              "random_value": [t.value.real, t.value.imag]}
    return LimitMomentResult(val, t.se * abs(d.value), contribs, method, format_word(word))


def limit_moment(word, spec=None, symbols=None, integ: Integrator = Integrator(), tol=1e-12,
                 K=None):
    """Route a word to the matching limit evaluator by its alphabet."""
    word = normalize_word(word)
    kinds = {x.kind for x in word} - {Kind.P}
    if not kinds:
        return walk_limit(word, spec, symbols, integ, tol, K)
    if kinds == {Kind.T}:
        return limit_moment_TP(word, spec, integ)
    if kinds == {Kind.D}:
        return limit_moment_D(word, symbols, tol, K)
    if kinds <= {Kind.D, Kind.DG}:
        return limit_moment_Dgen(word, symbols, tol, K)
    if kinds == {Kind.TG} and not any(x.kind is Kind.P for x in word):
        return limit_moment_Tgen(word, spec, integ)
    return limit_moment_mixed(word, spec, symbols, integ, tol, K)
