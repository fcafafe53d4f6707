"""Command line harness: ``toeplab <command> [options]``.

Commands: ``trace-check``, ``limit``, ``converge``, ``esd`` and
``concentration``. Every output file starts with a provenance header holding
the tool version, the seed and a hash of the effective configuration, and
contains no timestamps, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import warnings

import numpy as np

from . import __version__
from .limits import Integrator, MixedModels, limit_moment
from .model import (CorrelationSpec, DeterministicSymbol, Kind, Letter, ParseError, Polynomial,
                    SpecError, _read_flat, format_word, parse_spec_text, parse_word)
from .trace import (FORMULA_MAX_LEN, FORMULA_MAX_N, TooLarge, concentration_probe,
                    empirical_phi, realize_word, trace_formula_generalized,
                    trace_formula_toeplitz, trace_formula_with_P, trace_word)

FAMILIES = ("toeplitz", "hankel", "generalized")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- provenance

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header(config, seed):
    return f"# toeplab {__version__} config_hash={config_hash(config)} seed={seed}\n"


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return f"{float(x):.12g}"


# ---------------------------------------------------------------- config

DEFAULT_SPEC = CorrelationSpec(0.5, 0.5)


def _load_spec(path):
    if not path:
        return DEFAULT_SPEC, None, ""
    with open(path) as fh:
        text = fh.read()
    try:
        spec, sym = parse_spec_text(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad spec file {path}: {exc}") from exc
    return spec, sym, text


def _n_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad size list {text!r}") from exc


# ---------------------------------------------------------------- trace-check

def _random_word(rng, family, max_len):
    length = int(rng.integers(1, max_len + 1))
    if family == "toeplitz":
        pool = [Letter(Kind.T, 1), Letter(Kind.T, 2), Letter(Kind.D, 1)]
    elif family == "hankel":
        pool = [Letter(Kind.P), Letter(Kind.T, 1), Letter(Kind.T, 2), Letter(Kind.D, 1)]
    else:
        pool = [Letter(Kind.P), Letter(Kind.TG, 1), Letter(Kind.TG, 2), Letter(Kind.DG, 1)]
    word = []
    for _ in range(length):
        x = pool[int(rng.integers(len(pool)))]
        if x.kind is not Kind.P and rng.random() < 0.5:
            x = x.adjoint()
        word.append(x)
    if family == "hankel" and not any(x.kind is Kind.P for x in word):
        word[int(rng.integers(length))] = Letter(Kind.P)
    return tuple(word)


def trace_check(families=FAMILIES, cases=100, n_min=3, n_max=12, max_len=5, seed=0, tol=1e-9):
    """Compare index-sum trace formulas with dense products on random
    cases. Returns a list of row dicts."""
    if n_max > FORMULA_MAX_N or max_len > FORMULA_MAX_LEN:
        raise TooLarge(f"trace-check caps are n <= {FORMULA_MAX_N}, length <= {FORMULA_MAX_LEN}")
    pr = CorrelationSpec(0.6, 0.4, (0.1, 0.3, 0.1, 0.05, 0.1, 0.05))
    gen = CorrelationSpec.generalized((0.1, 0.2, 0.1, 0.05, 0.15, 0.1), 0.6)
    sym = DeterministicSymbol.geometric(0.5, paired=DeterministicSymbol.finite({0: 1.0, 1: -0.5}))
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for fi, family in enumerate(families):
            rng = np.random.default_rng([seed, fi])
            for case in range(cases):
                word = _random_word(rng, family, max_len)
                n = int(rng.integers(n_min, n_max + 1))
                spec = gen if family == "generalized" else pr
                mats = realize_word(word, n, spec, sym, seed, (fi << 20) + case)
                dense = trace_word(word, mats, n, "dense", scaled=False).value
                if family == "toeplitz":
                    formula = trace_formula_toeplitz(word, mats, n, scaled=False).value
                elif family == "hankel":
                    formula = trace_formula_with_P(word, mats, n, scaled=False).value
                else:
                    formula = trace_formula_generalized(word, mats, n, scaled=False).value
                dev = abs(formula - dense) / max(abs(dense), 1.0)
                rows.append({"family": family, "case": case, "word": format_word(word), "n": n,
                             "dense": dense, "formula": formula, "rel_dev": dev,
                             "pass": dev <= tol})
    return rows


def cmd_trace_check(args):
    cfg = {"families": list(FAMILIES), "cases": 100, "n_min": 3, "n_max": 12, "max_len": 5,
           "seed": 0, "tol": 1e-9}
    if args.config:
        with open(args.config) as fh:
            kv = _read_flat(fh.read())
        for key, val in kv.items():
            if key == "families":
                cfg[key] = [v.strip() for v in val.split(",") if v.strip()]
            elif key in cfg:
                cfg[key] = type(cfg[key])(val) if key != "tol" else float(val)
            else:
                raise ConfigError(f"unknown trace-check key {key!r}")
    for key in ("cases", "seed", "n_max"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    bad = [f for f in cfg["families"] if f not in FAMILIES]
    if bad:
        raise ConfigError(f"unknown families {bad}")
    try:
        rows = trace_check(cfg["families"], cfg["cases"], cfg["n_min"], cfg["n_max"],
                           cfg["max_len"], cfg["seed"], cfg["tol"])
    except TooLarge as exc:
        raise ConfigError(str(exc)) from exc
    body = _csv_text(["family", "case", "word", "n", "dense_re", "dense_im", "formula_re",
                      "formula_im", "rel_dev", "pass"],
                     [[r["family"], r["case"], r["word"], r["n"], _fmt(r["dense"].real),
                       _fmt(r["dense"].imag), _fmt(r["formula"].real), _fmt(r["formula"].imag),
                       f"{r['rel_dev']:.3e}", int(r["pass"])] for r in rows])
    fails = sum(not r["pass"] for r in rows)
    worst = max((r["rel_dev"] for r in rows), default=0.0)
    summary = f"# cases={len(rows)} failures={fails} max_rel_dev={worst:.3e}\n"
    _emit(_header(cfg, cfg["seed"]) + summary + body, args.out)
    return 1 if fails else 0


# ---------------------------------------------------------------- limit

def _integrator(args):
    return Integrator(samples=args.samples, replicates=args.qmc_reps, seed=args.seed)


def cmd_limit(args):
    spec, sym, text = _load_spec(args.spec)
    word = parse_word(args.word)
    integ = _integrator(args)
    res = limit_moment(word, spec, sym, integ)
    cfg = {"command": "limit", "word": args.word, "spec": text, "samples": args.samples,
           "qmc_reps": args.qmc_reps, "seed": args.seed}
    out = res.to_dict()
    out["provenance"] = {"version": __version__, "config_hash": config_hash(cfg),
                         "seed": args.seed}
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", args.out)
    return 0


# ---------------------------------------------------------------- converge

def converge_rows(word, spec, sym, n_list, reps, seed, integ, universality=False):
    """Rows of the convergence table (or the two-law comparison)."""
    rows = []
    if universality:
        g, r = spec.with_base("GaussianMix"), spec.with_base("RademacherMix")
        for n in n_list:
            a = empirical_phi(word, g, n, reps, seed, sym)
            b = empirical_phi(word, r, n, reps, seed + 1, sym)
            se = float(np.hypot(a.se_abs, b.se_abs))
            gap = abs(a.mean - b.mean)
            rows.append([n, _fmt(a.mean.real), _fmt(a.mean.imag), _fmt(b.mean.real),
                         _fmt(b.mean.imag), _fmt(gap), _fmt(se), int(gap <= 3 * se)])
        return ["n", "gauss_re", "gauss_im", "rademacher_re", "rademacher_im", "gap",
                "combined_se", "within_3se"], rows
    lim = limit_moment(word, spec, sym, integ).value
    for n in n_list:
        e = empirical_phi(word, spec, n, reps, seed, sym)
        rows.append([n, _fmt(e.mean.real), _fmt(e.mean.imag), _fmt(e.se_re), _fmt(e.se_im),
                     _fmt(lim.real), _fmt(lim.imag), _fmt(abs(e.mean - lim))])
    return ["n", "re", "im", "se_re", "se_im", "limit_re", "limit_im", "gap"], rows


def cmd_converge(args):
    spec, sym, text = _load_spec(args.spec)
    word = parse_word(args.word)
    n_list = _n_list(args.n)
    head, rows = converge_rows(word, spec, sym, n_list, args.reps, args.seed, _integrator(args),
                               args.universality)
    cfg = {"command": "converge", "word": args.word, "spec": text, "n": n_list,
           "reps": args.reps, "seed": args.seed, "samples": args.samples,
           "universality": args.universality}
    _emit(_header(cfg, args.seed) + _csv_text(head, rows), args.out)
    return 0


# ---------------------------------------------------------------- esd / concentration

def _poly(text):
    try:
        with open(text) as fh:
            text = fh.read()
    except OSError:
        pass
    return Polynomial.parse(text)


def cmd_esd(args):
    from .spectral import esd_study
    spec, sym, text = _load_spec(args.spec)
    Q = _poly(args.poly)
    n_list = _n_list(args.n)
    study = esd_study(Q, spec, n_list, args.reps, args.seed, args.max_moment, sym,
                      _integrator(args))
    cfg = {"command": "esd", "poly": str(Q), "spec": text, "n": n_list, "reps": args.reps,
           "seed": args.seed, "max_moment": args.max_moment, "samples": args.samples}
    head = _header(cfg, args.seed)
    rows = []
    for n in n_list:
        for rep, r in enumerate(study.reports[n]):
            rows += [[n, rep, i, _fmt(v)] for i, v in enumerate(r.eigenvalues)]
    prefix = args.out or "esd"
    _emit(head + _csv_text(["n", "replicate", "index", "eigenvalue"], rows),
          None if prefix == "-" else prefix + "_eigenvalues.csv")
    out = study.to_dict()
    out["provenance"] = {"version": __version__, "config_hash": config_hash(cfg),
                         "seed": args.seed}
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n",
          None if prefix == "-" else prefix + "_moments.json")
    return 0


def cmd_concentration(args):
    spec, sym, text = _load_spec(args.spec)
    Q = _poly(args.poly)
    n_list = _n_list(args.n)
    rows, prev = [], None
    for n in n_list:
        r = concentration_probe(Q, args.k, spec, n, args.reps, args.seed, sym)
        ratio = prev / r.fourth_central_moment if prev and r.fourth_central_moment > 0 else None
        rows.append([n, _fmt(r.fourth_central_moment), _fmt(r.se), _fmt(r.mean),
                     "" if ratio is None else _fmt(ratio), int(r.reliable)])
        prev = r.fourth_central_moment
    cfg = {"command": "concentration", "poly": str(Q), "k": args.k, "spec": text,
           "n": n_list, "reps": args.reps, "seed": args.seed}
    _emit(_header(cfg, args.seed) + _csv_text(
        ["n", "fourth_central_moment", "se", "mean", "ratio_prev_over_this", "reliable"], rows),
        args.out)
    return 0


# ---------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="toeplab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"toeplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, word=False, n="1024", reps=200):
        sp.add_argument("--spec", help="flat key = value spec file")
        if word:
            sp.add_argument("--word", required=True, help="e.g. P.T1.T1*")
        sp.add_argument("--n", default=n, help="comma separated sizes")
        sp.add_argument("--reps", type=int, default=reps)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--samples", type=int, default=1 << 16, help="QMC points per replicate")
        sp.add_argument("--qmc-reps", type=int, default=16)
        sp.add_argument("--out", help="output path ('-' or omitted for stdout)")

    tc = sub.add_parser("trace-check", help="index-sum formulas vs dense traces")
    tc.add_argument("--config")
    tc.add_argument("--cases", type=int)
    tc.add_argument("--n-max", type=int)
    tc.add_argument("--seed", type=int)
    tc.add_argument("--out")
    tc.set_defaults(func=cmd_trace_check)

    lm = sub.add_parser("limit", help="limit *-moment of a word")
    common(lm, word=True)
    lm.set_defaults(func=cmd_limit)

    cv = sub.add_parser("converge", help="empirical phi_n against the limit")
    common(cv, word=True, n="256,512,1024")
    cv.add_argument("--universality", action="store_true",
                    help="compare Gaussian and Rademacher inputs instead")
    cv.set_defaults(func=cmd_converge)

    es = sub.add_parser("esd", help="spectral moments of a self-adjoint polynomial")
    common(es, n="256", reps=10)
    es.add_argument("--poly", required=True, help="polynomial text or file")
    es.add_argument("--max-moment", type=int, default=8)
    es.set_defaults(func=cmd_esd)

    cc = sub.add_parser("concentration", help="fourth central moment of (1/n) Tr Q^k")
    common(cc, n="256,512", reps=2000)
    cc.add_argument("--poly", required=True)
    cc.add_argument("--k", type=int, default=2)
    cc.set_defaults(func=cmd_concentration)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, SpecError, MixedModels) as exc:
        sys.stderr.write(f"toeplab: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
