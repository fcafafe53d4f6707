import numpy as np
import pytest

from oracles import backward_identity, generalized_entries, toeplitz_entries, trace_by_loops
from toeplab.model import CorrelationSpec, DeterministicSymbol, Kind, parse_word
from toeplab.trace import (MissingCopy, TooLarge, TraceMethod, _map, concentration_probe,
                           empirical_phi, hermitian_copies, realize_word,
                           trace_formula_generalized, trace_formula_toeplitz,
                           trace_formula_with_P, trace_word, worker_count,
                           write_replicate_csv)

PR = CorrelationSpec(0.6, 0.4, (0.1, 0.3, 0.1, 0.05, 0.1, 0.05))
GEN = CorrelationSpec.generalized((0.1, 0.2, 0.1, 0.05, 0.15, 0.1), 0.6)
SYM = DeterministicSymbol.geometric(0.5, paired=DeterministicSymbol.finite({0: 1.0, 1: -0.5}))


def _oracle_trace(word, mats, n):
    dense = []
    for x in parse_word(word):
        if x.kind is Kind.P:
            dense.append(backward_identity(n))
            continue
        m = mats[(x.kind, x.copy)]
        d = generalized_entries(m.a, m.b, n) if m.b is not None else toeplitz_entries(m.a, n)
        dense.append(d.conj().T if x.star else d)
    return trace_by_loops(dense)


WORDS = ["T1", "T1.T1*", "P.T1", "T1.P", "P.D1.T1.P.T2*", "T1.D1*.P.T2.P.T2*",
         "P.T1.T1*.P.T1.T1*", "D1.T1.T1*", "T1.T2.T1*.T2*.T1.T1"]
GWORDS = ["Tg1.P.Tg1*", "Dg1.Tg1.P", "Tg1.Tg2*.Dg1", "P.Tg1.P.Tg1*.Dg1*"]


@pytest.mark.parametrize("word", WORDS + GWORDS)
@pytest.mark.parametrize("n", [5, 37, 300])
def test_structured_trace_matches_oracle(word, n):
    spec = GEN if "g" in word else PR
    mats = realize_word(word, n, spec, SYM, seed=1, replicate=2)
    ref = _oracle_trace(word, mats, n) if n <= 37 else None
    s = trace_word(word, mats, n, scaled=False)
    d = trace_word(word, mats, n, "dense", scaled=False)
    assert s.method is TraceMethod.STRUCTURED and d.method is TraceMethod.DENSE
    assert abs(s.value - d.value) <= 1e-9 * max(1.0, abs(d.value))
    if ref is not None:
        assert abs(d.value - ref) <= 1e-9 * max(1.0, abs(ref))


def test_scaling_and_identity_word():
    n = 16
    mats = realize_word("T1.T1*", n, PR, None, 0, 0)
    raw = trace_word("T1.T1*", mats, n, scaled=False).value
    assert np.isclose(trace_word("T1.T1*", mats, n).value, raw / n)
    assert trace_word("P.P", mats, n).value == n


def test_missing_copy():
    with pytest.raises(MissingCopy):
        realize_word("T2", 4, {1: PR}, None)
    with pytest.raises(MissingCopy):
        realize_word("D1", 4, PR, None)


@pytest.mark.parametrize("word", ["T1.T2*.D1", "T1.T1.T1*.T1*", "T1", "D1.D1*"])
def test_toeplitz_formula(word):
    n = 9
    mats = realize_word(word, n, PR, SYM, 3, 0)
    ref = trace_word(word, mats, n, "dense", scaled=False).value
    assert abs(trace_formula_toeplitz(word, mats, n, scaled=False).value - ref) < 1e-9 * max(1, abs(ref))


@pytest.mark.parametrize("word", ["P.T1", "P.T1.P.T1*", "T1.P.T2.D1*.P", "P.T1.T1*", "P.P.T1.T1"])
def test_formula_with_P(word):
    n = 8
    mats = realize_word(word, n, PR, SYM, 4, 0)
    ref = trace_word(word, mats, n, "dense", scaled=False).value
    assert abs(trace_formula_with_P(word, mats, n, scaled=False).value - ref) < 1e-9 * max(1, abs(ref))


@pytest.mark.parametrize("word", ["Tg1.Tg1*", "P.Tg1.Dg1", "Tg1.P.Tg2.P.Tg1*", "Dg1.Dg1*"])
@pytest.mark.parametrize("n", [4, 7])
def test_formula_generalized(word, n):
    mats = realize_word(word, n, GEN, SYM, 5, 0)
    ref = trace_word(word, mats, n, "dense", scaled=False).value
    got = trace_formula_generalized(word, mats, n, scaled=False).value
    assert abs(got - ref) < 1e-9 * max(1, abs(ref))


def test_formula_caps():
    mats = realize_word("T1", 20, PR, None)
    with pytest.raises(TooLarge):
        trace_formula_toeplitz("T1", mats, 20)
    mats = realize_word("T1", 4, PR, None)
    with pytest.raises(TooLarge):
        trace_formula_toeplitz("T1.T1.T1.T1.T1.T1", mats, 4)


def test_empirical_second_moment_is_unbiased():
    # E Tr(T T*) / n^2 = sigma_x2 + sigma_y2 exactly at every n
    est = empirical_phi("T1.T1*", PR, 64, 200, seed=0, return_samples=True)
    assert abs(est.mean - 1.0) < 4 * est.se_abs
    assert est.samples.shape == (200,)
    again = empirical_phi("T1.T1*", PR, 64, 200, seed=0)
    assert again.mean == est.mean


def test_empirical_needs_two_replicates():
    with pytest.raises(ValueError):
        empirical_phi("T1", PR, 8, 1)


def test_worker_pool_matches_serial(monkeypatch):
    serial = empirical_phi("T1.T1*.T1", PR, 32, 6, seed=2, return_samples=True).samples
    monkeypatch.setenv("TOEPLAB_WORKERS", "2")
    assert worker_count() == 2
    pooled = empirical_phi("T1.T1*.T1", PR, 32, 6, seed=2, return_samples=True).samples
    assert np.array_equal(serial, pooled)
    monkeypatch.setenv("TOEPLAB_WORKERS", "oops")
    assert worker_count() == 1
    assert _map(abs, [-1, 2]) == [1, 2]


def test_replicate_csv(tmp_path):
    est = empirical_phi("T1.T1*", PR, 16, 3, seed=9, return_samples=True)
    path = tmp_path / "reps.csv"
    write_replicate_csv(path, parse_word("T1.T1*"), est, 9)
    lines = path.read_text().splitlines()
    assert lines[0] == "seed,replicate,n,word,re,im" and len(lines) == 4
    with pytest.raises(ValueError):
        write_replicate_csv(path, "T1", empirical_phi("T1", PR, 4, 2), 0)


def test_concentration_deterministic_polynomial_is_exactly_zero():
    r = concentration_probe("D1.D1*", 1, None, 32, 50, 0, SYM)
    assert r.fourth_central_moment == 0.0


def test_concentration_fast_path_matches_general():
    spec = CorrelationSpec.hermitian()
    fast = concentration_probe("T1", 2, spec, 24, 40, seed=1)
    slow = concentration_probe("0.5 T1 + 0.5 T1*", 2, spec, 24, 40, seed=1)
    assert np.isclose(fast.mean, slow.mean) and np.isclose(fast.fourth_central_moment,
                                                           slow.fourth_central_moment)


def test_hermitian_copies():
    assert hermitian_copies("T1", CorrelationSpec.hermitian()) == {(Kind.T, 1)}
    assert hermitian_copies("T1", PR) == set()
