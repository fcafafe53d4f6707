import numpy as np
import pytest

from oracles import backward_identity, generalized_entries, toeplitz_entries
from toeplab.ensembles import (DimensionMismatch, InvalidFlavor, MatrixKind, _dense, apply,
                               make_rng, matvec, realize, sample_generalized,
                               sample_pair_reflected, to_dense, toeplitz_product)
from toeplab.model import CorrelationSpec, Flavor


def _rand_seq(rng, n):
    return rng.standard_normal(2 * n - 1) + 1j * rng.standard_normal(2 * n - 1)


def test_dense_forms_match_entry_oracles():
    rng = np.random.default_rng(0)
    n = 7
    a, b = _rand_seq(rng, n), _rand_seq(rng, n)
    assert np.array_equal(_dense(realize(MatrixKind.TOEPLITZ, a, n)), toeplitz_entries(a, n))
    g = _dense(realize(MatrixKind.GEN_TOEPLITZ, (a, b), n))
    assert np.array_equal(g, generalized_entries(a, b, n))
    assert np.array_equal(_dense(realize(MatrixKind.BACKWARD_IDENTITY, None, n)),
                          backward_identity(n))


def test_h5_pattern():
    # label a_k as 10 + k and b_k as 100 + k so each entry records its source
    n = 5
    ks = np.arange(-(n - 1), n)
    h = backward_identity(n) @ _dense(realize(MatrixKind.GEN_TOEPLITZ, (10 + ks, 100 + ks), n))
    a = lambda k: 10 + k
    b = lambda k: 100 + k
    expected = np.array([
        [b(4), b(3), b(2), b(1), b(0)],
        [a(3), b(2), b(1), b(0), b(-1)],
        [a(2), a(1), b(0), b(-1), b(-2)],
        [a(1), a(0), a(-1), b(-2), b(-3)],
        [a(0), a(-1), a(-2), a(-3), b(-4)],
    ])
    assert np.array_equal(h.real, expected)


@pytest.mark.parametrize("n", [5, 257, 300])
@pytest.mark.parametrize("adjoint", [False, True])
def test_apply_matches_dense(n, adjoint):
    rng = np.random.default_rng(n)
    m = realize(MatrixKind.TOEPLITZ, _rand_seq(rng, n), n)
    x = rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))
    d = toeplitz_entries(m.a, n)
    d = d.conj().T if adjoint else d
    assert np.allclose(apply(m, x, adjoint), d @ x, atol=1e-10)
    assert np.allclose(apply(m, x, adjoint, method="fft"), d @ x, atol=1e-10)
    assert np.allclose(matvec(m, x[:, 0], adjoint), d @ x[:, 0], atol=1e-10)


def test_generalized_apply_and_dimension_checks():
    rng = np.random.default_rng(3)
    n = 6
    m = realize(MatrixKind.GEN_TOEPLITZ, (_rand_seq(rng, n), _rand_seq(rng, n)), n)
    x = rng.standard_normal(n)
    assert np.allclose(apply(m, x, True), _dense(m).conj().T @ x)
    with pytest.raises(DimensionMismatch):
        apply(m, np.ones(n + 1))
    with pytest.raises(DimensionMismatch):
        realize(MatrixKind.TOEPLITZ, np.ones(4), 3)
    with pytest.raises(DimensionMismatch):
        to_dense(realize(MatrixKind.TOEPLITZ, np.ones(2 * 600 - 1), 600))


@pytest.mark.parametrize("n", [1, 2, 9, 120])
def test_toeplitz_product(n):
    rng = np.random.default_rng(n)
    m1 = realize(MatrixKind.TOEPLITZ, _rand_seq(rng, n), n)
    m2 = realize(MatrixKind.TOEPLITZ, _rand_seq(rng, n), n)
    d1, d2 = toeplitz_entries(m1.a, n), toeplitz_entries(m2.a, n)
    for j1 in (False, True):
        for j2 in (False, True):
            ref = (d1.conj().T if j1 else d1) @ (d2.conj().T if j2 else d2)
            assert np.allclose(toeplitz_product(m1, m2, j1, j2), ref, atol=1e-11)


def test_pair_reflected_covariance():
    rho = (0.1, 0.4, 0.15, 0.15, 0.1, 0.05)
    spec = CorrelationSpec(0.6, 0.4, rho)
    n = 40000
    seq = sample_pair_reflected(spec, n, seed=5)
    j = np.arange(1, n)
    ap, am = seq[n - 1 + j], seq[n - 1 - j]
    quad = np.stack([ap.real, ap.imag, am.real, am.imag])
    emp = quad @ quad.T / len(j)
    assert np.allclose(emp, spec.covariance(), atol=0.03)


def test_flavors_give_structured_matrices():
    n = 9
    h = sample_pair_reflected(CorrelationSpec.hermitian(), n, seed=1)
    d = toeplitz_entries(h, n)
    assert np.allclose(d, d.conj().T)
    assert abs(h[n - 1].imag) < 1e-15
    s = sample_pair_reflected(CorrelationSpec.real_symmetric(), n, seed=1)
    assert np.allclose(s, s[::-1]) and np.all(s.imag == 0)


def test_rademacher_base_keeps_second_moments():
    spec = CorrelationSpec(0.5, 0.5, (0, 0.4, 0.15, 0.15, 0.1, 0), base="RademacherMix")
    n = 40000
    seq = sample_pair_reflected(spec, n, seed=2)
    j = np.arange(1, n)
    ap, am = seq[n - 1 + j], seq[n - 1 - j]
    assert abs(np.mean(ap * am) - complex(0.4 - 0.1, 0.3)) < 0.03


def test_generalized_sampling():
    spec = CorrelationSpec.generalized((0, 0.3, 0, 0, 0, 0.2), 0.5)
    a, b = sample_generalized(spec, 30000, seed=4)
    assert abs(np.mean(a * np.conj(b)) - 0.5) < 0.03
    with pytest.raises(InvalidFlavor):
        sample_generalized(CorrelationSpec(), 4)


def test_streams_are_reproducible_and_distinct():
    spec = CorrelationSpec()
    x = sample_pair_reflected(spec, 16, seed=3, stream=(0, 1, 1))
    y = sample_pair_reflected(spec, 16, seed=3, stream=(0, 1, 1))
    z = sample_pair_reflected(spec, 16, seed=3, stream=(0, 1, 2))
    assert np.array_equal(x, y)
    assert not np.allclose(x, z)
    assert make_rng(1, 2).random() == make_rng(1, 2).random()


def test_real_asymmetric_flavor_is_real():
    spec = CorrelationSpec(1.0, 0.0, (0,) * 6, Flavor.REAL_ASYMMETRIC)
    s = sample_pair_reflected(spec, 8, seed=0)
    assert np.all(s.imag == 0) and not np.allclose(s, s[::-1])
