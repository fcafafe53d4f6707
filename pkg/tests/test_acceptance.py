"""The eleven acceptance criteria, each at its stated tolerance."""

import time

import numpy as np

from constants import PAIRING_COUNTS, PSD_RHO, PSD_TT, TOEPLITZ_M4, TOEPLITZ_M4_VOLUMES
from oracles import backward_identity, toeplitz_pairing_volume
from toeplab.cli import FAMILIES, main, trace_check
from toeplab.ensembles import MatrixKind, _dense, realize
from toeplab.limits import Integrator, limit_moment, limit_moment_D, limit_moment_mixed, limit_moment_T
from toeplab.model import CorrelationSpec, DeterministicSymbol, P, normalize_word
from toeplab.partitions import enumerate_pairings
from toeplab.spectral import eigenvalues_hermitian, esd_study, gaussian_bound, limit_moments
from toeplab.trace import concentration_probe, empirical_phi, realize_word

N = 1024
REPS = 200
PSD = CorrelationSpec(0.5, 0.5, PSD_RHO)
RS = CorrelationSpec.real_symmetric()
GEOM = DeterministicSymbol.geometric(0.5)


def test_criterion_01_trace_formula_fidelity(criterion):
    t = time.perf_counter()
    rows = trace_check(FAMILIES, cases=100, n_min=3, n_max=12, max_len=5, seed=0, tol=1e-9)
    dt = time.perf_counter() - t
    worst = max(r["rel_dev"] for r in rows)
    per_family = {f: sum(r["family"] == f for r in rows) for f in FAMILIES}
    ok = all(r["pass"] for r in rows) and dt < 120 and set(per_family.values()) == {100}
    criterion(1, ok, f"{len(rows)} cases, max rel dev {worst:.1e}, {dt:.1f}s")


def test_criterion_02_pairing_counts(criterion):
    t = time.perf_counter()
    counts = tuple(len(enumerate_pairings(2 * k)) for k in range(1, 8))
    dt = time.perf_counter() - t
    criterion(2, counts == PAIRING_COUNTS and dt < 10, f"counts {counts}, {dt:.1f}s")


def test_criterion_03_second_moments(criterion):
    integ = Integrator(samples=1 << 20, replicates=16)
    details, ok = [], True
    cases = [("T1.T1*", CorrelationSpec(1.0, 0.0), 1.0),
             ("T1.T1*", CorrelationSpec(0.5, 0.5), 1.0),
             ("T1.T1", PSD, PSD_TT)]
    for word, spec, target in cases:
        e = empirical_phi(word, spec, N, REPS, seed=3)
        emp_ok = abs(e.mean.real - target.real) <= 3 * e.se_re + 1e-12 and \
            abs(e.mean.imag - target.imag) <= 3 * e.se_im + 1e-12
        lim = limit_moment(word, spec, integ=integ)
        lim_ok = lim.se <= 1e-3 and abs(lim.value - target) <= max(3 * lim.se, 1e-9) + 1e-6
        ok &= emp_ok and lim_ok
        details.append(f"{word}@({spec.sigma_x2},{spec.sigma_y2}) emp {e.mean:.4f} "
                       f"lim {lim.value:.5f} se {lim.se:.1e}")
    criterion(3, ok, "; ".join(details))


def test_criterion_04_toeplitz_fourth_moment(criterion):
    t = time.perf_counter()
    lim = limit_moment_T("T1.T1.T1.T1", RS, Integrator(samples=1 << 20, replicates=16))
    grid = {blocks: toeplitz_pairing_volume(blocks, res=400) for blocks in TOEPLITZ_M4_VOLUMES}
    grid_ok = all(abs(grid[b] - float(v)) < 1e-3 for b, v in TOEPLITZ_M4_VOLUMES.items())
    emp = empirical_phi("T1.T1.T1.T1", RS, N, REPS, seed=4)
    dt = time.perf_counter() - t
    ok = abs(lim.value - TOEPLITZ_M4) <= 0.01 and grid_ok and \
        abs(emp.mean - TOEPLITZ_M4) <= 0.05 and dt < 300
    criterion(4, ok, f"limit {lim.value.real:.5f}, grid volumes "
                     f"{[round(float(v), 4) for v in grid.values()]}, empirical {emp.mean.real:.4f}, "
                     f"{dt:.0f}s")


UNIVERSALITY_WORDS = ["T1.T1*", "T1.T1", "T1.T1*.T1.T1*", "T1.T1.T1*.T1*", "P.T1.P.T1*",
                      "P.T1.T1*.P.T1.T1*", "D1.T1.T1*", "T1.D1.T1*.D1*"]


def test_criterion_05_universality(criterion):
    gauss, rad = PSD.with_base("GaussianMix"), PSD.with_base("RademacherMix")
    worst, ok = 0.0, True
    for word in UNIVERSALITY_WORDS:
        a = empirical_phi(word, gauss, N, REPS, seed=5, symbols=GEOM)
        b = empirical_phi(word, rad, N, REPS, seed=6, symbols=GEOM)
        se = float(np.hypot(a.se_abs, b.se_abs))
        gap = abs(a.mean - b.mean)
        ok &= gap <= 3 * se
        worst = max(worst, gap / se if se > 0 else 0.0)
    criterion(5, ok, f"{len(UNIVERSALITY_WORDS)} words, worst gap {worst:.2f} combined SE")


def test_criterion_06_odd_moment_decay(criterion):
    details, ok = [], True
    for word in ("T1.T1.T1", "P.T1"):
        ests = [empirical_phi(word, PSD, n, REPS, seed=7) for n in (256, 512, N)]
        mags = [abs(e.mean) for e in ests]
        mono = all(mags[i + 1] <= mags[i] + np.hypot(ests[i].se_abs, ests[i + 1].se_abs)
                   for i in range(2))
        ok &= mono and mags[-1] <= 0.05
        details.append(f"{word} |phi| " + ", ".join(f"{m:.4f}" for m in mags))
    criterion(6, ok, "; ".join(details))


def test_criterion_07_factorization(criterion):
    spec = CorrelationSpec()
    integ = Integrator(samples=1 << 18, replicates=16)
    mixed = limit_moment_mixed("D1.T1.T1*", spec, GEOM, integ)
    product = limit_moment_D("D1", GEOM).value * limit_moment_T("T1.T1*", spec, integ).value
    emp = empirical_phi("D1.T1.T1*", spec, N, REPS, seed=8, symbols=GEOM)
    ok = mixed.value == product and abs(emp.mean - mixed.value) <= 3 * emp.se_abs + 0.05
    criterion(7, ok, f"mixed {mixed.value.real:.5f} = product {product.real:.5f}, "
                     f"empirical {emp.mean.real:.4f}")


def test_criterion_08_structural_identities(criterion):
    n = 9
    mats = realize_word("T1", n, RS, seed=1)
    pt = backward_identity(n) @ _dense(mats[next(iter(mats))])
    sym_ok = np.array_equal(pt, pt.T)
    ks = np.arange(-4, 5)
    h = backward_identity(5) @ _dense(realize(MatrixKind.GEN_TOEPLITZ, (10 + ks, 100 + ks), 5))
    a, b = (lambda k: 10 + k), (lambda k: 100 + k)
    h5 = np.array([[b(4), b(3), b(2), b(1), b(0)],
                   [a(3), b(2), b(1), b(0), b(-1)],
                   [a(2), a(1), b(0), b(-1), b(-2)],
                   [a(1), a(0), a(-1), b(-2), b(-3)],
                   [a(0), a(-1), a(-2), a(-3), b(-4)]])
    h5_ok = np.array_equal(h.real, h5) and not h.imag.any()
    pp_ok = normalize_word((P, P)) == ()
    criterion(8, sym_ok and h5_ok and pp_ok,
              f"P.T symmetric {sym_ok}, H5 pattern {h5_ok}, P.P -> identity {pp_ok}")


def test_criterion_09_concentration(criterion):
    r256 = concentration_probe("T1", 2, RS, 256, 2000, seed=9)
    r512 = concentration_probe("T1", 2, RS, 512, 2000, seed=10)
    ratio = r256.fourth_central_moment / r512.fourth_central_moment
    criterion(9, 2.5 <= ratio <= 6, f"m4c(256) {r256.fourth_central_moment:.3e}, "
                                    f"m4c(512) {r512.fourth_central_moment:.3e}, ratio {ratio:.2f}")


def test_criterion_10_spectral(criterion):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(20):
        a = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        a = (a + a.conj().T) / 2
        lam = eigenvalues_hermitian(a, method="jacobi")
        tr, fro = np.trace(a).real, np.linalg.norm(a) ** 2
        worst = max(worst, abs(lam.sum() - tr) / max(abs(tr), 1e-300),
                    abs((lam ** 2).sum() - fro) / fro)
    jac_ok = worst <= 1e-9
    spec = CorrelationSpec.hermitian()
    integ = Integrator(samples=1 << 16, replicates=8)
    study = esd_study("T1", spec, (N,), 20, seed=11, max_moment=4, integ=integ)
    emp, se = study.empirical[N], study.empirical_se[N]
    lims = study.limits
    esd_ok = all(abs(emp[j] - lims[j].real) <= 3 * se[j] + 0.05 for j in (1, 3))
    theta = spec.sigma_x2 + spec.sigma_y2
    theta_ok = abs(lims[1] - theta) <= 1e-3
    high, _ = limit_moments("T1", spec, None, 8, Integrator(samples=1 << 14, replicates=8))
    bound = gaussian_bound(high)
    bound_ok = all(bound.values()) and sorted(bound) == [2, 4, 6, 8]
    criterion(10, jac_ok and esd_ok and theta_ok and bound_ok,
              f"Jacobi worst rel dev {worst:.1e}; m2 {emp[1]:.4f} vs {lims[1].real:.4f}, "
              f"m4 {emp[3]:.4f} vs {lims[3].real:.4f}; Gaussian bound {bound}")


def test_criterion_11_determinism(criterion, tmp_path):
    spec = tmp_path / "s.spec"
    spec.write_text("sigma_x2 = 0.5\nsigma_y2 = 0.5\nrho2 = 0.4\n")
    args = ["converge", "--spec", str(spec), "--word", "T1.T1.T1*.T1*", "--n", "64,128",
            "--reps", "20", "--samples", "4096", "--seed", "11"]
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    rc = main(args + ["--out", str(first)]) + main(args + ["--out", str(second)])
    same = first.read_bytes() == second.read_bytes()
    criterion(11, rc == 0 and same, f"two runs byte-identical: {same}")
