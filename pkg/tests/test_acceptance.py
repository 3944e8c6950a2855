"""Acceptance criteria; each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest
from scipy.stats import unitary_group

from circlepsi import derivations as dv
from circlepsi import extension as ext
from circlepsi import fio, gerbe, spectral
from circlepsi.symbols import ClassicalSymbol, LogSymbol, log_derivation, residue_trace

M = 2048


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return emit


def test_criterion_01_residue_cross_check(verdict):
    t0 = time.perf_counter()
    symbolic = residue_trace(ClassicalSymbol.japanese_power(-1, 4))
    spectral_res = spectral.regularized_trace(spectral.q_power_diagonal(-1, M), -1).residue
    dt = time.perf_counter() - t0
    gap = abs(symbolic - spectral_res)
    ok = abs(symbolic - 2) < 1e-12 and gap < 1e-8 and dt < 10
    verdict(1, ok, f"rTr={symbolic.real:.12f} spectral={spectral_res.real:.12f} gap={gap:.1e} t={dt:.1f}s")


def test_criterion_02_zeta_normalization(verdict):
    ident = np.ones(2 * M + 1)
    q1 = spectral.normalize_q()
    t0 = spectral.regularized_trace(ident, 0).finite_part
    t1 = spectral.regularized_trace(ident, 0, q1).finite_part
    rng = np.random.default_rng(2002)
    gaps = []
    for _ in range(10):
        a = ClassicalSymbol.random(rng, 0, 6, rank=2, K=2)
        lhs, rhs = spectral.shift_check(a, spectral.STANDARD_Q, q1, M)
        gaps.append(abs(lhs - rhs))
    ok = abs(t0) < 1e-8 and abs(t1 - 1) < 1e-8 and max(gaps) <= 1e-6
    verdict(2, ok, f"Tr_<D>(Id)={t0.real:.1e} Tr_Q'(Id)={t1.real:.10f} max shift gap={max(gaps):.1e} (10 cases)")


def test_criterion_03_trace_defect(verdict):
    rng = np.random.default_rng(2003)
    t0 = time.perf_counter()
    gaps, sigmas = [], []
    for k in range(20):
        oa, ob = [(1, 0), (0, 1), (1, -1), (0, 0), (1, 1)][k % 5]
        a, b = ClassicalSymbol.random(rng, oa, 5, K=2), ClassicalSymbol.random(rng, ob, 5, K=2)
        rep = spectral.trace_defect_check(a, b, M=M)
        gaps.append(rep.gap)
        unsigned = rep.rhs / spectral.SIGMA
        if abs(unsigned) > 1e-3:
            sigmas.append((rep.lhs / unsigned).real)
    dt = time.perf_counter() - t0
    stable = len(sigmas) >= 10 and max(abs(s - spectral.SIGMA) for s in sigmas) < 1e-4
    ok = max(gaps) <= 1e-6 and stable and dt < 120
    verdict(3, ok, f"max gap={max(gaps):.1e} over 20 pairs, sigma={spectral.SIGMA} on {len(sigmas)} informative pairs, t={dt:.0f}s")


def _gens(seed, count, space, scale=0.5):
    rng = np.random.default_rng(seed)
    return [space.quantize(ClassicalSymbol.random(rng, 0, 6, rank=space.N, K=1, scale=scale)) for _ in range(count)]


def test_criterion_04_extension_geometry(verdict):
    space = ext.Space(M=64, N=2)
    fam = ext.exp_sum_family(_gens(7, 2, space, scale=0.7))
    stokes = [ext.stokes_check(fam, (0.0, 0.0, 1.0), space, cells=c).gap for c in (1, 2, 4)]
    s_ratios = [stokes[0] / stokes[1], stokes[1] / stokes[2]]

    q = spectral.normalize_q()
    rng = np.random.default_rng(2004)
    curv = []
    for _ in range(20):
        p1, p2 = (ClassicalSymbol.random(rng, 0, 6, rank=2, K=2) for _ in range(2))
        curv.append(ext.curvature_omega_q(p1, p2, q, M=M).gap)

    Bs = _gens(8, 4, space)
    F1, F2 = ext.exp_sum_family(Bs[:2]), ext.exp_sum_family(Bs[2:])
    t = np.array([0.2, 0.3])
    dO = ext.simplicial_delta(lambda fams, t, v1, v2, sp: ext.curvature_at(fams[0], t, v1, v2, sp))(
        [F1, F2], t, [1, 0], [0, 1], space
    )
    da = [abs(ext.d_alpha(F1, F2, t, space, h) - dO) for h in (0.1, 0.05)]
    G = [ext.exp_family(B) for B in _gens(13, 3, space)]
    dal = [abs(ext.simplicial_delta(ext.alpha_form)([g.numeric(h) for g in G], [0.4], [1.0], space)) for h in (0.1, 0.05)]

    second = lambda r: 3.3 < r < 4.7
    ok = all(map(second, s_ratios)) and max(curv) <= 1e-6 and second(da[0] / da[1]) and second(dal[0] / dal[1])
    verdict(
        4,
        ok,
        f"Stokes ratios={s_ratios[0]:.2f},{s_ratios[1]:.2f} curvature max gap={max(curv):.1e} (20 pairs) "
        f"d alpha ratio={da[0] / da[1]:.2f} delta alpha ratio={dal[0] / dal[1]:.2f}",
    )


def test_criterion_05_cech_integer(verdict):
    worst, bad = 0.0, []
    for a in range(4):
        for b in range(4):
            vals = []
            for cover in (gerbe.CubicalCover(3, 0.6), gerbe.CubicalCover(4, 0.5)):
                t0 = time.perf_counter()
                vals.append(gerbe.cech_dd_class(gerbe.build_decomposable_bundle(a, b, cover)))
                worst = max(worst, time.perf_counter() - t0)
            if vals != [a * b, a * b]:
                bad.append((a, b, vals))
    ok = not bad and worst < 30
    verdict(5, ok, f"16 classes, two covers, mismatches={bad}, slowest case {worst:.1f}s")


def test_criterion_06_de_rham(verdict):
    bundle = gerbe.build_decomposable_bundle(1, 1)
    t0 = time.perf_counter()
    r24 = gerbe.compute_h(bundle, grid=24)
    dt = time.perf_counter() - t0
    r32 = gerbe.compute_h(bundle, grid=32)
    v24 = gerbe.DD_ORIENTATION * r24.integral.real
    v32 = gerbe.DD_ORIENTATION * r32.integral.real
    e24, e32 = abs(v24 - 1), abs(v32 - 1)
    geo = gerbe.GerbeGeometry(bundle, grid=24)
    H = geo.glue({v: geo.fields(v).H for v in geo.patches})
    dh = gerbe.dh_residual(H, geo.h)
    h2 = geo.h**2
    # the discrete integral telescopes, so the error is resolution independent: "shrinking" is checked as non-increasing
    ok = 0.95 <= v24 <= 1.05 and e32 <= e24 + 1e-9 and r24.dB_residual <= h2 and r32.dB_residual <= (1 / 32) ** 2 and dh <= h2
    verdict(
        6,
        ok,
        f"int H={v24:.10f} (24^3) {v32:.10f} (32^3) err {e24:.1e}->{e32:.1e} dB={r24.dB_residual:.1e} dH={dh:.1e} t24={dt:.0f}s",
    )


def test_criterion_07_transgression(verdict):
    grid = 16
    reports = gerbe.transgression_checks(gerbe.build_decomposable_bundle(1, 1), grid=grid)
    h2 = (1 / grid) ** 2
    ok = all(r.pointwise <= h2 and abs(r.integral) <= 1e-3 for r in reports)
    detail = " ".join(f"{r.variant}: pw={r.pointwise:.1e} int={abs(r.integral):.1e}" for r in reports)
    verdict(7, ok, detail)


def test_criterion_08_egorov(verdict):
    rot = fio.egorov_check(fio.build_kernel(fio.PhaseFunction.rotation(0.7), 128), ClassicalSymbol.exponential(1, 4)).error
    sine = fio.PhaseFunction.sine(0.1)
    a = ClassicalSymbol.random(np.random.default_rng(0), 0, 4, K=2)
    errs = [fio.egorov_check(fio.build_kernel(sine, m), a).error for m in (256, 512)]
    pc = fio.pseudo_check(fio.build_kernel(sine, 256).matrix, 256)
    ok = rot <= 1e-12 and errs[0] * 256 <= 1.0 and errs[1] * 512 <= 1.0 and errs[1] <= errs[0] and pc.elliptic
    verdict(
        8,
        ok,
        f"rotation={rot:.1e} nonlinear M=256:{errs[0]:.1e} M=512:{errs[1]:.1e} K*K elliptic={pc.elliptic} min|lead|={pc.min_leading:.3f}",
    )


def test_criterion_09_reconstruction(verdict):
    rng = np.random.default_rng(2009)
    worst_l = worst_u = 0.0
    for _ in range(50):
        n = int(rng.integers(16, 65))
        L0 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        res = dv.eidelheit_reconstruct(dv.MatrixDerivation.inner(L0), w / np.linalg.norm(w))
        worst_l = max(worst_l, float(np.abs(dv.remove_scalar(res.L - L0)).max()), res.residual)
    for _ in range(50):
        n = int(rng.integers(4, 33))
        U = unitary_group.rvs(n, random_state=rng)
        res = dv.conjugator_reconstruct(lambda A: U @ A @ U.conj().T, n)
        lam = dv.align_scalar(res.G, U)
        worst_u = max(worst_u, float(np.abs(res.G / lam - U).max()), res.residual, abs(abs(lam) - 1))
    ok = worst_l <= 1e-10 and worst_u <= 1e-8
    verdict(9, ok, f"Eidelheit max residual={worst_l:.1e} (50 cases, n 16-64), conjugator max residual={worst_u:.1e} (50 unitaries)")


def test_criterion_10_derivation_classification(verdict):
    cases = {
        (1, 1): lambda a: log_derivation(a, LogSymbol.of_japanese(5)),
        (0, 0): dv.log_bracket_derivation(0, 0, ClassicalSymbol.random(np.random.default_rng(1), -1, 5, K=2)),
        (1, 0): dv.log_bracket_derivation(1, 0),
        (0, 1): dv.log_bracket_derivation(0, 1),
    }
    coef_gap = 0.0
    for want, D in cases.items():
        d = dv.decompose_derivation(D)
        coef_gap = max(coef_gap, abs(d.log_plus - want[0]), abs(d.log_minus - want[1]))
    rng = np.random.default_rng(2010)
    pairs = [(ClassicalSymbol.random(rng, 1, 8, K=2), ClassicalSymbol.random(rng, 0, 8, K=2)) for _ in range(3)]
    winding = dv.FormalOneFormClass(1, 0)
    leib = dv.symbol_leibniz_residual(dv.formal_derivation_from_one_form(winding, 8), pairs)
    _, witness, per_ray = dv.fit_inner(dv.formal_derivation_from_one_form(winding, 5))
    ok = coef_gap <= 1e-10 and leib <= 1e-10 and witness > 1e-3
    verdict(
        10,
        ok,
        f"log coefficient gap={coef_gap:.1e} (cases (1,1),(0,0),(1,0),(0,1)) Leibniz={leib:.1e} "
        f"winding inner-fit residual +:{per_ray['plus']:.2f} -:{per_ray['minus']:.1e}",
    )
