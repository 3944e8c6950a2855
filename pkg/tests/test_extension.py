import numpy as np
import pytest

from circlepsi.extension import (
    CURVATURE_FACTOR,
    Space,
    alpha_form,
    alpha_q,
    alpha_via_coboundary,
    central_family,
    change_of_q,
    connection_aq,
    constant_family,
    curvature_at,
    curvature_omega_q,
    curvature_residue_form,
    d_alpha,
    exp_family,
    exp_sum_family,
    maurer_cartan,
    simplicial_delta,
    stokes_check,
)
from circlepsi.spectral import QSpec, normalize_q
from circlepsi.symbols import ClassicalSymbol, commutator

SPACE1 = Space(M=64, N=1)
SPACE2 = Space(M=64, N=2)


def gens(seed, count, space, scale=0.5):
    rng = np.random.default_rng(seed)
    return [
        space.quantize(ClassicalSymbol.random(rng, 0, 6, rank=space.N, K=1, scale=scale)) for _ in range(count)
    ]


def omega_form(fams, t, v1, v2, space):
    return curvature_at(fams[0], t, v1, v2, space)


def test_maurer_cartan_examples():
    (B,) = gens(0, 1, SPACE1)
    np.testing.assert_allclose(maurer_cartan(exp_family(B), [0.7], [1.0]), B, atol=1e-12)
    c = central_family(SPACE1.size)
    np.testing.assert_allclose(maurer_cartan(c, [0.4], [1.0]), 1j * np.eye(SPACE1.size), atol=1e-12)
    B1, B2 = gens(1, 2, SPACE1)
    fam = exp_family(B1, 2, 0) * exp_family(B2, 2, 1)
    s, t = 0.3, 0.5
    expected = exp_family(-B2).value([t]) @ B1 @ exp_family(B2).value([t])
    np.testing.assert_allclose(maurer_cartan(fam, [s, t], [1.0, 0.0]), expected, atol=1e-10)


def test_finite_difference_derivatives_are_second_order():
    B1, B2 = gens(2, 2, SPACE1)
    fam = exp_sum_family([B1, B2])
    exact = maurer_cartan(fam, [0.2, 0.1], [1.0, 0.0])
    errs = [np.abs(maurer_cartan(fam.numeric(h), [0.2, 0.1], [1.0, 0.0]) - exact).max() for h in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)


def test_connection_examples():
    space = SPACE1
    assert connection_aq(central_family(space.size), [0.3], [1.0], space) == pytest.approx(1j, abs=1e-10)
    # finite-rank generator: plain trace
    rng = np.random.default_rng(3)
    u = np.zeros(space.size, dtype=complex)
    u[space.M - 3 : space.M + 4] = rng.standard_normal(7)
    v = np.zeros(space.size, dtype=complex)
    v[space.M - 2 : space.M + 3] = rng.standard_normal(5)
    B = 0.1 * np.outer(u, v)
    assert connection_aq(exp_family(B), [0.0], [1.0], space) == pytest.approx(np.trace(B), abs=1e-10)


def test_connection_on_commutator_generator():
    # B = [X, Y] of order-0 symbols: Tr_Q(B) = rTr(delta X Y) with the pinned sign
    x = ClassicalSymbol.random(np.random.default_rng(4), 0, 6, K=1)
    y = ClassicalSymbol.random(np.random.default_rng(5), 0, 6, K=1)
    space = Space(M=128)
    X, Y = space.quantize(x), space.quantize(y)
    a = connection_aq(exp_family(X @ Y - Y @ X), [0.0], [1.0], space)
    residue_side = curvature_residue_form(x, y, space.q) / CURVATURE_FACTOR / 2
    assert a == pytest.approx(residue_side, abs=1e-6)


def test_left_invariance():
    B, G = gens(6, 2, SPACE1)
    fam = exp_family(B)
    shifted = fam.premultiply(exp_family(G).value([1.0]))
    a0 = connection_aq(fam, [0.4], [1.0], SPACE1)
    assert connection_aq(shifted, [0.4], [1.0], SPACE1) == pytest.approx(a0, abs=1e-8)


def test_curvature_basic_properties():
    rng = np.random.default_rng(8)
    p1, p2, p3 = (ClassicalSymbol.random(rng, 0, 5, K=1) for _ in range(3))
    q = normalize_q()
    assert abs(curvature_residue_form(p1, p1, q)) < 1e-12
    assert abs(curvature_residue_form(ClassicalSymbol.identity(1, 5) * 1j, p2, q)) < 1e-12
    assert curvature_residue_form(p1, p2, q) == pytest.approx(-curvature_residue_form(p2, p1, q))
    lin = curvature_residue_form(p1 * 2.0 + p3, p2, q)
    assert lin == pytest.approx(2 * curvature_residue_form(p1, p2, q) + curvature_residue_form(p3, p2, q))


def test_curvature_dual_pipeline_chirality():
    chi = ([1.0, 0, 0, 0, 0], [0.0, 0, 0, 0, 0])
    p1 = ClassicalSymbol.from_components(0, [[0, 0, 1.0]] + chi[0][1:], [[0, 0, 0.0]] + chi[1][1:])
    p2 = ClassicalSymbol.from_components(0, [[1.0, 0, 0]] + chi[0][1:], [[0, 0, 0.0]] + chi[1][1:])
    rep = curvature_omega_q(p1, p2, M=2048)
    assert rep.gap < 1e-6
    assert abs(rep.residue_value) > 0.1


@pytest.mark.parametrize("seed", range(3))
def test_curvature_dual_pipeline_random(seed):
    rng = np.random.default_rng(100 + seed)
    p1, p2 = (ClassicalSymbol.random(rng, 0, 6, rank=2, K=2) for _ in range(2))
    rep = curvature_omega_q(p1, p2, M=2048)
    assert rep.gap < 1e-6


def test_curvature_cocycle_identity():
    rng = np.random.default_rng(9)
    p1, p2, p3 = (ClassicalSymbol.random(rng, 0, 6, rank=2, K=1) for _ in range(3))
    q = normalize_q()
    total = (
        curvature_residue_form(commutator(p1, p2), p3, q)
        + curvature_residue_form(commutator(p2, p3), p1, q)
        + curvature_residue_form(commutator(p3, p1), p2, q)
    )
    assert abs(total) < 1e-10


def test_stokes_flat_cases():
    c = central_family(SPACE1.size, dim=2)
    rep = stokes_check(c, (0.0, 0.0, 0.5), SPACE1, cells=1)
    assert abs(rep.curvature_integral) < 1e-10 and rep.gap < 1e-10
    m1 = ClassicalSymbol.multiplication([0.2, 0.0, 0.3])
    m2 = ClassicalSymbol.multiplication([0.0, 0.5j, 0.0])
    fam = exp_family(SPACE1.quantize(m1), 2, 0) * exp_family(SPACE1.quantize(m2), 2, 1)
    rep = stokes_check(fam, (0.0, 0.0, 0.5), SPACE1, cells=1)
    assert abs(rep.curvature_integral) < 1e-9 and rep.gap < 1e-9


@pytest.mark.slow
def test_stokes_second_order():
    B1, B2 = gens(7, 2, SPACE2, scale=0.7)
    fam = exp_sum_family([B1, B2])
    gaps = [stokes_check(fam, (0.0, 0.0, 1.0), SPACE2, cells=c).gap for c in (1, 2, 4)]
    assert 3.3 < gaps[0] / gaps[1] < 4.7
    assert 3.3 < gaps[1] / gaps[2] < 4.7


def test_alpha_examples():
    B1, B2 = gens(10, 2, SPACE1)
    f1, f2 = exp_family(B1), exp_family(B2)
    ident = constant_family(np.eye(SPACE1.size))
    assert abs(alpha_q(f1, ident, [0.3], [1.0], SPACE1)) < 1e-10
    assert abs(alpha_q(central_family(SPACE1.size), f2, [0.3], [1.0], SPACE1)) < 1e-9
    a = alpha_q(f1, f2, [0.3], [1.0], SPACE1)
    assert a == pytest.approx(alpha_via_coboundary(f1, f2, [0.3], [1.0], SPACE1), abs=1e-8)
    assert abs(a) > 1e-3


def test_alpha_stable_under_doubling():
    rng = np.random.default_rng(11)
    s1, s2 = (ClassicalSymbol.random(rng, 0, 6, K=1, scale=0.5) for _ in range(2))
    vals = []
    for M in (64, 128):
        sp = Space(M=M)
        vals.append(alpha_q(exp_family(sp.quantize(s1)), exp_family(sp.quantize(s2)), [0.3], [1.0], sp))
    assert abs(vals[0] - vals[1]) < 1e-6


def test_alpha_descends_along_phases():
    B1, B2 = gens(12, 2, SPACE1)
    f1, f2 = exp_family(B1), exp_family(B2)
    theta = lambda t: 0.7 * t[0] ** 2
    dtheta = lambda t: [1.4 * t[0]]
    a = alpha_q(f1, f2, [0.3], [1.0], SPACE1)
    assert alpha_q(f1.phase(theta, dtheta), f2, [0.3], [1.0], SPACE1) == pytest.approx(a, abs=1e-8)
    assert alpha_q(f1, f2.phase(theta, dtheta), [0.3], [1.0], SPACE1) == pytest.approx(a, abs=1e-8)


def test_simplicial_delta_definitions():
    const = lambda fams: 2.5 + 0j
    fams = [constant_family(np.eye(3))] * 2
    assert simplicial_delta(const)(fams) == pytest.approx(2.5)
    # delta^2 = 0 for an arbitrary 1-slot function of the group element
    rng = np.random.default_rng(0)
    mats = [constant_family(np.eye(3) + 0.3 * rng.standard_normal((3, 3))) for _ in range(3)]
    w = rng.standard_normal((3, 3))
    form = lambda fs: np.sum(w * fs[0].value([0.0]))
    dd = simplicial_delta(simplicial_delta(form))
    assert abs(dd(mats)) < 1e-12


@pytest.mark.slow
def test_d_alpha_equals_delta_omega_second_order():
    Bs = gens(7, 4, SPACE2)
    F1, F2 = exp_sum_family(Bs[:2]), exp_sum_family(Bs[2:])
    t = np.array([0.2, 0.3])
    dO = simplicial_delta(omega_form)([F1, F2], t, [1, 0], [0, 1], SPACE2)
    gaps = [abs(d_alpha(F1, F2, t, SPACE2, h) - dO) for h in (0.1, 0.05)]
    assert gaps[0] / gaps[1] == pytest.approx(4, rel=0.15)
    # the opposite sign convention for alpha is excluded
    assert abs(-d_alpha(F1, F2, t, SPACE2, 0.05) - dO) > 10 * gaps[1]


def test_delta_alpha_vanishes_second_order():
    G = [exp_family(B) for B in gens(13, 3, SPACE2)]
    res = [abs(simplicial_delta(alpha_form)([g.numeric(h) for g in G], [0.4], [1.0], SPACE2)) for h in (0.1, 0.05)]
    assert res[0] / res[1] == pytest.approx(4, rel=0.15)
    assert abs(simplicial_delta(alpha_form)(G, [0.4], [1.0], SPACE2)) < 1e-8


def test_change_of_q():
    (B,) = gens(14, 1, SPACE1)
    fam = exp_family(B)
    q = SPACE1.q
    same = change_of_q(fam, [0.3], [1.0], SPACE1, q)
    assert abs(same.lhs) < 1e-12 and abs(same.rhs) < 1e-12
    # odd shift with vanishing residue keeps the normalization
    q1 = QSpec(-1.0, (q.shift_plus[0] + 0.3,), (q.shift_minus[0] - 0.3,))
    rep = change_of_q(fam, [0.3], [1.0], SPACE1, q1)
    assert rep.gap < 1e-6
    assert abs(rep.lhs) > 1e-3
    cen = change_of_q(central_family(SPACE1.size), [0.3], [1.0], SPACE1, q1)
    assert abs(cen.lhs) < 1e-10 and cen.gap < 1e-10
