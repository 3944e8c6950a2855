import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circlepsi.symbols import (
    ClassicalSymbol,
    EllipticityError,
    LogSymbol,
    SymbolError,
    adjoint_symbol,
    commutator,
    log_derivation,
    parametrix,
    poisson_bracket,
    radial_defect,
    residue_trace,
    star_compose,
)

XI = ClassicalSymbol.scalar_ladder(1, [1, 0, 0, 0], [-1, 0, 0, 0])


def rand(seed, order, depth=4, rank=1, K=2):
    return ClassicalSymbol.random(np.random.default_rng(seed), order, depth, rank=rank, K=K)


def test_identity_is_unit():
    a = rand(0, 1, rank=2)
    ident = ClassicalSymbol.identity(2, 4)
    assert star_compose(ident, a).allclose(a)
    assert star_compose(a, ident).allclose(a)


def test_commutator_of_d_with_exponential():
    e = ClassicalSymbol.exponential(1, depth=4)
    c = commutator(XI, e)
    assert c.order == 1
    assert np.abs(c.plus[0]).max() == 0
    expected = np.zeros((3, 1, 1))
    expected[2] = 1
    np.testing.assert_allclose(c.plus[1], expected)
    np.testing.assert_allclose(c.minus[1], expected)
    assert np.abs(c.plus[2:]).max() == 0


def test_commutator_leading_term_is_poisson():
    a, b = rand(1, 1), rand(2, 0)
    c = commutator(a, b)
    pb = poisson_bracket(a, b)
    # [a,b] has nominal order 1 with vanishing leading term; next term is -i{a,b}
    assert np.abs(c.plus[0]).max() < 1e-12
    np.testing.assert_allclose(c.plus[1], -1j * pb.plus[0], atol=1e-12)
    np.testing.assert_allclose(c.minus[1], -1j * pb.minus[0], atol=1e-12)


def test_poisson_bracket_basics():
    e = ClassicalSymbol.exponential(1, depth=4)
    pb = poisson_bracket(XI, e)
    np.testing.assert_allclose(pb.plus[0, :, 0, 0], [0, 0, 1j])
    a = rand(3, 1)
    assert poisson_bracket(a, a).max_abs() < 1e-12


def test_poisson_bracket_finite_difference():
    # a = f(x), b = g(xi)|xi|^{1}: {a,b} = -f'(x) * d_xi b
    f = ClassicalSymbol.multiplication([0.3, 1.0, 0.5j], depth=2)
    g = ClassicalSymbol.scalar_ladder(1, [2.0, 0.7], [1.5, -0.2])
    pb = poisson_bracket(f, g)
    x = np.linspace(0, 2 * np.pi, 7)
    h, xi = 1e-5, 3.0
    fa = lambda x_, k: f.evaluate(x_, k)[:, 0, 0]
    ga = lambda x_, k: g.evaluate(x_, k)[:, 0, 0]
    for s in (1, -1):
        fd = (
            (ga(x, s * xi + h) - ga(x, s * xi - h)) / (2 * h) * (fa(x + h, 1) - fa(x - h, 1)) / (2 * h) * -1
        )
        np.testing.assert_allclose(pb.evaluate(x, s * xi)[:, 0, 0], fd, atol=1e-6)


def test_adjoint_examples():
    real = ClassicalSymbol.scalar_ladder(1, [1.0, 0.2, 0.0], [3.0, 0.1, 0.5])
    assert adjoint_symbol(real).allclose(real)
    e = ClassicalSymbol.exponential(1, depth=2)
    assert adjoint_symbol(e).allclose(ClassicalSymbol.exponential(-1, depth=2))


def test_adjoint_is_involutive():
    a = rand(4, 1, rank=2)
    assert adjoint_symbol(adjoint_symbol(a)).allclose(a, atol=1e-10)


def test_parametrix():
    ident = ClassicalSymbol.identity(1, 5)
    assert parametrix(ident).allclose(ident)
    jd = ClassicalSymbol.japanese_power(1, 6)
    b = parametrix(jd)
    assert star_compose(b, jd).allclose(ClassicalSymbol.identity(1, 6), atol=1e-12)
    assert b.allclose(ClassicalSymbol.japanese_power(-1, 6), atol=1e-12)


def test_parametrix_x_dependent_matrix():
    a = rand(5, 0, rank=2, K=1) + ClassicalSymbol.identity(2, 4) * 5
    b = parametrix(a, kmax=32)
    assert star_compose(a, b).allclose(ClassicalSymbol.identity(2, 4), atol=1e-9)


def test_parametrix_rejects_singular():
    sing = ClassicalSymbol.multiplication([0.5, 0, 0.5], depth=2)  # cos x
    with pytest.raises(EllipticityError):
        parametrix(sing)


def test_residue_trace_examples():
    assert residue_trace(ClassicalSymbol.identity(1, 3)) == 0
    assert residue_trace(ClassicalSymbol.japanese_power(-1, 3)) == pytest.approx(2)
    with pytest.raises(SymbolError):
        residue_trace(ClassicalSymbol.japanese_power(1, 2))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    oa=st.sampled_from([-1, 0, 1]),
    ob=st.sampled_from([-1, 0, 1]),
    oc=st.sampled_from([-1, 0, 1]),
    rank=st.sampled_from([1, 2]),
)
def test_associativity(seed, oa, ob, oc, rank):
    a, b, c = rand(seed, oa, rank=rank), rand(seed + 1, ob, rank=rank), rand(seed + 2, oc, rank=rank)
    left = star_compose(star_compose(a, b), c)
    right = star_compose(a, star_compose(b, c))
    assert left.allclose(right, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), rank=st.sampled_from([1, 2]))
def test_residue_trace_kills_commutators(seed, rank):
    a, b = rand(seed, 1, depth=4, rank=rank), rand(seed + 7, 1, depth=4, rank=rank)
    assert abs(residue_trace(commutator(a, b))) < 1e-12


def test_log_derivation_of_exponential():
    e = ClassicalSymbol.exponential(1, depth=4)
    d = log_derivation(e, LogSymbol.of_japanese(4))
    assert d.order == -1
    np.testing.assert_allclose(d.plus[0, :, 0, 0], [0, 0, 1])
    np.testing.assert_allclose(d.minus[0, :, 0, 0], [0, 0, -1])


@pytest.mark.parametrize("s", [1.0, -1.0, 0.5, -2.0])
def test_log_derivation_kills_q_powers(s):
    d = log_derivation(ClassicalSymbol.japanese_power(s, 6), LogSymbol.of_japanese(6))
    assert d.max_abs() < 1e-14


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), rank=st.sampled_from([1, 2]))
def test_log_derivation_leibniz_and_residue(seed, rank):
    lq = LogSymbol.of_japanese(5, rank=rank)
    a, b = rand(seed, 1, depth=5, rank=rank), rand(seed + 3, 0, depth=5, rank=rank)
    lhs = log_derivation(star_compose(a, b), lq)
    rhs = star_compose(log_derivation(a, lq), b) + star_compose(a, log_derivation(b, lq))
    assert lhs.allclose(rhs, atol=1e-9)
    assert abs(residue_trace(log_derivation(a, lq))) < 1e-12


def test_radial_defect():
    q = XI
    a = rand(6, 0)
    assert radial_defect(a, q).max_abs() == 0
    h0 = np.zeros((4, 5, 1, 1), dtype=complex)
    h0[0, 2] = 2.0
    h0[0, 3] = 0.5
    d = radial_defect(a, q, log_terms=(h0, h0))
    np.testing.assert_allclose(d.plus[0, :, 0, 0], -1j * h0[0, :, 0, 0])
    np.testing.assert_allclose(d.minus[0, :, 0, 0], 1j * h0[0, :, 0, 0])


def test_radial_defect_commutes_with_constants():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((3, 3, 2, 2)) + 0j
    m = np.array([[0, 1], [2, 0]], dtype=complex)
    q = ClassicalSymbol.scalar_ladder(1, [1, 0, 0], [-1, 0, 0], rank=2)
    a = rand(1, 0, depth=3, rank=2)
    d = radial_defect(a, q, log_terms=(h, h))
    dm = radial_defect(a, q, log_terms=(m @ h, m @ h))
    np.testing.assert_allclose(dm.plus, m @ d.plus, atol=1e-12)
    np.testing.assert_allclose(dm.minus, m @ d.minus, atol=1e-12)


def test_json_roundtrip():
    a = rand(7, 0.5 + 0.25j, rank=2)
    data = json.loads(json.dumps(a.to_json()))
    assert data["rays"]["plus"][1]["degree"] == [-0.5, 0.25]
    b = ClassicalSymbol.from_json(data)
    assert b.order == a.order
    np.testing.assert_array_equal(a.plus, b.plus)


def test_rejects_bad_inputs():
    with pytest.raises(SymbolError):
        ClassicalSymbol(0, np.zeros((0, 1, 1, 1)), np.zeros((0, 1, 1, 1)))
    with pytest.raises(SymbolError):
        star_compose(rand(0, 0, rank=1), rand(0, 0, rank=2))
    a = rand(0, 0)
    with pytest.raises(AttributeError):
        a.order = 3
