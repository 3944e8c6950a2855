"""Derivations and automorphisms: rank-one reconstruction and the circle classification.

Matrix part: a derivation ``D`` of a full matrix block is ``ad(L)`` with
``L u = D(u w^*) w`` for any unit vector ``w``, and an automorphism that maps
rank-ones to rank-ones is conjugation by a ``G`` read off from its action on
``u v^*``.

Symbol part: on the circle every derivation of the symbol algebra is
``c_+ [log|xi|_+, .] + c_- [log|xi|_-, .] + [g, .]`` with ``g`` classical, and
the formal algebra has further derivations ``i w_ray d_xi`` from the winding
classes of the two cosphere circles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .symbols import RAYS, ClassicalSymbol, LogSymbol, d_xi, log_bracket, log_derivation, star_compose


class DerivationError(ValueError):
    """Raised when an input is not a derivation, automorphism or rank-one operator of the modeled kind."""


# -- matrix derivations -----------------------------------------------------------


@dataclass
class MatrixDerivation:
    """Black-box linear map ``D`` on ``n x n`` matrices."""

    apply: callable
    n: int

    @classmethod
    def inner(cls, L: np.ndarray) -> MatrixDerivation:
        return cls(lambda A: L @ A - A @ L, L.shape[0])

    def __call__(self, A: np.ndarray) -> np.ndarray:
        return self.apply(A)

    def leibniz_residual(self, rng=None, probes: int = 3) -> float:
        rng = np.random.default_rng(0) if rng is None else rng
        worst = 0.0
        for _ in range(probes):
            A, B = (rng.standard_normal((self.n, self.n)) + 1j * rng.standard_normal((self.n, self.n)) for _ in range(2))
            lhs = self(A @ B)
            rhs = self(A) @ B + A @ self(B)
            worst = max(worst, float(np.abs(lhs - rhs).max() / max(np.abs(lhs).max(), 1.0)))
        return worst


def _rank_one(u, v) -> np.ndarray:
    return np.outer(u, np.conj(v))


def remove_scalar(X: np.ndarray) -> np.ndarray:
    """Project off the identity component (trace-free part)."""
    return X - np.trace(X) / X.shape[0] * np.eye(X.shape[0])


def align_scalar(X: np.ndarray, ref: np.ndarray) -> complex:
    """``lambda`` with ``X ~ lambda ref``, read at the largest-magnitude entry of ``ref``."""
    idx = np.unravel_index(np.argmax(np.abs(ref)), ref.shape)
    return complex(X[idx] / ref[idx])


@dataclass
class EidelheitResult:
    L: np.ndarray
    R: np.ndarray
    residual: float
    adjoint_residual: float


def eidelheit_reconstruct(D: MatrixDerivation, w: np.ndarray, tol: float = 1e-10) -> EidelheitResult:
    """``L u = D(u w^*) w``, so that ``D = [L, .]`` with ``L`` unique modulo scalars.

    The dual-side map ``R v = (w^* D(w v^*))^*`` is checked against ``-L^*``
    modulo scalars (``adjoint_residual``); ``residual`` is
    ``max |D(A) - [L, A]|`` over random probes, relative to ``max(1, |A|)``.
    """
    w = np.asarray(w, dtype=complex)
    if abs(np.vdot(w, w) - 1) > 1e-12:
        raise DerivationError("probe vector must have unit norm")
    if D.leibniz_residual() > 1e-8:
        raise DerivationError("input violates the Leibniz rule")
    n = D.n
    eye = np.eye(n)
    L = np.column_stack([D(_rank_one(eye[:, k], w)) @ w for k in range(n)])
    R = np.column_stack([(np.conj(w) @ D(_rank_one(w, eye[:, k]))).conj() for k in range(n)])
    rng = np.random.default_rng(1)
    res = 0.0
    for _ in range(3):
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        res = max(res, float(np.abs(D(A) - (L @ A - A @ L)).max() / np.abs(A).max()))
    adj = float(np.abs(remove_scalar(R + L.conj().T)).max())
    if res > tol * max(1.0, float(np.abs(L).max())):
        raise DerivationError(f"reconstruction residual {res:.2e}: not an inner derivation of the block")
    return EidelheitResult(L, R, res, adj)


# -- rank-one detection and automorphisms -------------------------------------------


def default_probes(n: int, count: int = 6) -> list:
    """Identity, a diagonal ramp, a cyclic shift and seeded random matrices."""
    rng = np.random.default_rng(12345)
    probes = [np.eye(n), np.diag(np.arange(1.0, n + 1)), np.roll(np.eye(n), 1, axis=0)]
    probes += [rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(count)]
    return probes


@dataclass
class RankOneResult:
    is_rank_one: bool
    witness: np.ndarray | None
    defect: float


def rank_one_detect(A: np.ndarray, probes=None, tol: float = 1e-8) -> RankOneResult:
    """``A`` is rank one iff ``(B A)^2`` is a multiple of ``B A`` for every probe ``B``."""
    A = np.asarray(A, dtype=complex)
    if not np.any(A):
        raise DerivationError("zero operator has rank 0, not 1")
    probes = default_probes(A.shape[0]) if probes is None else probes
    worst = 0.0
    for B in probes:
        BA = B @ A
        nrm = np.linalg.norm(BA)
        if nrm < 1e-14 * np.linalg.norm(B) * np.linalg.norm(A):
            continue
        sq = BA @ BA
        c = np.vdot(BA, sq) / nrm**2
        defect = float(np.linalg.norm(sq - c * BA) / nrm**2)
        worst = max(worst, defect)
        if defect > tol:
            return RankOneResult(False, B, defect)
    return RankOneResult(True, None, worst)


@dataclass
class ConjugatorResult:
    G: np.ndarray
    H: np.ndarray
    residual: float
    pair_residual: float


def conjugator_reconstruct(phi, n: int, v: np.ndarray | None = None, tol: float = 1e-8) -> ConjugatorResult:
    """Recover ``G`` (up to scalar) with ``phi(A) = G A G^{-1}``.

    With ``pi_v = v v^*``, ``phi(u v^*) = (G u) h^*`` for the fixed vector
    ``h = G^{-*} v``.  Evaluating on ``w`` (the image direction of
    ``phi(pi_v)^*``) gives ``G u`` up to the constant ``h^* w``.  The companion
    map ``H`` from ``w'^* phi(v u^*)`` reproduces ``G^{-*}``, so ``H^* G`` is
    checked to be scalar.  ``G`` is normalized to ``||G||_F = sqrt(n)``.
    """
    eye = np.eye(n)
    v = eye[:, 0].astype(complex) if v is None else np.asarray(v, dtype=complex)
    P = phi(_rank_one(v, v))
    if not rank_one_detect(P).is_rank_one:
        raise DerivationError("image of a rank-one projection is not rank one")
    U, s, Vh = np.linalg.svd(P)
    w = Vh[0].conj()  # proportional to h
    wl = U[:, 0]  # proportional to G v
    cols, rows = [], []
    for k in range(n):
        img = phi(_rank_one(eye[:, k], v))
        if k < 2 and not rank_one_detect(img).is_rank_one:
            raise DerivationError("automorphism does not preserve rank one")
        cols.append(img @ w)
        rows.append((np.conj(wl) @ phi(_rank_one(v, eye[:, k]))).conj())
    G = np.column_stack(cols)
    G *= np.sqrt(n) / np.linalg.norm(G)
    H = np.column_stack(rows)
    rng = np.random.default_rng(2)
    if not np.all(np.isfinite(G)) or np.linalg.cond(G) > 1e12:
        raise DerivationError("recovered conjugator is singular: not an inner automorphism")
    Ginv = np.linalg.inv(G)
    res = 0.0
    for _ in range(3):
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        res = max(res, float(np.abs(phi(A) - G @ A @ Ginv).max() / np.abs(A).max()))
    HG = H.conj().T @ G
    pair = float(np.abs(HG / align_scalar(HG, eye) - eye).max())
    if res > tol:
        raise DerivationError(f"probe residual {res:.2e}: not a conjugation")
    return ConjugatorResult(G, H, res, pair)


# -- derivations of the symbol algebra ----------------------------------------------


PROBE_MODES = tuple(range(-4, 5))
PROBE_ORDERS = (0, 1)


def probe_symbols(depth: int) -> list:
    """Ray-tagged probes ``e^{ikx} |xi|^s`` for ``|k| <= 4`` and ``s in {0, 1}``."""
    out = []
    for s in PROBE_ORDERS:
        for k in PROBE_MODES:
            c = np.zeros(2 * 4 + 1, dtype=complex)
            c[k + 4] = 1.0
            zero = np.zeros_like(c)
            rest = [np.zeros_like(c)] * (depth - 1)
            out.append(ClassicalSymbol.from_components(s, [c] + rest, [zero] + rest))
            out.append(ClassicalSymbol.from_components(s, [zero] + rest, [c] + rest))
    return out


@dataclass
class DerivationDecomposition:
    log_plus: complex
    log_minus: complex
    inner: ClassicalSymbol
    residual: float
    per_ray_residual: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "logCoefficients": [[self.log_plus.real, self.log_plus.imag], [self.log_minus.real, self.log_minus.imag]],
            "inner": self.inner.to_json(),
            "residual": self.residual,
            "perRayResidual": self.per_ray_residual,
        }


def log_coefficients(D, depth: int = 5) -> tuple[complex, complex]:
    """``(c_+, c_-)`` from the ``|xi|^{-1}`` coefficient of ``e^{-ix} D(e^{ix})`` per ray.

    A classical inner part contributes nothing there: ``[g, e^{ix}] =
    e^{ix}(g(x, xi + 1) - g(x, xi))`` and differences of integer powers never
    produce ``xi^{-1}``.
    """
    probe = ClassicalSymbol.exponential(1, depth)
    out = D(probe)
    unit = log_bracket(1.0, 0.0, probe)
    unit_m = log_bracket(0.0, 1.0, probe)
    vals = []
    for ray, ref in (("plus", unit), ("minus", unit_m)):
        got = _mode(out, -1, ray, 1)
        base = _mode(ref, -1, ray, 1)
        vals.append(got / base)
    return complex(vals[0]), complex(vals[1])


def _mode(sym: ClassicalSymbol, degree: int, ray: str, k: int) -> complex:
    comp = sym.component(degree, ray)
    K = (comp.shape[0] - 1) // 2
    if abs(k) > K:
        return 0.0
    return complex(comp[k + K, 0, 0])


def _inner_bracket(g: ClassicalSymbol, a: ClassicalSymbol) -> ClassicalSymbol:
    return log_derivation(a, LogSymbol(0.0, 0.0, g))


def _flatten(sym: ClassicalSymbol, order, depth: int, K: int) -> np.ndarray:
    """Coefficients of ``sym`` on a fixed ``(order, depth, K)`` frame; components outside are dropped."""
    sym = sym.with_order(order) if complex(sym.order).real < complex(order).real else sym
    out = np.zeros((2, depth, 2 * K + 1), dtype=complex)
    kb = sym.bandwidth
    kk = min(K, kb)
    for r, ray in enumerate(RAYS):
        stack = sym.ray(ray)
        J = min(depth, stack.shape[0])
        out[r, :J, K - kk : K + kk + 1] = stack[:J, kb - kk : kb + kk + 1, 0, 0]
    return out


def _inner_basis(depth: int, K: int) -> list:
    basis = []
    for r in range(2):
        for j in range(depth - 1):
            for k in range(-K, K + 1):
                if j == 0 and k == 0:
                    continue  # central
                lad = np.zeros((2, depth, 2 * K + 1, 1, 1), dtype=complex)
                lad[r, j, k + K] = 1.0
                basis.append(ClassicalSymbol(0, lad[0], lad[1]))
    return basis


@lru_cache(maxsize=8)
def _design(depth: int, K: int):
    """Flattened ``[b, p]`` for inner basis ``b`` and standard probes ``p``; independent of ``D``."""
    basis = _inner_basis(depth, K)
    probes = probe_symbols(depth)
    A = np.stack(
        [
            np.stack([_flatten(_inner_bracket(b, p), p.order - 1, depth - 1, 2 * K + 4) for b in basis], axis=-1)
            for p in probes
        ]
    )
    A.setflags(write=False)
    return basis, probes, A


def fit_inner(D, depth: int = 5, K: int = 4) -> tuple[ClassicalSymbol, float, dict]:
    """Least-squares classical order-0 ``g`` with ``D(p) = [g, p]`` on the standard probes.

    ``g`` is determined modulo the central per-ray constants, which are set
    to zero, and only its first ``depth - 1`` components reach the retained
    frame, so it is returned at that depth.  Returns ``g``, the max residual and the residual per ray.
    """
    basis, probes, A = _design(depth, K)
    y = np.stack([_flatten(D(p), p.order - 1, depth - 1, 2 * K + 4) for p in probes])
    sol, *_ = np.linalg.lstsq(A.reshape(-1, len(basis)), y.ravel(), rcond=None)
    resid = np.abs(A @ sol - y)
    per_ray = {ray: float(resid[:, r].max()) for r, ray in enumerate(RAYS)}
    lad = np.zeros((2, depth, 2 * K + 1, 1, 1), dtype=complex)
    for coef, b in zip(sol, basis):
        lad[0] += coef * b.plus
        lad[1] += coef * b.minus
    lad = lad[:, : depth - 1]
    return ClassicalSymbol(0, lad[0], lad[1]), max(per_ray.values()), per_ray


def decompose_derivation(D, depth: int = 5, K: int = 4, tol: float = 1e-8) -> DerivationDecomposition:
    """Split ``D`` into per-ray log coefficients and a classical inner part."""
    cp, cm = log_coefficients(D, depth)
    rest = lambda a: D(a) - log_bracket(cp, cm, a)
    g, res, per_ray = fit_inner(rest, depth, K)
    if res > tol:
        raise DerivationError(f"inner fit residual {res:.2e}: derivation outside the modeled class")
    return DerivationDecomposition(cp, cm, g, res, per_ray)


def log_bracket_derivation(c_plus: complex, c_minus: complex, inner: ClassicalSymbol | None = None, depth: int = 5):
    """Constructed input ``a -> [c_+ log|xi|_+ + c_- log|xi|_- + inner, a]``."""
    g = ClassicalSymbol.zero(0, depth) if inner is None else inner
    ls = LogSymbol(c_plus, c_minus, g)
    return lambda a: log_derivation(a, ls)


# -- formal derivations from closed one-forms -----------------------------------------


@dataclass(frozen=True)
class FormalOneFormClass:
    """Winding coefficients on the two cosphere circles and a log-class coefficient."""

    winding_plus: complex = 0.0
    winding_minus: complex = 0.0
    log_class: complex = 0.0

    @property
    def is_exact(self) -> bool:
        return self.winding_plus == 0 and self.winding_minus == 0 and self.log_class == 0


def formal_derivation_from_one_form(cls: FormalOneFormClass, depth: int = 8, inner: ClassicalSymbol | None = None):
    """Star-commutator with the multivalued primitive ``w x + lambda log|xi|`` (plus an inner datum).

    Only ``d_x(w x) = w`` enters the expansion, so the winding part is the
    single-valued ``a -> i w_ray d_xi a``.
    """
    if depth < 2:
        raise DerivationError("depth must be at least 2")

    def D(a: ClassicalSymbol) -> ClassicalSymbol:
        a = a.truncate(min(a.depth, depth))
        da = d_xi(a)
        lad_p = 1j * cls.winding_plus * da.plus
        lad_m = 1j * cls.winding_minus * da.minus
        out = ClassicalSymbol(da.order, lad_p, lad_m)
        if cls.log_class != 0:
            out = out + log_bracket(cls.log_class, cls.log_class, a)
        if inner is not None:
            out = out + _inner_bracket(inner, a)
        return out

    return D


def symbol_leibniz_residual(D, pairs) -> float:
    """``max |D(a b) - D(a) b - a D(b)|`` over symbol pairs, at the common retained depth."""
    worst = 0.0
    for a, b in pairs:
        lhs = D(star_compose(a, b))
        rhs = star_compose(D(a), b) + star_compose(a, D(b))
        worst = max(worst, (lhs - rhs).max_abs())
    return worst
