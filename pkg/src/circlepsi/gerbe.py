"""Projective operator bundles over T^3 with decomposable Dixmier-Douady class.

The bundle is built from a map ``u: T^3 -> U(1)`` winding ``a`` times along
``x1`` and the circle bundle ``P`` of degree ``b`` over the ``(x2, x3)`` torus.
With ``R_t`` the rotation of the fiber circle and ``M_n`` multiplication by
``e^{i n theta}``, the transitions are ``g_ij = R_{tau_ij} M_{n_ij}``:

* ``n_ij = c_j - c_i`` with ``c_i = a * y1^(i)`` (``y^(i)`` the lift of ``x``
  into patch ``i``) is the integer cocycle of ``u``;
* ``tau_ij = 2 pi b (l_i - l_j)_2 y3^(j)`` with ``l_i = y^(i) - x`` is the
  transition angle of ``P``; ``tau_ij + tau_jk - tau_ik`` lies in ``2 pi Z``.

Since ``R_t M_n = e^{-i n t} M_n R_t`` the lifts fail to compose by the scalars
``c_ijk = e^{i n_ij tau_jk}``.

Coordinates are ``[0, 1)^3``; the cover has ``L`` arcs per axis and patches are
labelled lexicographically by ``(p1, p2, p3)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

TWO_PI = 2 * math.pi
_PROBE = np.random.default_rng(7).standard_normal(4097) + 0.5


class CoverError(ValueError):
    """Raised for covers that are not good or too coarse for the construction."""


class BranchError(RuntimeError):
    """Raised when a log branch cannot be continued or a scalar is not unimodular."""


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class CubicalCover:
    """``L^3`` boxes ``prod_a (p_a/L - delta, (p_a+1)/L + delta)`` with ``delta = overlap/(2L)``."""

    L: int = 3
    overlap: float = 0.6

    def __post_init__(self):
        if self.L < 3:
            raise CoverError("need at least 3 arcs per axis for a good cover")
        if not 0.05 <= self.overlap < 1:
            raise CoverError("overlap fraction must lie in [0.05, 1)")

    @property
    def delta(self) -> float:
        return self.overlap / (2 * self.L)

    @property
    def patches(self) -> list:
        return list(itertools.product(range(self.L), repeat=3))

    def center(self, p: int) -> float:
        return (p + 0.5) / self.L

    def lift(self, x, p: int):
        """Lift of a coordinate into the unit-length window centred on arc ``p``."""
        c = self.center(p)
        return x + np.round(c - x)

    def lift_point(self, x, v) -> np.ndarray:
        return np.array([self.lift(x[a], v[a]) for a in range(3)])

    def contains(self, x, v) -> bool:
        for a in range(3):
            y = self.lift(x[a], v[a])
            if not (v[a] / self.L - self.delta < y < (v[a] + 1) / self.L + self.delta):
                return False
        return True

    def intersection_box(self, vs) -> tuple:
        """Lower/upper corners (in lifted coordinates) of the common intersection of patches."""
        lo, hi = np.zeros(3), np.zeros(3)
        for a in range(3):
            ps = sorted({v[a] for v in vs})
            if len(ps) == 1:
                p = ps[0]
                lo[a], hi[a] = p / self.L - self.delta, (p + 1) / self.L + self.delta
            elif len(ps) == 2 and (ps[1] - ps[0]) % self.L in (1, self.L - 1):
                # the shared boundary point of two neighbouring arcs
                p = ps[1] if (ps[1] - ps[0]) % self.L == 1 else ps[0]
                b = p / self.L
                lo[a], hi[a] = b - self.delta, b + self.delta
            else:
                raise CoverError(f"patches {vs} do not intersect")
        return lo, hi

    # -- partition of unity -------------------------------------------------
    def bump(self, x, p: int, sharpness: float = 1.0) -> np.ndarray:
        """Smooth bump supported in the inner half of the overlap margin around arc ``p``."""
        r = 1 / (2 * self.L) + self.delta / 2
        u = (self.lift(x, p) - self.center(p)) / r
        out = np.zeros_like(np.asarray(x, dtype=float))
        inside = np.abs(u) < 1
        out[inside] = np.exp(-sharpness / (1.0 - u[inside] ** 2))
        return out

    def partition_1d(self, x, sharpness: float = 1.0) -> np.ndarray:
        """Array ``(L, len(x))`` of normalized bumps."""
        b = np.stack([self.bump(x, p, sharpness) for p in range(self.L)])
        return b / b.sum(axis=0)


@dataclass(frozen=True)
class DecomposableBundle:
    """Transition data of the projective bundle with class ``a * b``."""

    a: int
    b: int
    cover: CubicalCover
    M: int = 64

    def c(self, x, v) -> float:
        return self.a * self.cover.lift(x[0], v[0])

    def l(self, x, v) -> np.ndarray:
        return self.cover.lift_point(x, v) - np.asarray(x)

    def n(self, x, i, j) -> int:
        """Winding cocycle ``n_ij = c_j - c_i``."""
        return int(round(self.c(x, j) - self.c(x, i)))

    def tau(self, x, i, j) -> float:
        k2 = round(self.l(x, i)[1] - self.l(x, j)[1])
        return TWO_PI * self.b * k2 * self.cover.lift(x[2], j[2])

    def dtau(self, x, i, j) -> np.ndarray:
        k2 = round(self.l(x, i)[1] - self.l(x, j)[1])
        return np.array([0.0, 0.0, TWO_PI * self.b * k2])

    # -- truncated operators --------------------------------------------------
    def rotation(self, t: float) -> sp.csr_matrix:
        k = np.arange(-self.M, self.M + 1)
        return sp.diags(np.exp(-1j * k * t)).tocsr()

    def multiplier(self, n: int) -> sp.csr_matrix:
        """``e^{i n theta}``: shifts mode ``k`` to ``k + n`` (truncated at the edges)."""
        size = 2 * self.M + 1
        return sp.eye(size, size, k=-n, dtype=complex, format="csr")

    def lift_operator(self, x, i, j) -> sp.csr_matrix:
        return self.rotation(self.tau(x, i, j)) @ self.multiplier(self.n(x, i, j))

    def lift_inverse(self, x, i, j) -> sp.csr_matrix:
        return self.multiplier(-self.n(x, i, j)) @ self.rotation(-self.tau(x, i, j))

    def _apply(self, v: np.ndarray, t: float, n: int) -> np.ndarray:
        """``R_t M_n v`` with modes pushed past the truncation dropped."""
        out = np.zeros_like(v)
        if n >= 0:
            out[n:] = v[: v.size - n]
        else:
            out[:n] = v[-n:]
        return np.exp(-1j * np.arange(-self.M, self.M + 1) * t) * out

    def discrepancy(self, x, i, j, k, tol: float = 1e-10) -> complex:
        """Scalar ``c_ijk`` with ``g_ij g_jk g_ik^{-1} = c_ijk Id`` on the interior block.

        The product is applied to a random vector supported on the interior
        modes, which detects any non-scalar part.
        """
        nij, njk, nik = self.n(x, i, j), self.n(x, j, k), self.n(x, i, k)
        reach = abs(nij) + abs(njk) + abs(nik)
        v = np.zeros(2 * self.M + 1, dtype=complex)
        inner = slice(reach, 2 * self.M + 1 - reach)
        v[inner] = _PROBE[: 2 * self.M + 1 - 2 * reach]
        # g_ik^{-1} = M_{-n} R_{-t}
        w = np.exp(1j * np.arange(-self.M, self.M + 1) * self.tau(x, i, k)) * v
        w = self._apply(w, 0.0, -nik)
        w = self._apply(w, self.tau(x, j, k), njk)
        w = self._apply(w, self.tau(x, i, j), nij)
        c = complex(np.vdot(v, w) / np.vdot(v, v))
        if np.abs(w - c * v).max() > tol:
            raise BranchError("lift discrepancy is not scalar")
        if abs(abs(c) - 1) > tol:
            raise BranchError(f"lift discrepancy {c} is not unimodular")
        return c

    def analytic_discrepancy(self, x, i, j, k) -> complex:
        return complex(np.exp(1j * self.n(x, i, j) * self.tau(x, j, k)))


def build_decomposable_bundle(a: int, b: int, cover: CubicalCover | None = None, M: int = 64) -> DecomposableBundle:
    cover = CubicalCover() if cover is None else cover
    if M < 4 * (abs(a) + 1):
        raise CoverError("truncation too small for the multiplier windings")
    return DecomposableBundle(int(a), int(b), cover, M)


def exchange_residual(t: float, n: int, M: int = 64) -> float:
    """``max |R_t M_n - e^{-i n t} M_n R_t|`` on truncated matrices."""
    bundle = DecomposableBundle(0, 0, CubicalCover(), M)
    R, Mn = bundle.rotation(t), bundle.multiplier(n)
    diff = R @ Mn - np.exp(-1j * n * t) * (Mn @ R)
    return float(np.abs(diff.toarray()).max())


# -- Cech class -------------------------------------------------------------------


def kuhn_simplices(L: int):
    """Oriented 3-simplices ``(sign, vertices)`` of the Freudenthal triangulation of the patch torus."""
    for v0 in itertools.product(range(L), repeat=3):
        for perm in itertools.permutations(range(3)):
            verts = [tuple(v0)]
            cur = list(v0)
            for axis in perm:
                cur[axis] = (cur[axis] + 1) % L
                verts.append(tuple(cur))
            yield _perm_sign(perm), verts


class _BranchTable:
    """Continuous logarithms of ``c_ijk`` on triple overlaps, seeded at the box centre."""

    def __init__(self, bundle: DecomposableBundle, steps: int = 12):
        self.bundle = bundle
        self.steps = steps
        self.cache = {}

    def seed(self, tri):
        lo, hi = self.bundle.cover.intersection_box(tri)
        return (lo + hi) / 2

    def log(self, tri, x) -> float:
        """``log c`` (imaginary part) at ``x`` continued along the segment from the seed."""
        key = (tri, tuple(np.round(x, 12)))
        if key in self.cache:
            return self.cache[key]
        s = self.seed(tri)
        # pick the representative of x nearest to the seed
        x = s + ((np.asarray(x) - s + 0.5) % 1.0) - 0.5
        i, j, k = tri
        prev = self.bundle.discrepancy(s % 1.0, i, j, k)
        acc = float(np.angle(prev))
        for t in np.linspace(0, 1, self.steps + 1)[1:]:
            cur = self.bundle.discrepancy((s + t * (x - s)) % 1.0, i, j, k)
            step = float(np.angle(cur / prev))
            if abs(step) > math.pi / 2:
                raise BranchError("log branch jumps along the overlap; refine the cover")
            acc += step
            prev = cur
        self.cache[key] = acc
        return acc


def cech_dd_class(bundle: DecomposableBundle, labels: dict | None = None, steps: int = 12) -> int:
    """Integer Dixmier-Douady class from numerically computed lift discrepancies.

    ``labels`` optionally relabels patches (a bijection onto integers); the
    Cech orientation is the induced order.  Returns the pairing of the integer
    3-cocycle ``(1/2pi) delta log c`` with the fundamental class.
    """
    cover = bundle.cover
    if labels is None:
        labels = {v: idx for idx, v in enumerate(cover.patches)}
    table = _BranchTable(bundle, steps)
    total = 0.0
    for sign, verts in kuhn_simplices(cover.L):
        order = sorted(range(4), key=lambda r: labels[verts[r]])
        srt = [verts[r] for r in order]
        lo, hi = cover.intersection_box(srt)
        x = ((lo + hi) / 2) % 1.0
        faces = [srt[1:], [srt[0]] + srt[2:], srt[:2] + [srt[3]], srt[:3]]
        m = sum((-1) ** f * table.log(tuple(face), x) for f, face in enumerate(faces)) / TWO_PI
        mi = round(m)
        if abs(m - mi) > 1e-6:
            raise BranchError(f"non-integral coboundary {m}")
        total += sign * _perm_sign(order) * mi
    return int(total)


def cup_product_oracle(bundle: DecomposableBundle) -> int:
    """Minus the Alexander-Whitney pairing ``sum sign * n(v0 v1) * m(v1 v2 v3)`` over the Kuhn cycle.

    ``log c_ijk = n_ij tau_jk`` and the Leibniz rule give
    ``delta(n tau) = -n cup delta(tau)``, hence the sign.
    """
    total = 0
    cover = bundle.cover
    for sign, verts in kuhn_simplices(cover.L):
        lo, hi = cover.intersection_box(verts)
        x = ((lo + hi) / 2) % 1.0
        v0, v1, v2, v3 = verts
        n01 = bundle.n(x, v0, v1)
        m = (bundle.tau(x, v1, v2) + bundle.tau(x, v2, v3) - bundle.tau(x, v1, v3)) / TWO_PI
        total += sign * n01 * round(m)
    return -int(total)


# -- differential forms on the grid -----------------------------------------------
#
# A form is a dict from sorted index tuples to arrays over the periodic grid.
# Derivatives are central differences, so d d = 0 holds exactly.


def form_add(*forms) -> dict:
    out = {}
    for f in forms:
        for k, v in f.items():
            out[k] = out[k] + v if k in out else v
    return out


def form_scale(f: dict, c) -> dict:
    return {k: c * v for k, v in f.items()}


def form_wedge(f: dict, g: dict) -> dict:
    out = {}
    for I, a in f.items():
        for J, b in g.items():
            if set(I) & set(J):
                continue
            K = tuple(sorted(I + J))
            term = _perm_sign(I + J) * (a * b)
            out[K] = out[K] + term if K in out else term
    return out


def form_d(f: dict, h: float) -> dict:
    out = {}
    for I, a in f.items():
        for mu in range(3):
            if mu in I:
                continue
            der = (np.roll(a, -1, axis=mu) - np.roll(a, 1, axis=mu)) / (2 * h)
            K = tuple(sorted((mu,) + I))
            term = _perm_sign((mu,) + I) * der
            out[K] = out[K] + term if K in out else term
    return out


def form_max(f: dict, mask=None) -> float:
    vals = [np.abs(v if mask is None else v[mask]).max(initial=0.0) for v in f.values()]
    return float(max(vals, default=0.0))


def _degree(f: dict) -> int:
    return len(next(iter(f))) if f else 0


# -- Fourier multiplier fields ----------------------------------------------------


class SequenceBank:
    """Mode sequences of multipliers ``D`` and ``S_n = L(D + n) - L(D)``, ``L = log Q``.

    Keys are sorted tuples of factors, ``()`` being the identity.  Residue
    traces (pinned convention ``rTr = SIGMA * Wodzicki``) are cached per key.
    """

    def __init__(self, q=None, M: int = 512):
        from .spectral import normalize_q

        self.q = normalize_q() if q is None else q
        self.M = M
        self.modes = np.arange(-M - 16, M + 17)
        self._log = np.log(np.sqrt(1.0 + self.modes.astype(float) ** 2)) + self.q.shift_values(self.modes)
        self._rtr = {}

    def factor(self, f) -> np.ndarray:
        if f[0] == "D":
            return self.modes.astype(complex)
        n = f[1]
        return np.roll(self._log, -n) - self._log

    def order(self, key) -> int:
        return sum(1 if f[0] == "D" else -1 for f in key)

    def sequence(self, key) -> np.ndarray:
        out = np.ones(self.modes.size, dtype=complex)
        for f in key:
            out = out * self.factor(f)
        return out[16:-16]

    def rtr(self, key) -> complex:
        from .spectral import SIGMA, regularized_trace

        if key not in self._rtr:
            order = self.order(key)
            if order < -1 or not key:
                val = 0.0
            else:
                val = SIGMA * regularized_trace(self.sequence(key), order).residue
            self._rtr[key] = complex(val)
        return self._rtr[key]


def _key_mul(k1, k2):
    return tuple(sorted(k1 + k2))


class MultiplierField:
    """Form-valued Fourier multiplier ``sum_key coef_key(x) * seq_key(D)`` of fixed degree."""

    def __init__(self, terms: dict | None = None):
        self.terms = {k: f for k, f in (terms or {}).items() if f}

    def __add__(self, other):
        keys = set(self.terms) | set(other.terms)
        return MultiplierField({k: form_add(self.terms.get(k, {}), other.terms.get(k, {})) for k in keys})

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        return MultiplierField({k: form_scale(f, c) for k, f in self.terms.items()})

    def wedge(self, other):
        out = {}
        for k1, f1 in self.terms.items():
            for k2, f2 in other.terms.items():
                k = _key_mul(k1, k2)
                out[k] = form_add(out.get(k, {}), form_wedge(f1, f2))
        return MultiplierField(out)

    def degree(self) -> int:
        for f in self.terms.values():
            return _degree(f)
        return 0

    def graded_commutator(self, other):
        sign = (-1) ** (self.degree() * other.degree())
        return self.wedge(other) - other.wedge(self).scale(sign)

    def d(self, h: float):
        return MultiplierField({k: form_d(f, h) for k, f in self.terms.items()})

    def delta_q(self):
        """``[log Q, .]`` vanishes on multipliers."""
        return MultiplierField()

    def rtr(self, bank: SequenceBank) -> dict:
        out = {}
        for k, f in self.terms.items():
            c = bank.rtr(k)
            if c != 0:
                out = form_add(out, form_scale(f, c))
        return out

    def value_at(self, bank: SequenceBank, index) -> dict:
        """Mode sequences of every form component at one grid point."""
        out = {}
        for k, f in self.terms.items():
            seq = bank.sequence(k)
            for I, a in f.items():
                out[I] = out.get(I, 0) + a[index] * seq
        return out


# -- connection, Higgs field and the three-form ----------------------------------


@dataclass
class GerbeFields:
    """Per-patch fields with the pieces entering ``H`` and ``B``."""

    gamma: MultiplierField
    phi: MultiplierField
    W: MultiplierField
    nabla_phi: MultiplierField
    H: dict
    B: dict


class GerbeGeometry:
    """Connection ``gamma_i = -i D a_i`` and Higgs field ``phi_i = sum_k rho_k S_{n_ki}`` on a grid.

    ``a_i = sum_k rho_k d tau_ki`` is a connection on ``P`` and ``phi_i`` solves
    the affine overlap law exactly.  Points are ``(g + 1/2)/G``.
    """

    def __init__(self, bundle: DecomposableBundle, grid: int = 24, bank: SequenceBank | None = None,
                 sharpness: float = 1.0):
        self.bundle = bundle
        self.cover = bundle.cover
        self.G = grid
        self.h = 1.0 / grid
        self.bank = SequenceBank() if bank is None else bank
        self.x = (np.arange(grid) + 0.5) / grid
        L = self.cover.L
        self.rho1 = self.cover.partition_1d(self.x, sharpness)
        self.lift1 = np.stack([self.cover.lift(self.x, p) for p in range(L)])
        self.patches = self.cover.patches

    def _axis(self, arr, axis):
        shape = [1, 1, 1]
        shape[axis] = self.G
        return arr.reshape(shape)

    def rho(self, v) -> np.ndarray:
        return self._axis(self.rho1[v[0]], 0) * self._axis(self.rho1[v[1]], 1) * self._axis(self.rho1[v[2]], 2)

    def c(self, v) -> np.ndarray:
        return self.bundle.a * self._axis(self.lift1[v[0]], 0)

    def n(self, k, i) -> np.ndarray:
        """``n_ki = c_i - c_k`` as an integer grid function of ``x1``."""
        return np.rint(self.c(i) - self.c(k)).astype(int)

    def neighbours(self, i):
        L = self.cover.L
        return [k for k in self.patches if all((k[a] - i[a]) % L in (0, 1, L - 1) for a in range(3))]

    def connection(self, i) -> MultiplierField:
        full = (self.G,) * 3
        a3 = np.zeros(full)
        for k in self.neighbours(i):
            k2 = self._axis(self.lift1[k[1]] - self.lift1[i[1]], 1)
            a3 = a3 + self.rho(k) * TWO_PI * self.bundle.b * k2
        return MultiplierField({(("D",),): {(2,): -1j * a3}})

    def higgs(self, i) -> MultiplierField:
        terms = {}
        for k in self.neighbours(i):
            rk = self.rho(k)
            nk = np.broadcast_to(self.n(k, i), rk.shape)
            for val in np.unique(nk):
                if val == 0:
                    continue
                key = (("S", int(val)),)
                coef = np.where(nk == val, rk, 0.0)
                terms[key] = form_add(terms.get(key, {}), {(): coef})
        return MultiplierField(terms)

    def fields(self, i, gamma=None, phi=None) -> GerbeFields:
        gamma = self.connection(i) if gamma is None else gamma
        phi = self.higgs(i) if phi is None else phi
        W = gamma.d(self.h) + gamma.wedge(gamma)
        nabla = phi.d(self.h) + gamma.graded_commutator(phi) - gamma.delta_q()
        H = form_scale(W.wedge(nabla).rtr(self.bank), -1j / TWO_PI)
        cs = gamma.delta_q().wedge(gamma).rtr(self.bank)
        B = form_scale(form_add(form_scale(cs, -0.5), phi.wedge(W).rtr(self.bank)), -1j / TWO_PI)
        return GerbeFields(gamma, phi, W, nabla, H, B)

    def glue(self, per_patch: dict) -> dict:
        """``sum_i rho_i F_i`` for per-patch forms ``F_i``."""
        return form_add(*[form_scale(f, self.rho(i)) for i, f in per_patch.items()])

    def integrate(self, f: dict) -> complex:
        return complex(np.mean(f.get((0, 1, 2), 0.0)))


@dataclass
class HReport:
    integral: complex
    expected: int
    patch_spread: float
    dB_residual: float
    grid: int

    @property
    def error(self) -> float:
        return abs(self.integral - self.expected)

    def to_json(self) -> dict:
        return {
            "integral": [self.integral.real, self.integral.imag],
            "expected": self.expected,
            "patchSpread": self.patch_spread,
            "dBResidual": self.dB_residual,
            "grid": self.grid,
        }


def compute_h(bundle: DecomposableBundle, grid: int = 24, bank: SequenceBank | None = None) -> HReport:
    """Global ``H = sum_i rho_i H_i`` with patch agreement and ``dB = H`` residuals."""
    geo = GerbeGeometry(bundle, grid, bank)
    Hs, spread, dB = {}, 0.0, 0.0
    for i in geo.patches:
        f = geo.fields(i)
        Hs[i] = f.H
        mask = geo.rho(i) > 0
        mask = np.broadcast_to(mask, (grid,) * 3)
        diff = form_add(form_d(f.B, geo.h), form_scale(f.H, -1.0))
        dB = max(dB, form_max(diff, mask))
    H = geo.glue(Hs)
    for i in geo.patches:
        spread = max(spread, form_max(form_add(Hs[i], form_scale(H, -1.0)), np.broadcast_to(geo.rho(i) > 0, (grid,) * 3)))
    return HReport(geo.integrate(H), bundle.a * bundle.b, spread, dB, grid)


def h_slice(bundle: DecomposableBundle, grid: int = 16, index: int = 0, bank: SequenceBank | None = None) -> tuple:
    """Glued ``H_{123}`` on the plane ``x3 = (index + 1/2)/grid``; returns ``(x, values)`` with values ``grid x grid``."""
    geo = GerbeGeometry(bundle, grid, bank)
    H = geo.glue({i: geo.fields(i).H for i in geo.patches})
    comp = np.broadcast_to(H.get((0, 1, 2), np.zeros(1)), (grid,) * 3)
    x = (np.arange(grid) + 0.5) / grid
    return x, np.array(comp[:, :, index % grid])


DD_ORIENTATION = -1
"""Sign with ``int_{T^3} H = DD_ORIENTATION * cech_dd_class`` under the pinned ``SIGMA``."""


def _pair_points(geo: GerbeGeometry, i, j, count: int = 4):
    mask = np.broadcast_to((geo.rho(i) > 0) & (geo.rho(j) > 0), (geo.G,) * 3)
    pts = np.argwhere(mask)
    if len(pts) == 0:
        return []
    sel = np.linspace(0, len(pts) - 1, min(count, len(pts))).astype(int)
    return [tuple(p) for p in pts[sel]]


def _shifted(seq: np.ndarray, n: int) -> np.ndarray:
    """Sequence of ``f(D + n)`` from that of ``f(D)`` (edge modes are garbage)."""
    return np.roll(seq, -n)


def overlap_residuals(geo: GerbeGeometry, count: int = 4) -> dict:
    """Overlap laws on sampled points of every neighbouring pair.

    * Higgs: ``phi_j = zeta(g_ij) + g_ij^{-1} phi_i g_ij`` with
      ``zeta(g) = L(D + n) - L(D)`` and conjugation shifting ``D -> D + n``;
    * connection: ``gamma_j = g^{-1} dg + g^{-1} gamma_i g`` modulo scalars,
      ``g^{-1} dg = -i (D + n) d tau_ij``;
    * curvature: ``W_j = g^{-1} W_i g`` modulo scalars.
    """
    bank = geo.bank
    inner = slice(40, -40)
    res = {"phi": 0.0, "gamma": 0.0, "W": 0.0}
    cache = {}
    for i in geo.patches:
        for j in geo.neighbours(i):
            if j <= i:
                continue
            for idx in _pair_points(geo, i, j, count):
                for v in (i, j):
                    if v not in cache:
                        cache[v] = geo.fields(v)
                fi, fj = cache[i], cache[j]
                n = int(np.broadcast_to(geo.n(i, j), (geo.G,) * 3)[idx])
                zeta = bank.sequence((("S", n),)) if n else np.zeros(bank.modes.size - 32)
                pi = fi.phi.value_at(bank, idx).get((), 0 * zeta)
                pj = fj.phi.value_at(bank, idx).get((), 0 * zeta)
                res["phi"] = max(res["phi"], float(np.abs((pj - zeta - _shifted(pi, n))[inner]).max()))
                x = geo.x[list(idx)]
                dtau = geo.bundle.dtau(x, i, j)
                D = bank.sequence((("D",),))
                gi, gj = fi.gamma.value_at(bank, idx), fj.gamma.value_at(bank, idx)
                for a in range(3):
                    lhs = gj.get((a,), 0 * D)
                    rhs = -1j * (D + n) * dtau[a] + _shifted(gi.get((a,), 0 * D), n)
                    diff = (lhs - rhs)[inner]
                    res["gamma"] = max(res["gamma"], float(np.abs(diff - diff.mean()).max()))
                wi, wj = fi.W.value_at(bank, idx), fj.W.value_at(bank, idx)
                for K in set(wi) | set(wj):
                    diff = (wj.get(K, 0 * D) - _shifted(wi.get(K, 0 * D), n))[inner]
                    res["W"] = max(res["W"], float(np.abs(diff - diff.mean()).max()))
    return res


def bianchi_residual(geo: GerbeGeometry) -> float:
    """``max |dW - [W, A]|`` over all patches, in the coefficient norm."""
    out = 0.0
    for i in geo.patches:
        f = geo.fields(i)
        r = f.W.d(geo.h) - f.W.graded_commutator(f.gamma)
        for form in r.terms.values():
            out = max(out, form_max(form))
    return out


def dh_residual(H: dict, h: float) -> float:
    """Finite-difference ``dH``; a 4-form on a 3-manifold, so identically zero."""
    return form_max(form_d(H, h))


@dataclass
class TransgressionReport:
    variant: str
    pointwise: float
    integral: complex
    scale: float

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "pointwise": self.pointwise,
            "integral": [self.integral.real, self.integral.imag],
            "scale": self.scale,
        }


def _shift_form(geo: GerbeGeometry) -> dict:
    """A global 1-form ``e`` used for connection shifts."""
    X = np.meshgrid(geo.x, geo.x, geo.x, indexing="ij")
    return {
        (0,): 0.2 * np.cos(TWO_PI * X[1]) + 0.1 * np.sin(TWO_PI * X[2]),
        (1,): 0.3 * np.sin(TWO_PI * X[0]) * np.cos(TWO_PI * X[2]),
        (2,): 0.15 * np.cos(TWO_PI * (X[0] + X[1])),
    }


def _odd_q_shift(q, kappa: float = 0.3):
    from .spectral import QSpec

    plus = list(q.shift_plus) or [0.0]
    minus = list(q.shift_minus) or [0.0]
    plus[0] += kappa
    minus[0] -= kappa
    return QSpec(q.shift_order, tuple(plus), tuple(minus))


def transgression_checks(bundle: DecomposableBundle, grid: int = 24, variants=("Q", "A", "Phi")) -> list:
    """Change exactly one of ``Q``, ``A`` or ``Phi`` and compare ``Delta H`` with the exact form.

    * ``Phi -> Phi + sigma`` (``sigma`` the difference of two partition Higgs
      fields, hence equivariant): ``Delta H = -(i/2pi) d rTr(W ^ sigma)``;
    * ``A -> A + f`` with ``f_i = -i (D + c_i) e``, equivariant because
      ``c_j = c_i + n_ij``: ``Delta H = -(i/2pi) d rTr(f ^ nabla Phi)``;
    * ``log Q -> log Q + P0`` with ``P0`` odd (no residue, normalization kept):
      the claimed form ``-(i/2pi) d rTr(A ^ [P0, A])`` vanishes for multipliers.
    """
    geo = GerbeGeometry(bundle, grid)
    base = {i: geo.fields(i) for i in geo.patches}
    out = []
    for variant in variants:
        if variant == "Phi":
            other = GerbeGeometry(bundle, grid, geo.bank, sharpness=2.5)
        elif variant == "Q":
            other = GerbeGeometry(bundle, grid, SequenceBank(_odd_q_shift(geo.bank.q), geo.bank.M))
        elif variant == "A":
            e = _shift_form(geo)
        else:
            raise ValueError(f"unknown variant {variant!r}")
        dH, pointwise, scale = {}, 0.0, 0.0
        for i in geo.patches:
            f = base[i]
            if variant == "Phi":
                phi2 = other.higgs(i)
                new = geo.fields(i, phi=phi2)
                claim = form_scale(form_d(f.W.wedge(phi2 - f.phi).rtr(geo.bank), geo.h), -1j / TWO_PI)
            elif variant == "A":
                shift = MultiplierField({(("D",),): form_scale(e, -1j), (): form_scale(e, -1j * geo.c(i))})
                new = geo.fields(i, gamma=f.gamma + shift)
                claim = form_scale(form_d(shift.wedge(f.nabla_phi).rtr(geo.bank), geo.h), -1j / TWO_PI)
            else:
                new = other.fields(i)
                claim = {}
            dH[i] = form_add(new.H, form_scale(f.H, -1.0))
            mask = np.broadcast_to(geo.rho(i) > 0, (grid,) * 3)
            pointwise = max(pointwise, form_max(form_add(dH[i], form_scale(claim, -1.0)), mask))
            scale = max(scale, form_max(dH[i], mask))
        out.append(TransgressionReport(variant, pointwise, geo.integrate(geo.glue(dH)), scale))
    return out


def b_shift_residual(bundle: DecomposableBundle, grid: int = 24) -> float:
    """``B`` under ``phi -> phi + psi`` changes by ``-(i/2pi) rTr(psi W)``."""
    geo = GerbeGeometry(bundle, grid)
    other = GerbeGeometry(bundle, grid, geo.bank, sharpness=2.5)
    out = 0.0
    for i in geo.patches:
        f = geo.fields(i)
        psi = other.higgs(i) - f.phi
        g = geo.fields(i, phi=f.phi + psi)
        pred = form_scale(psi.wedge(f.W).rtr(geo.bank), -1j / TWO_PI)
        out = max(out, form_max(form_add(g.B, form_scale(f.B, -1.0), form_scale(pred, -1.0))))
    return out
