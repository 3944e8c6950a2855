"""Truncated classical symbols on T*S^1 minus the zero section.

A symbol of order ``m`` and depth ``J`` is stored as two ladders (one per
ray ``xi > 0`` and ``xi < 0``) of ``J`` homogeneous components

    a(x, xi) ~ sum_j c_j^{sgn xi}(x) |xi|^{m - j},      |xi| >= 1,

with each ``c_j`` an ``N x N`` matrix-valued trigonometric polynomial kept as
Fourier coefficients for frequencies ``-K..K``.  Arithmetic uses the
Kohn-Nirenberg (left) quantization, the one that matches Fourier matrices
``A[m, n] = a_hat_{m-n}(n)`` exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KMAX = 64

RAYS = ("plus", "minus")
RAY_SIGN = {"plus": 1, "minus": -1}


class SymbolError(ValueError):
    """Raised on malformed or incompatible symbols."""


class EllipticityError(SymbolError):
    """Raised when a leading component fails to be invertible."""


def falling(s: complex, k: int) -> complex:
    out = 1.0
    for i in range(k):
        out = out * (s - i)
    return out


def _as_order(m):
    m = complex(m)
    return m.real if m.imag == 0 else m


def _pad(c: np.ndarray, K: int) -> np.ndarray:
    k0 = (c.shape[1] - 1) // 2
    if k0 == K:
        return c
    if k0 > K:
        return c[:, k0 - K : k0 + K + 1]
    out = np.zeros((c.shape[0], 2 * K + 1) + c.shape[2:], dtype=complex)
    out[:, K - k0 : K + k0 + 1] = c
    return out


def convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fourier coefficients of the pointwise matrix product of two trig polynomials."""
    ka = (a.shape[0] - 1) // 2
    kb = (b.shape[0] - 1) // 2
    out = np.zeros((2 * (ka + kb) + 1,) + a.shape[1:], dtype=complex)
    for q in range(a.shape[0]):
        if not a[q].any():
            continue
        out[q : q + b.shape[0]] += np.einsum("ij,pjk->pik", a[q], b)
    return out


@dataclass
class ClipReport:
    """Record of Fourier mass dropped when a bandwidth exceeded ``kmax``."""

    dropped: list = field(default_factory=list)

    def note(self, op: str, norm: float) -> None:
        if norm > 0:
            self.dropped.append((op, float(norm)))


CLIP_REPORT = ClipReport()


class ClassicalSymbol:
    """Immutable truncated two-ray classical symbol."""

    __slots__ = ("order", "plus", "minus")

    def __init__(self, order, plus, minus):
        plus = np.array(plus, dtype=complex)
        minus = np.array(minus, dtype=complex)
        if plus.ndim != 4 or minus.ndim != 4:
            raise SymbolError("ray ladders must have shape (J, 2K+1, N, N)")
        if plus.shape[0] != minus.shape[0]:
            raise SymbolError("both rays need the same depth")
        if plus.shape[0] == 0:
            raise SymbolError("depth-0 symbols are not allowed")
        if plus.shape[2] != plus.shape[3] or plus.shape[2:] != minus.shape[2:]:
            raise SymbolError("coefficients must be square matrices of equal rank")
        if plus.shape[1] % 2 == 0 or minus.shape[1] % 2 == 0:
            raise SymbolError("Fourier coefficient axis must have odd length 2K+1")
        K = max(plus.shape[1], minus.shape[1]) // 2
        plus, minus = _pad(plus, K), _pad(minus, K)
        plus.flags.writeable = False
        minus.flags.writeable = False
        object.__setattr__(self, "order", _as_order(order))
        object.__setattr__(self, "plus", plus)
        object.__setattr__(self, "minus", minus)

    def __setattr__(self, name, value):
        raise AttributeError("ClassicalSymbol is immutable")

    # -- shape -------------------------------------------------------------
    @property
    def depth(self) -> int:
        return self.plus.shape[0]

    @property
    def rank(self) -> int:
        return self.plus.shape[2]

    @property
    def bandwidth(self) -> int:
        return (self.plus.shape[1] - 1) // 2

    def ray(self, name: str) -> np.ndarray:
        return self.plus if name == "plus" else self.minus

    def degrees(self) -> list:
        return [self.order - j for j in range(self.depth)]

    # -- constructors --------------------------------------------------------
    @classmethod
    def from_components(cls, order, plus, minus=None, rank=1):
        """Build from per-ray lists of coefficient arrays.

        Each component may be a scalar (constant function), a 1-D array of
        Fourier coefficients (rank 1), or a full ``(2K+1, N, N)`` array.
        """
        if minus is None:
            minus = plus
        comps = []
        for ladder in (plus, minus):
            arrs = [_coerce_component(c, rank) for c in ladder]
            comps.append(arrs)
        K = max(a.shape[0] for ladder in comps for a in ladder) // 2
        stacks = [np.stack([_pad(a[None], K)[0] for a in ladder]) for ladder in comps]
        return cls(order, stacks[0], stacks[1])

    @classmethod
    def identity(cls, rank=1, depth=1):
        return cls.scalar_ladder(0, [1.0] + [0.0] * (depth - 1), rank=rank)

    @classmethod
    def scalar_ladder(cls, order, values, minus_values=None, rank=1):
        """x-independent ladder ``sum_j values[j] |xi|^{order-j} Id``."""
        if minus_values is None:
            minus_values = values
        eye = np.eye(rank)
        plus = np.array([v * eye for v in values], dtype=complex)[:, None]
        minus = np.array([v * eye for v in minus_values], dtype=complex)[:, None]
        return cls(order, plus, minus)

    @classmethod
    def japanese_power(cls, s, depth, rank=1):
        """Symbol of <D>^s = (1 + D^2)^{s/2}: sum_k binom(s/2, k) |xi|^{s-2k}."""
        vals = []
        for j in range(depth):
            if j % 2:
                vals.append(0.0)
            else:
                k = j // 2
                vals.append(falling(s / 2, k) / math.factorial(k))
        return cls.scalar_ladder(s, vals, rank=rank)

    @classmethod
    def multiplication(cls, coeffs, depth=1, rank=1):
        """Multiplication operator by the trig polynomial with the given coefficients."""
        c = _coerce_component(coeffs, rank)
        zero = np.zeros_like(c)
        return cls.from_components(0, [c] + [zero] * (depth - 1), rank=rank)

    @classmethod
    def exponential(cls, k: int, depth=1, rank=1):
        """Multiplication by e^{ikx}."""
        coeffs = np.zeros(2 * abs(k) + 1, dtype=complex)
        coeffs[abs(k) + k] = 1.0
        return cls.multiplication(coeffs, depth=depth, rank=rank)

    @classmethod
    def zero(cls, order, depth, rank=1, K=0):
        z = np.zeros((depth, 2 * K + 1, rank, rank), dtype=complex)
        return cls(order, z, z)

    @classmethod
    def random(cls, rng, order, depth, rank=1, K=2, scale=1.0):
        def ladder():
            c = rng.standard_normal((depth, 2 * K + 1, rank, rank)) + 1j * rng.standard_normal(
                (depth, 2 * K + 1, rank, rank)
            )
            decay = 1.0 / (1.0 + np.abs(np.arange(-K, K + 1)))
            return scale * c * decay[None, :, None, None]

        return cls(order, ladder(), ladder())

    # -- linear structure ----------------------------------------------------
    def _aligned(self, other: ClassicalSymbol):
        if self.rank != other.rank:
            raise SymbolError(f"rank mismatch {self.rank} != {other.rank}")
        shift = self.order - other.order
        if abs(shift - round(shift.real)) > 1e-12:
            raise SymbolError("orders differ by a non-integer")
        return int(round(shift.real))

    def __add__(self, other: ClassicalSymbol) -> ClassicalSymbol:
        return _combine(self, other, 1.0)

    def __sub__(self, other: ClassicalSymbol) -> ClassicalSymbol:
        return _combine(self, other, -1.0)

    def __neg__(self):
        return ClassicalSymbol(self.order, -self.plus, -self.minus)

    def __mul__(self, c):
        if isinstance(c, ClassicalSymbol):
            return star_compose(self, c)
        return ClassicalSymbol(self.order, c * self.plus, c * self.minus)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return star_compose(self, other)

    def truncate(self, depth: int) -> ClassicalSymbol:
        if depth < 1 or depth > self.depth:
            raise SymbolError("invalid truncation depth")
        return ClassicalSymbol(self.order, self.plus[:depth], self.minus[:depth])

    def with_order(self, order) -> ClassicalSymbol:
        """Re-express with a higher nominal order by prepending zero components."""
        shift = order - self.order
        s = int(round(complex(shift).real))
        if s < 0 or abs(shift - s) > 1e-12:
            raise SymbolError("can only raise the nominal order by an integer")
        if s == 0:
            return self
        pad = np.zeros((s,) + self.plus.shape[1:], dtype=complex)
        return ClassicalSymbol(order, np.concatenate([pad, self.plus]), np.concatenate([pad, self.minus]))

    def component(self, degree, ray="plus") -> np.ndarray:
        j = self.order - degree
        ji = int(round(complex(j).real))
        if abs(j - ji) > 1e-12 or not 0 <= ji < self.depth:
            raise SymbolError(f"degree {degree} not in the ladder")
        return self.ray(ray)[ji]

    def max_abs(self) -> float:
        return float(max(np.abs(self.plus).max(), np.abs(self.minus).max()))

    def allclose(self, other: ClassicalSymbol, atol=1e-10) -> bool:
        return (self - other).max_abs() <= atol

    # -- evaluation -----------------------------------------------------------
    def evaluate(self, x: np.ndarray, xi: float) -> np.ndarray:
        """Value of the truncated expansion at points ``x`` and a fixed ``xi != 0``."""
        x = np.asarray(x, dtype=float)
        ladder = self.plus if xi > 0 else self.minus
        K = self.bandwidth
        waves = np.exp(1j * np.outer(x, np.arange(-K, K + 1)))
        out = np.zeros(x.shape + (self.rank, self.rank), dtype=complex)
        for j in range(self.depth):
            out += np.abs(xi) ** (self.order - j) * np.einsum("xk,kij->xij", waves, ladder[j])
        return out

    # -- serialization ---------------------------------------------------------
    def to_json(self) -> dict:
        def ladder(stack):
            return [
                {"degree": _pair(self.order - j), "coeffs": _encode(stack[j])}
                for j in range(self.depth)
            ]

        return {
            "order": _pair(self.order),
            "depth": self.depth,
            "rank": self.rank,
            "rays": {"plus": ladder(self.plus), "minus": ladder(self.minus)},
        }

    @classmethod
    def from_json(cls, data) -> ClassicalSymbol:
        if isinstance(data, str):
            data = json.loads(data)
        order = complex(*data["order"]) if isinstance(data["order"], list) else data["order"]
        stacks = []
        for ray in RAYS:
            stacks.append(np.stack([_decode(c["coeffs"]) for c in data["rays"][ray]]))
        sym = cls(order, stacks[0], stacks[1])
        if sym.depth != data["depth"] or sym.rank != data["rank"]:
            raise SymbolError("header does not match ladder contents")
        return sym

    def __repr__(self):
        return f"ClassicalSymbol(order={self.order}, depth={self.depth}, rank={self.rank}, K={self.bandwidth})"


def _pair(z):
    z = complex(z)
    return [z.real, z.imag]


def _encode(arr: np.ndarray):
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _decode(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def _coerce_component(c, rank) -> np.ndarray:
    a = np.asarray(c, dtype=complex)
    if a.ndim == 0:
        return (a * np.eye(rank))[None]
    if a.ndim == 1:
        if a.shape[0] % 2 == 0:
            raise SymbolError("Fourier vectors need odd length")
        return a[:, None, None] * np.eye(rank)[None]
    if a.ndim == 3:
        return a
    raise SymbolError("cannot interpret component")


def _combine(a: ClassicalSymbol, b: ClassicalSymbol, sign: float) -> ClassicalSymbol:
    shift = a._aligned(b)
    order = a.order if shift >= 0 else b.order
    da, db = max(0, -shift), max(0, shift)
    depth = min(a.depth + da, b.depth + db)
    K = max(a.bandwidth, b.bandwidth)
    out = []
    for ray in RAYS:
        acc = np.zeros((depth, 2 * K + 1, a.rank, a.rank), dtype=complex)
        ra, rb = _pad(a.ray(ray), K), _pad(b.ray(ray), K)
        for j in range(depth):
            if 0 <= j - da < a.depth:
                acc[j] += ra[j - da]
            if 0 <= j - db < b.depth:
                acc[j] += sign * rb[j - db]
        out.append(acc)
    return ClassicalSymbol(order, out[0], out[1])


def _clip(stack: np.ndarray, kmax: int, op: str) -> np.ndarray:
    K = (stack.shape[1] - 1) // 2
    if K <= kmax:
        return stack
    dropped = np.concatenate([stack[:, : K - kmax], stack[:, K + kmax + 1 :]], axis=1)
    CLIP_REPORT.note(op, float(np.abs(dropped).max()))
    return stack[:, K - kmax : K + kmax + 1]


def _dx_power(c: np.ndarray, k: int) -> np.ndarray:
    """Apply D_x^k = (-i d/dx)^k to a coefficient vector."""
    if k == 0:
        return c
    K = (c.shape[0] - 1) // 2
    n = np.arange(-K, K + 1, dtype=float) ** k
    return c * n[:, None, None]


def _dxi_factor(s, k: int, sign: int) -> complex:
    """d_xi^k |xi|^s = sign^k falling(s, k) |xi|^{s-k} on the ray of the given sign."""
    return (sign**k) * falling(s, k)


def _ray_compose(a_ray, b_ray, ma, sign, depth, pointwise_only=False):
    rank = a_ray.shape[2]
    pieces = {}
    for l in range(depth):
        acc = None
        for i in range(min(l, a_ray.shape[0] - 1) + 1):
            for k in range(0 if pointwise_only else l - i + 1):
                if pointwise_only:
                    k = 0
                j = l - i - k
                if j < 0 or j >= b_ray.shape[0]:
                    continue
                fac = _dxi_factor(ma - i, k, sign) / math.factorial(k)
                if fac == 0:
                    continue
                term = fac * convolve(a_ray[i], _dx_power(b_ray[j], k))
                acc = term if acc is None else _add_centered(acc, term)
                if pointwise_only:
                    break
        if acc is None:
            acc = np.zeros((1, rank, rank), dtype=complex)
        pieces[l] = acc
    K = max((p.shape[0] - 1) // 2 for p in pieces.values())
    return np.stack([_pad(pieces[l][None], K)[0] for l in range(depth)])


def _add_centered(a, b):
    K = max(a.shape[0], b.shape[0]) // 2
    return _pad(a[None], K)[0] + _pad(b[None], K)[0]


def star_compose(a: ClassicalSymbol, b: ClassicalSymbol, kmax: int = DEFAULT_KMAX) -> ClassicalSymbol:
    """Kohn-Nirenberg composition ``a o b ~ sum_k (1/k!) d_xi^k a D_x^k b``."""
    if a.rank != b.rank:
        raise SymbolError(f"rank mismatch {a.rank} != {b.rank}")
    depth = min(a.depth, b.depth)
    out = []
    for ray in RAYS:
        stack = _ray_compose(a.ray(ray), b.ray(ray), a.order, RAY_SIGN[ray], depth)
        out.append(_clip(stack, kmax, "star_compose"))
    return ClassicalSymbol(a.order + b.order, out[0], out[1])


def commutator(a: ClassicalSymbol, b: ClassicalSymbol, kmax: int = DEFAULT_KMAX) -> ClassicalSymbol:
    return star_compose(a, b, kmax) - star_compose(b, a, kmax)


def _dx(c):
    K = (c.shape[0] - 1) // 2
    return c * (1j * np.arange(-K, K + 1))[:, None, None]


def poisson_bracket(a: ClassicalSymbol, b: ClassicalSymbol, kmax: int = DEFAULT_KMAX) -> ClassicalSymbol:
    """Matrix Poisson bracket ``{a, b} = d_xi a d_x b - d_x a d_xi b``."""
    if a.rank != b.rank:
        raise SymbolError(f"rank mismatch {a.rank} != {b.rank}")
    depth = min(a.depth, b.depth)
    out = []
    for ray in RAYS:
        sg = RAY_SIGN[ray]
        ra, rb = a.ray(ray), b.ray(ray)
        pieces = []
        for l in range(depth):
            acc = np.zeros((1, a.rank, a.rank), dtype=complex)
            for i in range(l + 1):
                j = l - i
                t1 = sg * (a.order - i) * convolve(ra[i], _dx(rb[j]))
                t2 = sg * (b.order - j) * convolve(_dx(ra[i]), rb[j])
                acc = _add_centered(acc, t1 - t2)
            pieces.append(acc)
        K = max((p.shape[0] - 1) // 2 for p in pieces)
        out.append(_clip(np.stack([_pad(p[None], K)[0] for p in pieces]), kmax, "poisson_bracket"))
    return ClassicalSymbol(a.order + b.order - 1, out[0], out[1])


def adjoint_symbol(a: ClassicalSymbol) -> ClassicalSymbol:
    """KN adjoint ``a* ~ sum_k (1/k!) d_xi^k D_x^k a^dagger``."""
    out = []
    order = np.conj(a.order)
    for ray in RAYS:
        sg = RAY_SIGN[ray]
        # pointwise conjugate transpose: coefficient at -k becomes c_k^H
        dag = np.conj(np.transpose(a.ray(ray)[:, ::-1], (0, 1, 3, 2)))
        stack = np.zeros_like(dag)
        for l in range(a.depth):
            for k in range(l + 1):
                i = l - k
                fac = _dxi_factor(order - i, k, sg) / math.factorial(k)
                stack[l] += fac * _dx_power(dag[i], k)
        out.append(stack)
    return ClassicalSymbol(order, out[0], out[1])


def _leading_values(a: ClassicalSymbol, ray: str, samples: int = 64) -> np.ndarray:
    x = 2 * np.pi * np.arange(samples) / samples
    K = a.bandwidth
    waves = np.exp(1j * np.outer(x, np.arange(-K, K + 1)))
    return np.einsum("xk,kij->xij", waves, a.ray(ray)[0])


def _pointwise_inverse(c: np.ndarray, kmax: int) -> np.ndarray:
    """Fourier coefficients of x -> c(x)^{-1}, sampled finely and truncated to kmax."""
    K = (c.shape[0] - 1) // 2
    L = 4 * max(kmax, K) + 1
    x = 2 * np.pi * np.arange(L) / L
    waves = np.exp(1j * np.outer(x, np.arange(-K, K + 1)))
    vals = np.einsum("xk,kij->xij", waves, c)
    inv = np.linalg.inv(vals)
    coeffs = np.fft.fft(inv, axis=0) / L
    idx = np.arange(-kmax, kmax + 1) % L
    return coeffs[idx]


def parametrix(a: ClassicalSymbol, depth: int | None = None, kmax: int = 16, tol: float = 1e-10) -> ClassicalSymbol:
    """Symbol ``b`` with ``a o b = Id + O(|xi|^{-depth})``."""
    J = a.depth if depth is None else depth
    if J > a.depth:
        raise SymbolError("parametrix depth cannot exceed input depth")
    for ray in RAYS:
        vals = _leading_values(a, ray)
        smin = np.linalg.svd(vals, compute_uv=False).min(axis=1)
        if smin.min() < tol:
            raise EllipticityError(f"leading component singular on the {ray} ray")
    inv0 = []
    for ray in RAYS:
        c0 = _pointwise_inverse(a.ray(ray)[0], kmax if a.bandwidth else 0)
        inv0.append(np.concatenate([c0[None], np.zeros((J - 1,) + c0.shape, dtype=complex)]))
    b0 = ClassicalSymbol(-a.order, inv0[0], inv0[1])
    a_t = a.truncate(J)
    ident = ClassicalSymbol.identity(a.rank, J)
    r = ident - star_compose(a_t, b0, kmax)  # order 0 with vanishing leading term
    series = ident
    power = ident
    for _ in range(1, J):
        power = star_compose(power, r, kmax)
        series = series + power
    return star_compose(b0, series, kmax)


def residue_trace(a: ClassicalSymbol) -> complex:
    """Wodzicki residue ``(1/2pi) int tr[c_{-1}^+ + c_{-1}^-] dx`` of a symbol."""
    j = a.order + 1
    ji = int(round(complex(j).real))
    if abs(j - ji) > 1e-12:
        return 0.0
    if ji < 0:
        return 0.0
    if ji >= a.depth:
        raise SymbolError("expansion too shallow to contain the degree -1 component")
    K = a.bandwidth
    return complex(np.trace(a.plus[ji, K]) + np.trace(a.minus[ji, K]))


class LogSymbol:
    """Symbol ``c_+ log|xi| (+ray) + c_- log|xi| (-ray) + classical order-0 part``."""

    __slots__ = ("log_plus", "log_minus", "classical")

    def __init__(self, log_plus, log_minus, classical: ClassicalSymbol):
        if abs(classical.order) > 1e-12:
            classical = classical.with_order(0) if complex(classical.order).real < 0 else classical
        object.__setattr__(self, "log_plus", complex(log_plus))
        object.__setattr__(self, "log_minus", complex(log_minus))
        object.__setattr__(self, "classical", classical)

    def __setattr__(self, name, value):
        raise AttributeError("LogSymbol is immutable")

    @classmethod
    def of_japanese(cls, depth: int, rank: int = 1, shift: ClassicalSymbol | None = None) -> LogSymbol:
        """``log <xi> = log|xi| + sum_{k>=1} (-1)^{k+1}/(2k) |xi|^{-2k}``, plus an optional shift."""
        vals = []
        for j in range(depth):
            if j == 0 or j % 2:
                vals.append(0.0)
            else:
                k = j // 2
                vals.append((-1) ** (k + 1) / (2 * k))
        cl = ClassicalSymbol.scalar_ladder(0, vals, rank=rank)
        if shift is not None:
            cl = cl + shift.with_order(0)
            cl = cl.truncate(min(depth, cl.depth))
        return cls(1.0, 1.0, cl)

    @property
    def rank(self):
        return self.classical.rank

    def __add__(self, other: LogSymbol) -> LogSymbol:
        return LogSymbol(
            self.log_plus + other.log_plus, self.log_minus + other.log_minus, self.classical + other.classical
        )


def _dxi_log(k: int, sign: int) -> float:
    """Coefficient of |xi|^{-k} in d_xi^k log|xi| on a ray."""
    if sign > 0:
        return (-1) ** (k - 1) * math.factorial(k - 1)
    return -math.factorial(k - 1)


def log_bracket(log_plus, log_minus, a: ClassicalSymbol) -> ClassicalSymbol:
    """Star commutator ``[c_+ log|xi|_+ + c_- log|xi|_-, a]``; order drops by one."""
    out = []
    J = a.depth
    for ray, c in (("plus", log_plus), ("minus", log_minus)):
        sg = RAY_SIGN[ray]
        ra = a.ray(ray)
        stack = np.zeros_like(ra)
        for l in range(J):
            for k in range(1, l + 2):
                i = l + 1 - k
                if i >= J:
                    continue
                stack[l] += c * _dxi_log(k, sg) / math.factorial(k) * _dx_power(ra[i], k)
        out.append(stack)
    return ClassicalSymbol(a.order - 1, out[0], out[1])


def log_derivation(a: ClassicalSymbol, log_q: LogSymbol, kmax: int = DEFAULT_KMAX) -> ClassicalSymbol:
    """``delta_Q a = [log q, a]`` computed termwise."""
    if a.rank != log_q.rank:
        raise SymbolError("rank mismatch between symbol and log symbol")
    out = log_bracket(log_q.log_plus, log_q.log_minus, a)
    cl = log_q.classical
    if cl.depth > 0 and cl.max_abs() > 0:
        J = min(a.depth, cl.depth)
        inner = commutator(cl.truncate(J), a.truncate(J), kmax)
        # express at nominal order a.order - 1; the commutator is nominally of order a.order
        lead = max(np.abs(inner.plus[0]).max(), np.abs(inner.minus[0]).max())
        if lead > 1e-12:
            raise SymbolError("classical part of log q must have scalar leading term")
        inner = ClassicalSymbol(inner.order - 1, inner.plus[1:], inner.minus[1:]) if inner.depth > 1 else None
        if inner is not None:
            out = out.truncate(min(out.depth, inner.depth + 0)) + inner
    return out


def radial_defect(
    a: ClassicalSymbol, q: ClassicalSymbol, log_terms=None, kmax: int = DEFAULT_KMAX
) -> ClassicalSymbol:
    """Leading symbol of ``(1/i) q xi d_xi`` minus its classical homogeneity action.

    On a classical component ``c |xi|^s`` the radial field ``xi d_xi`` acts as
    multiplication by ``s``; subtracting that leaves only the contribution of
    non-homogeneous terms.  ``log_terms`` optionally injects components
    ``h_j log|xi| |xi|^{m-j}`` as a pair of ladders (plus, minus), for which
    ``xi d_xi (h log|xi| |xi|^s) - s h log|xi| |xi|^s = h |xi|^s``.
    """
    K = a.bandwidth
    if log_terms is not None:
        K = max(K, *((np.asarray(t).shape[1] - 1) // 2 for t in log_terms))
    defect_plus = np.zeros((a.depth, 2 * K + 1, a.rank, a.rank), dtype=complex)
    defect_minus = np.zeros_like(defect_plus)
    if log_terms is not None:
        lp, lm = (_pad(np.asarray(t, dtype=complex), K) for t in log_terms)
        defect_plus[: len(lp)] += lp[: a.depth]
        defect_minus[: len(lm)] += lm[: a.depth]
    defect = ClassicalSymbol(a.order, defect_plus, defect_minus)
    return star_compose(q.truncate(min(q.depth, defect.depth)), defect.truncate(min(q.depth, defect.depth)), kmax) * (
        -1j
    )


def d_xi(a: ClassicalSymbol) -> ClassicalSymbol:
    """``d_xi a`` as a symbol of order ``a.order - 1``."""
    out = []
    for ray in RAYS:
        sg = RAY_SIGN[ray]
        stack = np.array(a.ray(ray))
        for j in range(a.depth):
            stack[j] = stack[j] * sg * (a.order - j)
        out.append(stack)
    return ClassicalSymbol(a.order - 1, out[0], out[1])
