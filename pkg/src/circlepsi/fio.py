"""Graph-type Fourier integral operators on the circle.

A phase ``phi(x, xi) = xi * f_sgn(xi)(x)`` defines

    (K u)(x) = sum_n e^{i (x n - phi(x, n))} u_n,

so column ``n`` of the matrix holds the Fourier coefficients of
``x -> e^{i n (x - f(x))}``.  The canonical relation sends ``(y, eta)`` to
``(x, eta (1 - f'(x)))`` where ``x - f(x) = y``; conjugation therefore pushes
order-0 principal symbols forward along the base map ``y -> x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .spectral import FitError, TruncatedOperator, extract_symbol, quantize
from .symbols import RAY_SIGN, RAYS, ClassicalSymbol

TWO_PI = 2 * math.pi
MAX_SLOPE = 0.9


class PhaseError(ValueError):
    """Raised for phases outside the near-identity graph regime."""


def _trig(coeffs: np.ndarray, x, deriv: int = 0) -> np.ndarray:
    K = (len(coeffs) - 1) // 2
    k = np.arange(-K, K + 1)
    x = np.asarray(x, dtype=float)
    vals = np.exp(1j * np.multiply.outer(x, k)) @ (coeffs * (1j * k) ** deriv)
    return vals.real


@dataclass(frozen=True)
class PhaseFunction:
    """Per-ray Fourier coefficients (modes ``-K..K``) of the real functions ``f_+`` and ``f_-``."""

    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        for c in (self.plus, self.minus):
            c = np.asarray(c)
            if c.ndim != 1 or len(c) % 2 == 0:
                raise PhaseError("coefficients must cover modes -K..K")
            if not np.allclose(c, np.conj(c[::-1]), atol=1e-14):
                raise PhaseError("phase coefficients must describe a real function")
        if self.slope() >= MAX_SLOPE:
            raise PhaseError(f"|f'| reaches {self.slope():.3f}; not near the identity")

    @classmethod
    def from_coeffs(cls, plus, minus=None) -> PhaseFunction:
        plus = np.asarray(plus, dtype=complex)
        minus = plus if minus is None else np.asarray(minus, dtype=complex)
        K = max(len(plus), len(minus)) // 2
        pad = lambda c: np.pad(c, (K - len(c) // 2,) * 2)
        return cls(pad(plus), pad(minus))

    @classmethod
    def zero(cls) -> PhaseFunction:
        return cls.from_coeffs([0.0])

    @classmethod
    def rotation(cls, theta: float) -> PhaseFunction:
        return cls.from_coeffs([theta])

    @classmethod
    def sine(cls, eps: float, minus_eps: float | None = None) -> PhaseFunction:
        """``f = eps sin x`` (optionally a different amplitude on the negative ray)."""
        s = lambda e: [0.5j * e, 0.0, -0.5j * e]
        return cls.from_coeffs(s(eps), s(eps if minus_eps is None else minus_eps))

    @classmethod
    def random(cls, rng, K: int = 2, scale: float = 0.05) -> PhaseFunction:
        def one():
            half = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) * scale / (1 + np.arange(K)) ** 2
            return np.concatenate([np.conj(half[::-1]), [scale * rng.standard_normal()], half])

        return cls.from_coeffs(one(), one())

    @property
    def bandwidth(self) -> int:
        return (len(self.plus) - 1) // 2

    def coeffs(self, ray: str) -> np.ndarray:
        return self.plus if ray == "plus" else self.minus

    def f(self, x, ray: str) -> np.ndarray:
        return _trig(self.coeffs(ray), x)

    def df(self, x, ray: str) -> np.ndarray:
        return _trig(self.coeffs(ray), x, 1)

    def slope(self) -> float:
        x = np.linspace(0, TWO_PI, 512, endpoint=False)
        return float(max(np.abs(self.df(x, r)).max() for r in RAYS))

    def to_json(self) -> dict:
        return {r: [[c.real, c.imag] for c in self.coeffs(r)] for r in RAYS}

    @classmethod
    def from_json(cls, data: dict) -> PhaseFunction:
        return cls(*[np.array([complex(*c) for c in data[r]]) for r in RAYS])


@dataclass
class ContactMap:
    """Orientation and base diffeomorphism ``y -> g(y)`` of ``S^1`` per ray.

    The displacement ``g(y) - y`` is stored on a uniform grid and interpolated
    by periodic cubic splines.
    """

    displacement: dict
    orientation: dict = field(default_factory=lambda: {"plus": 1, "minus": 1})
    fiber: dict | None = None

    def __post_init__(self):
        self._splines = {}
        for r in RAYS:
            d = np.asarray(self.displacement[r], dtype=float)
            y = np.linspace(0, TWO_PI, len(d) + 1)
            self._splines[r] = CubicSpline(y, np.append(d, d[0]), bc_type="periodic")
            g = y[:-1] + d
            if np.any(np.diff(np.append(g, g[0] + TWO_PI)) <= 0):
                raise PhaseError("contact map is not monotone")

    @property
    def grid(self) -> np.ndarray:
        n = len(self.displacement["plus"])
        return np.linspace(0, TWO_PI, n, endpoint=False)

    def __call__(self, y, ray: str) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return y + self._splines[ray](np.mod(y, TWO_PI))

    def derivative(self, y, ray: str) -> np.ndarray:
        return 1 + self._splines[ray](np.mod(np.asarray(y, dtype=float), TWO_PI), 1)

    @classmethod
    def identity(cls, samples: int = 256) -> ContactMap:
        return cls({r: np.zeros(samples) for r in RAYS})

    @classmethod
    def from_function(cls, g, samples: int = 256) -> ContactMap:
        """``g(y, ray)`` evaluated on the grid."""
        y = np.linspace(0, TWO_PI, samples, endpoint=False)
        return cls({r: np.asarray(g(y, r)) - y for r in RAYS})

    def inverse(self) -> ContactMap:
        def inv(x, r):
            out = np.empty_like(x)
            for i, xi in enumerate(x):
                out[i] = _solve_monotone(lambda y: self(y, r) - xi, xi - self._splines[r](xi))
            return out

        return ContactMap.from_function(inv, len(self.grid))

    def compose(self, other: ContactMap) -> ContactMap:
        """``self o other``."""
        return ContactMap.from_function(lambda y, r: self(other(y, r), r), len(self.grid))

    def distance(self, other: ContactMap) -> float:
        y = self.grid
        return float(max(np.abs(_wrap(self(y, r) - other(y, r))).max() for r in RAYS))

    def to_json(self) -> dict:
        return {
            "orientation": dict(self.orientation),
            "displacement": {r: np.asarray(self.displacement[r]).tolist() for r in RAYS},
        }

    @classmethod
    def from_json(cls, data: dict) -> ContactMap:
        return cls({r: np.array(data["displacement"][r]) for r in RAYS}, dict(data["orientation"]))


def _wrap(d):
    return (np.asarray(d) + math.pi) % TWO_PI - math.pi


def _solve_monotone(h, guess: float, width: float = 1.0) -> float:
    """Root of an increasing function near ``guess``: bracket, Brent, Newton polish."""
    lo, hi = guess - width, guess + width
    for _ in range(8):
        if h(lo) < 0 < h(hi):
            break
        lo, hi = lo - width, hi + width
    else:
        raise PhaseError("root bracketing failed; phase too large")
    root = brentq(h, lo, hi, xtol=1e-14, rtol=1e-15)
    for _ in range(2):
        step = 1e-7
        slope = (h(root + step) - h(root - step)) / (2 * step)
        root -= h(root) / slope
    return float(root)


def contact_from_phase(phase: PhaseFunction, samples: int = 256) -> ContactMap:
    """Base map ``y -> x`` with ``x - f(x) = y`` per ray, plus the fiber factor ``1 - f'(x)``."""
    if phase.slope() >= MAX_SLOPE:
        raise PhaseError("phase too large for the graph regime")
    y = np.linspace(0, TWO_PI, samples, endpoint=False)
    disp, fiber = {}, {}
    for r in RAYS:
        xs = np.array([_solve_monotone(lambda x: x - phase.f(x, r) - yy, yy + phase.f(yy, r)) for yy in y])
        disp[r] = xs - y
        fiber[r] = 1 - phase.df(xs, r)
    return ContactMap(disp, fiber=fiber)


def hamiltonian_flow(h: PhaseFunction, t: float, samples: int = 256, rtol: float = 1e-12) -> ContactMap:
    """Time-``t`` map of ``dx/dt = f(x)``, ``d xi/dt = -xi f'(x)`` for ``h = xi f_sgn(xi)(x)``."""
    y = np.linspace(0, TWO_PI, samples, endpoint=False)
    disp, fiber = {}, {}
    for r in RAYS:
        if t == 0:
            disp[r], fiber[r] = np.zeros(samples), np.ones(samples)
            continue

        def rhs(_, z, r=r):
            x = z[:samples]
            return np.concatenate([h.f(x, r), -h.df(x, r)])

        sol = solve_ivp(rhs, (0, t), np.concatenate([y, np.zeros(samples)]), method="DOP853",
                        rtol=rtol, atol=rtol)
        if not sol.success:
            raise PhaseError(f"flow integration failed: {sol.message}")
        disp[r] = sol.y[:samples, -1] - y
        fiber[r] = np.exp(sol.y[samples:, -1])
    return ContactMap(disp, fiber=fiber)


def bracket_phase(h1: PhaseFunction, h2: PhaseFunction) -> PhaseFunction:
    """``{h1, h2}`` as a phase ``xi * (f1 f2' - f1' f2)``, exact on trig coefficients."""
    out = {}
    for r in RAYS:
        K = max(h1.bandwidth, h2.bandwidth)
        c1, c2 = (np.pad(c, (K - (len(c) - 1) // 2,) * 2) for c in (h1.coeffs(r), h2.coeffs(r)))
        k = np.arange(-K, K + 1)
        prod = np.convolve(c1, 1j * k * c2) - np.convolve(1j * k * c1, c2)
        out[r] = prod
    return PhaseFunction(out["plus"], out["minus"])


@dataclass
class FIOKernel:
    """Dense truncated matrix of ``K(phi)`` on modes ``-M..M``."""

    M: int
    matrix: np.ndarray
    phase: PhaseFunction
    contact: ContactMap
    cutoff: dict

    def operator(self) -> TruncatedOperator:
        return TruncatedOperator(self.M, 1, self.matrix, "K(phi)")

    def interior_condition(self) -> float:
        """Condition number of the columns ``|n| <= M/2``, away from truncation leakage."""
        n = np.arange(-self.M, self.M + 1)
        sv = np.linalg.svd(self.matrix[:, np.abs(n) <= self.M // 2], compute_uv=False)
        return float(sv.max() / sv.min())

    def band_energy(self, margin: int = 4) -> float:
        """Fraction of column energy within the band predicted by the contact map."""
        n = np.arange(-self.M, self.M + 1)
        x = np.linspace(0, TWO_PI, 256, endpoint=False)
        spread = {r: np.abs(self.phase.f(x, r)).max() for r in RAYS}
        total = inside = 0.0
        for j, nn in enumerate(n):
            if abs(nn) > self.M // 2:
                continue
            ray = "plus" if nn >= 0 else "minus"
            col = np.abs(self.matrix[:, j]) ** 2
            half = margin + 2 * spread[ray] * abs(nn) ** 0.5 + self.phase.bandwidth * (1 + spread[ray] * abs(nn))
            sel = np.abs(n - nn) <= half
            total += col.sum()
            inside += col[sel].sum()
        return float(inside / total)


def build_kernel(phase: PhaseFunction, M: int, unitary: bool = False, samples: int | None = None) -> FIOKernel:
    """Columns are Fourier coefficients of ``amp(x) e^{i n (x - f(x))}``.

    ``unitary=True`` inserts the amplitude ``sqrt(1 - f'(x))`` which makes
    the same-ray blocks of ``K* K`` the identity.
    """
    if M < 4 * max(phase.bandwidth, 1):
        raise PhaseError("truncation below four times the phase bandwidth")
    P = samples or 1 << int(math.ceil(math.log2(8 * M)))
    x = np.arange(P) * TWO_PI / P
    n = np.arange(-M, M + 1)
    K = np.empty((2 * M + 1, 2 * M + 1), dtype=complex)
    for r in RAYS:
        cols = n > 0 if r == "plus" else n <= 0
        f = phase.f(x, r)
        amp = np.sqrt(1 - phase.df(x, r)) if unitary else np.ones(P)
        vals = amp[:, None] * np.exp(-1j * np.outer(f, n[cols]))
        coef = np.fft.fft(vals, axis=0) / P
        # row m of column n is coefficient m - n
        rows = (n[:, None] - n[cols][None, :]) % P
        K[:, cols] = np.take_along_axis(coef, rows, axis=0)
    return FIOKernel(M, K, phase, contact_from_phase(phase), {"unitary": unitary, "samples": P})


def contact_from_kernel(K: np.ndarray, M: int, mode: int, samples: int = 256) -> ContactMap:
    """Read the base map off the phase of columns ``+-mode``.

    Column ``n`` is ``e^{i n y(x)}`` up to an amplitude, with ``y`` the inverse
    base map; its argument divided by ``n`` gives ``y`` up to ``2 pi / n``,
    and the neighbouring column resolves that ambiguity.
    """
    x = np.linspace(0, TWO_PI, samples, endpoint=False)
    n = np.arange(-M, M + 1)
    E = np.exp(1j * np.outer(x, n))
    inv = {}
    for r in RAYS:
        nn = RAY_SIGN[r] * mode
        u = E @ K[:, nn + M]
        # adjacent columns fix y mod 2 pi, column n alone only mod 2 pi / n
        coarse = np.angle((E @ K[:, nn + RAY_SIGN[r] + M]) * np.conj(u)) * RAY_SIGN[r]
        coarse = x + _wrap(coarse - x)
        fine = np.angle(u) / nn
        k = np.round((coarse - fine) * nn / TWO_PI)
        y = fine + TWO_PI * k / nn
        inv[r] = _wrap(y - x)
    return ContactMap(inv).inverse()


@dataclass
class EgorovReport:
    error: float
    M: int
    window: tuple
    condition: float

    def to_json(self) -> dict:
        return {"error": self.error, "M": self.M, "window": list(self.window), "condition": self.condition}


def principal_values(sym: ClassicalSymbol, x) -> dict:
    """Degree-0 component of an order-0 scalar symbol on each ray, sampled at ``x``."""
    out = {}
    for r in RAYS:
        lad = sym.plus if r == "plus" else sym.minus
        K = (lad.shape[1] - 1) // 2
        k = np.arange(-K, K + 1)
        out[r] = np.exp(1j * np.outer(x, k)) @ lad[0, :, 0, 0]
    return out


def conjugate(kernel: FIOKernel, A: np.ndarray) -> np.ndarray:
    """``K A K^{-1}`` by a linear solve."""
    KA = kernel.matrix @ A
    return np.linalg.solve(kernel.matrix.T, KA.T).T


def egorov_check(kernel: FIOKernel, a: ClassicalSymbol, depth: int = 4, bandwidth: int = 12,
                 window: tuple | None = None) -> EgorovReport:
    """Principal symbol of ``K Op(a) K^{-1}`` against ``a(chi^{-1}(x), ray)``."""
    if a.order != 0 or a.rank != 1:
        raise ValueError("egorovCheck expects a scalar order-0 symbol")
    M = kernel.M
    B = conjugate(kernel, quantize(a, M).dense())
    if window is None:
        window = (M // 8, M // 2)
    while True:
        try:
            sym, diag = extract_symbol(TruncatedOperator(M, 1, B), 0, depth, window, bandwidth)
            break
        except FitError:
            if window[1] - window[0] < 4 * depth:
                raise
            window = (window[0], window[0] + (window[1] - window[0]) // 2)
    x = np.linspace(0, TWO_PI, 128, endpoint=False)
    got = principal_values(sym, x)
    inv = kernel.contact.inverse()
    err = 0.0
    for r in RAYS:
        expected = principal_values(a, inv(x, r))[r]
        err = max(err, float(np.abs(got[r] - expected).max()))
    return EgorovReport(err, M, window, diag.condition)


@dataclass
class PseudoReport:
    symbol: ClassicalSymbol
    residual: float
    min_leading: float
    band_decay: float
    elliptic: bool

    def to_json(self) -> dict:
        return {
            "residual": self.residual,
            "minLeading": self.min_leading,
            "bandDecay": self.band_decay,
            "elliptic": self.elliptic,
        }


def pseudo_check(K: np.ndarray, M: int, depth: int = 4, bandwidth: int = 12, window: tuple | None = None,
                 tol: float = 1e-6) -> PseudoReport:
    """Fit ``K* K`` as a classical order-0 symbol and test ellipticity of the leading part."""
    D = K.conj().T @ K
    window = window or (M // 8, M // 2)
    sym, diag = extract_symbol(TruncatedOperator(M, 1, D), 0, depth, window, bandwidth)
    n = np.arange(-M, M + 1)
    mid = np.abs(n) <= M // 2
    band = [np.abs(np.diagonal(D, -k)[mid[abs(k):] if k >= 0 else mid[: len(mid) + k]]).max() for k in (0, bandwidth)]
    x = np.linspace(0, TWO_PI, 128, endpoint=False)
    lead = principal_values(sym, x)
    min_lead = float(min(np.abs(v).min() for v in lead.values()))
    decay = float(band[1] / band[0])
    ok = diag.residual < tol and decay < tol and min_lead > 1e-3
    return PseudoReport(sym, diag.residual, min_lead, decay, ok)


def kk_leading_oracle(phase: PhaseFunction, x) -> dict:
    """Leading symbol of ``K* K`` without amplitude: ``1/(1 - f'(g(y)))`` with ``g`` the base map."""
    cm = contact_from_phase(phase)
    return {r: 1.0 / (1.0 - phase.df(cm(x, r), r)) for r in RAYS}
