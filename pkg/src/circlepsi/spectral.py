"""Fourier-mode model of pseudodifferential operators on L^2(S^1, C^N).

Operators are truncated to modes ``-M..M`` and stored as sparse matrices with
mode-major, fiber-minor indexing.  Regularized traces are computed by an exact
head sum plus an analytic tail obtained from fitted diagonal power laws and
Hurwitz zeta continuation.
"""

from __future__ import annotations

import hashlib
import logging
import os
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy.sparse as sp

from .symbols import RAY_SIGN, RAYS, ClassicalSymbol, LogSymbol, residue_trace, star_compose

log = logging.getLogger(__name__)

# Tr_Q([A,B]) = SIGMA * rTr(delta_Q(A) B) with rTr the Wodzicki residue
# (residue at s=0 of Tr(A Q^{-s})).  Pinned by tests/test_spectral.py.
SIGMA = -1

MAX_CONDITION = 1e8


class FitError(RuntimeError):
    """Raised when an asymptotic fit is ill-conditioned or inaccurate."""


class TruncatedOperator:
    """Operator on modes ``-M..M`` with ``N``-dimensional fibers."""

    __slots__ = ("M", "N", "matrix", "meta")

    def __init__(self, M: int, N: int, matrix, meta: str | None = None):
        size = (2 * M + 1) * N
        if matrix.shape != (size, size):
            raise ValueError(f"matrix shape {matrix.shape} does not match M={M}, N={N}")
        self.M = M
        self.N = N
        self.matrix = sp.csr_matrix(matrix) if not sp.issparse(matrix) else matrix.tocsr()
        self.meta = meta

    @classmethod
    def identity(cls, M, N=1):
        return cls(M, N, sp.identity((2 * M + 1) * N, dtype=complex, format="csr"), "Id")

    @classmethod
    def diagonal(cls, values, N=1, meta=None):
        values = np.asarray(values, dtype=complex)
        M = (len(values) - 1) // 2
        return cls(M, N, sp.diags(np.repeat(values, N)).tocsr(), meta)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def block(self, m: int, n: int) -> np.ndarray:
        i, j = (m + self.M) * self.N, (n + self.M) * self.N
        return self.matrix[i : i + self.N, j : j + self.N].toarray()

    def band(self, k: int) -> np.ndarray:
        """Blocks ``A[n+k, n]`` for all admissible ``n``, as an array indexed by ``n + M``."""
        N, M = self.N, self.M
        out = np.zeros((2 * M + 1, N, N), dtype=complex)
        coo = self.matrix.tocoo()
        rm, cm = coo.row // N, coo.col // N
        sel = rm - cm == k
        np.add.at(out, (cm[sel], coo.row[sel] % N, coo.col[sel] % N), coo.data[sel])
        return out

    def diagonal_trace(self) -> np.ndarray:
        """Fiber trace of each diagonal block, indexed by mode ``-M..M``."""
        d = self.matrix.diagonal()
        return d.reshape(2 * self.M + 1, self.N).sum(axis=1)

    def adjoint(self) -> TruncatedOperator:
        return TruncatedOperator(self.M, self.N, self.matrix.conj().T.tocsr(), self.meta)

    def _check(self, other):
        if (self.M, self.N) != (other.M, other.N):
            raise ValueError("operators live on different truncations")

    def __matmul__(self, other: TruncatedOperator) -> TruncatedOperator:
        self._check(other)
        return TruncatedOperator(self.M, self.N, self.matrix @ other.matrix)

    def __add__(self, other):
        self._check(other)
        return TruncatedOperator(self.M, self.N, self.matrix + other.matrix)

    def __sub__(self, other):
        self._check(other)
        return TruncatedOperator(self.M, self.N, self.matrix - other.matrix)

    def __mul__(self, c):
        return TruncatedOperator(self.M, self.N, self.matrix * c, self.meta)

    __rmul__ = __mul__

    def trace(self) -> complex:
        return complex(self.matrix.diagonal().sum())


def commutator_diagonal(A: TruncatedOperator, B: TruncatedOperator) -> np.ndarray:
    """Fiber-traced diagonal of ``AB - BA`` without forming the full product."""
    A._check(B)
    ab = A.matrix.multiply(B.matrix.T).sum(axis=1)
    ba = B.matrix.multiply(A.matrix.T).sum(axis=1)
    d = np.asarray(ab - ba).ravel()
    return d.reshape(2 * A.M + 1, A.N).sum(axis=1)


def quantize(a: ClassicalSymbol, M: int) -> TruncatedOperator:
    """Kohn-Nirenberg quantization ``A[m, n] = a_hat_{m-n}(n)``.

    At ``n = 0`` only the degree-0 components contribute, averaged over the
    two rays; every other term is cut off there.
    """
    K, N = a.bandwidth, a.rank
    if K >= M:
        raise ValueError(f"symbol bandwidth {K} exceeds mode cutoff {M}")
    n = np.arange(-M, M + 1)
    absn = np.abs(n).astype(float)
    absn[M] = 1.0
    rows, cols, vals = [], [], []
    fi, fj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    for ray in RAYS:
        sel = n > 0 if ray == "plus" else n < 0
        ns = n[sel]
        powers = np.stack([absn[sel] ** (a.order - j) for j in range(a.depth)])  # (J, len)
        ladder = a.ray(ray)
        for k in range(-K, K + 1):
            coef = ladder[:, k + K]  # (J, N, N)
            if not coef.any():
                continue
            ok = np.abs(ns + k) <= M
            blocks = np.einsum("jn,jab->nab", powers[:, ok], coef)
            cols_n, rows_n = ns[ok], ns[ok] + k
            rows.append(((rows_n + M)[:, None, None] * N + fi[None]).ravel())
            cols.append(((cols_n + M)[:, None, None] * N + fj[None]).ravel())
            vals.append(blocks.ravel())
    j0 = a.order  # index of the degree-0 component, if the ladder has one
    if abs(j0 - round(np.real(j0))) < 1e-12 and 0 <= round(np.real(j0)) < a.depth:
        # xi = 0 continuation: ray average of the degree-0 part, so multiplication
        # operators (and Id) quantize exactly
        j0 = int(round(np.real(j0)))
        for k in range(-K, K + 1):
            blk = 0.5 * (a.plus[j0, k + K] + a.minus[j0, k + K])
            if blk.any() and abs(k) <= M:
                rows.append(((k + M) * N + fi).ravel())
                cols.append((M * N + fj).ravel())
                vals.append(blk.ravel())
    size = (2 * M + 1) * N
    if rows:
        mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    else:
        mat = sp.coo_matrix((size, size), dtype=complex)
    return TruncatedOperator(M, N, mat.tocsr(), meta=repr(a))


@dataclass
class FitDiagnostics:
    condition: float
    residual: float
    window: tuple


@dataclass
class ZetaTail:
    """Fitted coefficients ``c_j`` of ``d_n ~ sum_j c_j |n|^{alpha_j}`` on one ray."""

    exponents: np.ndarray
    coeffs: np.ndarray
    window: tuple
    residual: float
    condition: float


def _fit_powers(n: np.ndarray, y: np.ndarray, exponents) -> tuple:
    """Least squares ``y ~ sum c_j n^{alpha_j}`` in the scaled variable ``t = n0/n``.

    ``y`` may carry trailing axes; returns coefficients, condition number and
    the max residual.
    """
    n = np.asarray(n, dtype=float)
    n0 = n.min()
    lead = exponents[0]
    # columns n^{alpha_j} = n0^{alpha_j} * (n/n0)^{lead} * t^{lead - alpha_j}
    t = n0 / n
    V = np.stack([(n / n0) ** lead * t ** (lead - e) for e in exponents], axis=1).astype(complex)
    scale = np.linalg.norm(V, axis=0)
    Vs = V / scale
    cond = float(np.linalg.cond(Vs))
    Y = y.reshape(len(n), -1)
    sol, *_ = np.linalg.lstsq(Vs, Y, rcond=None)
    resid = float(np.abs(Vs @ sol - Y).max()) if Y.size else 0.0
    coeffs = sol / scale[:, None] / np.array([n0 ** complex(e) for e in exponents])[:, None]
    return coeffs.reshape((len(exponents),) + y.shape[1:]), cond, resid


def extract_symbol(
    A: TruncatedOperator, order, depth: int, window: tuple | None = None, bandwidth: int | None = None
) -> tuple[ClassicalSymbol, FitDiagnostics]:
    """Recover the retained symbol components of ``A`` from its band-diagonal asymptotics."""
    M, N = A.M, A.N
    if window is None:
        window = (max(M // 4, 1), M - (bandwidth or 8))
    n_lo, n_hi = window
    if not 1 <= n_lo < n_hi <= M:
        raise FitError(f"invalid fit window {window}")
    if n_hi - n_lo + 1 < depth:
        raise FitError("fit window shorter than the requested depth")
    K = bandwidth if bandwidth is not None else _detect_bandwidth(A)
    exps = [order - j for j in range(depth)]
    ladders = {r: np.zeros((depth, 2 * K + 1, N, N), dtype=complex) for r in RAYS}
    worst_cond, worst_res = 0.0, 0.0
    idx = np.arange(n_lo, n_hi + 1)
    for k in range(-K, K + 1):
        band = A.band(k)
        for ray in RAYS:
            ns = idx * RAY_SIGN[ray]
            ok = np.abs(ns + k) <= M
            if ok.sum() < depth:
                raise FitError("fit window too close to the truncation edge")
            y = band[ns[ok] + M]
            coeffs, cond, res = _fit_powers(idx[ok], y, exps)
            worst_cond = max(worst_cond, cond)
            worst_res = max(worst_res, res)
            ladders[ray][:, k + K] = coeffs
    if worst_cond > MAX_CONDITION:
        raise FitError(f"ill-conditioned symbol fit (condition number {worst_cond:.3e})")
    sym = ClassicalSymbol(order, ladders["plus"], ladders["minus"])
    return sym, FitDiagnostics(worst_cond, worst_res, (n_lo, n_hi))


def _detect_bandwidth(A: TruncatedOperator) -> int:
    coo = A.matrix.tocoo()
    if coo.nnz == 0:
        return 0
    return int(np.abs(coo.row // A.N - coo.col // A.N).max())


# -- regularized traces ---------------------------------------------------------


@dataclass(frozen=True)
class QSpec:
    """Regularizing data ``log Q = log <D> + shift`` with an x-independent shift.

    ``shift_plus``/``shift_minus`` give the ladder ``sum_j v_j |xi|^{shift_order - j}``.
    """

    shift_order: float = -1.0
    shift_plus: tuple = ()
    shift_minus: tuple = ()

    @property
    def is_standard(self) -> bool:
        return not any(self.shift_plus) and not any(self.shift_minus)

    def shift_symbol(self, rank=1) -> ClassicalSymbol | None:
        if self.is_standard:
            return None
        return ClassicalSymbol.scalar_ladder(
            self.shift_order, list(self.shift_plus), list(self.shift_minus), rank=rank
        )

    def log_symbol(self, depth: int, rank: int = 1) -> LogSymbol:
        shift = self.shift_symbol(rank)
        if shift is not None and shift.depth < depth:
            shift = ClassicalSymbol.scalar_ladder(
                self.shift_order,
                list(self.shift_plus) + [0.0] * (depth - shift.depth),
                list(self.shift_minus) + [0.0] * (depth - shift.depth),
                rank=rank,
            )
        return LogSymbol.of_japanese(depth, rank=rank, shift=shift)

    def shift_values(self, n: np.ndarray) -> np.ndarray:
        """Spectral values of the shift at modes ``n`` (zero at ``n = 0``)."""
        out = np.zeros(len(n), dtype=complex)
        absn = np.abs(n).astype(float)
        for vals, sel in ((self.shift_plus, n > 0), (self.shift_minus, n < 0)):
            for j, v in enumerate(vals):
                out[sel] += v * absn[sel] ** (self.shift_order - j)
        return out

    def shift_values_mp(self, modes) -> list:
        out = []
        for n in modes:
            vals = self.shift_plus if n > 0 else self.shift_minus
            m = mpmath.mpf(abs(int(n)))
            out.append(mpmath.fsum(mpmath.mpf(v) * m ** (self.shift_order - j) for j, v in enumerate(vals)))
        return out

    def to_json(self) -> dict:
        return {
            "shift_order": self.shift_order,
            "shift_plus": list(self.shift_plus),
            "shift_minus": list(self.shift_minus),
        }


STANDARD_Q = QSpec()

# P = (1/2)|xi|^{-1} on both rays, rTr(P) = 1
NORMALIZER = (0.5,)


@dataclass
class RegularizedTraceResult:
    residue: complex
    finite_part: complex
    error_estimate: float
    tails: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "residue": [self.residue.real, self.residue.imag],
            "finitePart": [self.finite_part.real, self.finite_part.imag],
            "errorEstimate": self.error_estimate,
        }


def _tail_sum(coeffs, exponents, start: int) -> tuple:
    """Residue and finite part at s=0 of ``sum_{n>=start} sum_j c_j n^{alpha_j} <n>^{-s}``."""
    res, fp = mpmath.mpc(0), mpmath.mpc(0)
    for c, a in zip(coeffs, exponents):
        a = mpmath.mpc(complex(a))
        ai = complex(a)
        if abs(ai + 1) < 1e-12:
            res += c
            fp += -c * mpmath.digamma(start)
        else:
            fp += c * mpmath.zeta(-a, start)
        # binomial corrections from <n>^{-s} = n^{-s}(1 + n^{-2})^{-s/2}
        if abs(ai.imag) < 1e-12 and ai.real > 0.5:
            kk = (ai.real + 1) / 2
            if abs(kk - round(kk)) < 1e-12:
                k = int(round(kk))
                fp += c * mpmath.mpf((-1) ** k) / (2 * k)
    return res, fp


def _default_terms(order: float, start: int, tol: float = 1e-12) -> int:
    """Enough fitted powers that the omitted tail ``start^{order - T + 1}`` is below ``tol``."""
    T = 1
    while start ** (order - T + 1) > tol and T < 24:
        T += 1
    return T


def _to_ld(z) -> np.clongdouble:
    """mpmath or python number -> complex longdouble, keeping ~two doubles of precision."""
    z = mpmath.mpc(z)
    out = []
    for part in (z.real, z.imag):
        hi = float(part)
        lo = float(part - hi)
        out.append(np.longdouble(hi) + np.longdouble(lo))
    return np.clongdouble(out[0]) + np.clongdouble(1j) * out[1]


def _to_mp(z) -> mpmath.mpc:
    parts = []
    for part in (np.real(z), np.imag(z)):
        hi = float(part)
        lo = float(part - np.longdouble(hi))
        parts.append(mpmath.mpf(hi) + mpmath.mpf(lo))
    return mpmath.mpc(*parts)


def _fit_powers_ld(n, y, exponents, sweeps: int = 4):
    """Least squares ``y ~ sum c_j n^{alpha_j}`` with column scaling.

    A float64 QR factorization is refined with residuals evaluated in
    extended precision, so the coefficients are accurate well beyond double
    rounding as long as the scaled design matrix is reasonably conditioned.
    Returns mp coefficients, the condition number and the max residual.
    """
    n = np.asarray(n)
    n0 = np.longdouble(int(n.min()))
    r = np.asarray(n, dtype=np.longdouble) / n0
    logr = np.log(r)
    cols = []
    for e in exponents:
        e = complex(e)
        if e.imag == 0:
            cols.append(r ** np.longdouble(e.real) + np.clongdouble(0))
        else:
            cols.append(np.exp((np.longdouble(e.real) + np.clongdouble(1j) * np.longdouble(e.imag)) * logr))
    V = np.stack(cols, axis=1)
    scale = np.sqrt((np.abs(V) ** 2).sum(axis=0))
    Vs = V / scale
    Vf = Vs.astype(complex)
    Q, R = np.linalg.qr(Vf)
    cond = float(np.linalg.cond(R))
    Y = np.asarray(y, dtype=np.clongdouble)
    c = np.zeros(len(exponents), dtype=np.clongdouble)
    for _ in range(sweeps):
        resid = Y - Vs @ c
        dc = np.linalg.solve(R, Q.conj().T @ resid.astype(complex))
        c = c + dc.astype(np.clongdouble)
    resid = float(np.abs(Y - Vs @ c).max())
    coeffs = [
        _to_mp(c[j] / scale[j]) / mpmath.mpf(int(n0)) ** mpmath.mpc(complex(e)) for j, e in enumerate(exponents)
    ]
    return coeffs, cond, resid


def _design_condition(n, exponents) -> float:
    r = np.asarray(n, dtype=float) / float(min(n))
    V = np.stack([r ** complex(e) for e in exponents], axis=1)
    return float(np.linalg.cond(V / np.linalg.norm(V, axis=0)))


def sample_modes(window: tuple, count: int = 96) -> np.ndarray:
    """Geometrically spaced fit nodes covering a window, endpoints included."""
    lo, hi = window
    pts = np.unique(np.round(np.geomspace(lo, hi, count)).astype(int))
    return pts


def _memoized(sampler):
    seen = {}

    def wrapped(modes):
        missing = [int(m) for m in modes if int(m) not in seen]
        if missing:
            seen.update(zip(missing, sampler(missing)))
        return [seen[int(m)] for m in modes]

    return wrapped


def regularized_trace(
    A,
    order: float,
    q: QSpec = STANDARD_Q,
    window: tuple | None = None,
    terms: int | None = None,
    sampler=None,
    cache: FitCache | None = None,
) -> RegularizedTraceResult:
    """Residue and finite part at ``s = 0`` of ``Tr(A Q^{-s})``.

    ``A`` is a :class:`TruncatedOperator` or its fiber-traced diagonal (an
    array over modes ``-M..M``).  ``order`` bounds the real order of the
    diagonal asymptotics.  The modes ``|n| < n0`` are summed exactly; the
    remainder is continued analytically from a power-law fit on the window
    ``[n0, n1]``.  ``sampler(modes)`` may supply the diagonal at fit nodes in
    extended precision (a list of mpmath numbers); otherwise the float
    diagonal is used.
    """
    d = A.diagonal_trace() if isinstance(A, TruncatedOperator) else np.asarray(A, dtype=complex)
    M = (len(d) - 1) // 2
    if window is None:
        window = (max(M // 4, 1), M - 16 if M > 64 else M)
    key = None
    if cache is not None:
        key = cache.key(d, M, window[0], order, (terms, q.to_json()))
        hit = cache.load(key)
        if hit is not None:
            return hit
    if sampler is not None:
        sampler = _memoized(sampler)
    with mpmath.workdps(40):
        base = _standard_trace(d, order, window, terms, sampler, None)
        if not q.is_standard:
            # e^{-s shift}: the finite part picks up -Res(d * shift)
            n = np.arange(-M, M + 1)
            shifted_sampler = None
            if sampler is not None:

                def shifted_sampler(modes):
                    return [v * w for v, w in zip(sampler(modes), q.shift_values_mp(modes))]

            shifted = _standard_trace(
                d * q.shift_values(n), order + q.shift_order, window, terms, shifted_sampler, q
            )
            base = RegularizedTraceResult(
                base.residue,
                base.finite_part - shifted.residue,
                base.error_estimate + shifted.error_estimate,
                base.tails,
            )
    if cache is not None:
        cache.store(key, base)
    return base


def _standard_trace(d, order, window, terms, sampler, q) -> RegularizedTraceResult:
    M = (len(d) - 1) // 2
    n_lo, n_hi = window
    if not 1 <= n_lo < n_hi <= M:
        raise FitError(f"invalid fit window {window}")
    idx = sample_modes(window)
    if terms is None:
        terms = _default_terms(float(np.real(order)), n_lo)
        # keep every divergent power plus two, shed the rest until the fit is well posed
        floor = max(int(np.floor(np.real(order))) + 3, 2)
        while terms > floor and _design_condition(idx, [order - j for j in range(terms)]) > MAX_CONDITION:
            terms -= 1
    if len(idx) < terms + 4:
        raise FitError("fit window too short for the requested number of terms")
    head = _to_mp(np.sum(np.asarray(d[M - n_lo + 1 : M + n_lo], dtype=np.clongdouble)))
    residue, fp, err = mpmath.mpc(0), head, 0.0
    tails = {}
    for ray in RAYS:
        modes = RAY_SIGN[ray] * idx
        if sampler is not None:
            y = np.array([_to_ld(v) for v in sampler(modes)], dtype=np.clongdouble)
        else:
            y = np.asarray(d[M + modes], dtype=np.clongdouble)
        results = []
        for T in (terms, terms + 2):
            exps = [order - j for j in range(T)]
            coeffs, cond, resid = _fit_powers_ld(idx, y, exps)
            r, f = _tail_sum(coeffs, exps, n_lo)
            results.append((r, f, coeffs, exps, cond, resid))
        r, f, coeffs, exps, cond, resid = results[0]
        if cond > MAX_CONDITION:
            raise FitError(f"ill-conditioned tail fit (condition number {cond:.3e})")
        residue += r
        fp += f
        err += float(abs(results[1][0] - r) + abs(results[1][1] - f))
        tails[ray] = ZetaTail(
            np.array(exps), np.array([complex(c) for c in coeffs]), (n_lo, n_hi), resid, cond
        )
    if sampler is None:
        # rounding in the float head and fit data
        err += 4e-16 * float(np.abs(d[M - n_hi : M + n_hi + 1]).sum())
    return RegularizedTraceResult(complex(residue), complex(fp), err, tails)


def normalize_q(q: QSpec = STANDARD_Q) -> QSpec:
    """Return ``Q'`` with ``Tr_{Q'}(Id) = 1`` by shifting ``log Q`` along ``-P``.

    Idempotent: the current value of ``Tr_Q(Id)`` is read off in closed form
    and only the missing amount is added.
    """
    current = regularized_trace_identity(q)
    lam = 1.0 - current
    if abs(lam) < 1e-14:
        return q
    plus = _add_ladders(q.shift_plus, [-lam * v for v in NORMALIZER], q.shift_order)
    minus = _add_ladders(q.shift_minus, [-lam * v for v in NORMALIZER], q.shift_order)
    return QSpec(q.shift_order, tuple(plus), tuple(minus))


def _add_ladders(a, b, order):
    if order != -1.0:
        raise ValueError("normalization shifts are stored at order -1")
    n = max(len(a), len(b))
    a = list(a) + [0.0] * (n - len(a))
    b = list(b) + [0.0] * (n - len(b))
    return [float(np.real(x + y)) for x, y in zip(a, b)]


def regularized_trace_identity(q: QSpec) -> float:
    """``Tr_Q(Id)`` in closed form: ``1 + 2 zeta(0) = 0`` minus the residue of the shift."""
    res = 0.0
    for vals in (q.shift_plus, q.shift_minus):
        j = int(round(q.shift_order + 1))  # index of the |xi|^{-1} coefficient
        if 0 <= j < len(vals):
            res += vals[j]
    return -res


def q_power_diagonal(s: float, M: int) -> np.ndarray:
    """Exact spectral diagonal of ``<D>^s``."""
    n = np.arange(-M, M + 1, dtype=float)
    return (1.0 + n * n) ** (s / 2)


# -- trace defect ----------------------------------------------------------------


@dataclass
class TraceDefectReport:
    lhs: complex
    rhs: complex
    gap: float
    M: int
    error_estimate: float

    def to_json(self) -> dict:
        return {
            "lhs": [self.lhs.real, self.lhs.imag],
            "rhs": [self.rhs.real, self.rhs.imag],
            "gap": self.gap,
            "M": self.M,
            "errorEstimate": self.error_estimate,
        }


def _band_value_mp(a: ClassicalSymbol, k: int, n: int):
    """Quantized block ``A[n+k, n] = a_hat_k(n)`` as an mpmath matrix."""
    N, K = a.rank, a.bandwidth
    out = mpmath.zeros(N, N)
    if abs(k) > K:
        return out
    if n == 0:
        j0 = a.order
        if abs(j0 - round(np.real(j0))) < 1e-12 and 0 <= round(np.real(j0)) < a.depth:
            blk = 0.5 * (a.plus[int(round(np.real(j0))), k + K] + a.minus[int(round(np.real(j0))), k + K])
            for r in range(N):
                for s in range(N):
                    out[r, s] = mpmath.mpc(complex(blk[r, s]))
        return out
    ladder = a.plus if n > 0 else a.minus
    absn = mpmath.mpf(abs(n))
    for j in range(a.depth):
        c = ladder[j, k + K]
        if not c.any():
            continue
        p = absn ** mpmath.mpc(complex(a.order - j))
        for r in range(N):
            for s in range(N):
                if c[r, s] != 0:
                    out[r, s] += mpmath.mpc(complex(c[r, s])) * p
    return out


def commutator_diagonal_mp(a: ClassicalSymbol, b: ClassicalSymbol, modes, M: int) -> list:
    """Fiber-traced diagonal of ``[quantize(a), quantize(b)]`` at the given modes, in mpmath.

    Evaluates the same matrix entries as :func:`quantize` without rounding
    them to float, so the cancellation of leading orders in the commutator
    does not destroy the subleading data the zeta tail depends on.
    """
    K = a.bandwidth + b.bandwidth
    out = []
    for n in modes:
        n = int(n)
        acc = mpmath.mpc(0)
        for k in range(-K, K + 1):
            if abs(n + k) > M:
                continue
            # (AB)_{nn} = sum_k A[n, n+k] B[n+k, n]
            ab = _band_value_mp(a, -k, n + k) * _band_value_mp(b, k, n)
            ba = _band_value_mp(b, -k, n + k) * _band_value_mp(a, k, n)
            for r in range(a.rank):
                acc += ab[r, r] - ba[r, r]
        out.append(acc)
    return out


def trace_defect_check(
    a: ClassicalSymbol, b: ClassicalSymbol, M: int = 2048, q: QSpec = STANDARD_Q, window=None, cache=None
) -> TraceDefectReport:
    """Compare ``Tr_Q([A,B])`` spectrally against ``SIGMA * rTr(delta_Q(a) b)`` symbolically."""
    from .symbols import log_derivation

    A, B = quantize(a, M), quantize(b, M)
    d = commutator_diagonal(A, B)
    order = float(np.real(a.order + b.order))
    K = a.bandwidth + b.bandwidth
    if window is None:
        window = (M // 4, M - 2 * K - 8)
    with mpmath.workdps(40):
        lhs_res = regularized_trace(
            d, order, q, window=window, sampler=lambda modes: commutator_diagonal_mp(a, b, modes, M), cache=cache
        )
    depth = min(a.depth, b.depth)
    lq = q.log_symbol(depth, rank=a.rank)
    rhs = SIGMA * residue_trace(star_compose(log_derivation(a, lq), b))
    lhs = lhs_res.finite_part
    return TraceDefectReport(lhs, rhs, abs(lhs - rhs), M, lhs_res.error_estimate)


def shift_check(a: ClassicalSymbol, q_from: QSpec, q_to: QSpec, M: int = 2048) -> tuple[complex, complex]:
    """``Tr_{Q'}(A) - Tr_Q(A)`` spectrally versus ``SIGMA * rTr(A (log Q' - log Q))``."""
    A = quantize(a, M)
    d = A.diagonal_trace()
    order = float(np.real(a.order))
    w = (M // 4, M - 16)
    lhs = regularized_trace(d, order, q_to, window=w).finite_part - regularized_trace(d, order, q_from, window=w).finite_part
    depth = a.depth
    diff = _shift_difference(q_from, q_to, depth, a.rank)
    rhs = 0j if diff is None else SIGMA * residue_trace(star_compose(a, diff.truncate(min(depth, diff.depth))))
    return lhs, rhs


def _shift_difference(q_from: QSpec, q_to: QSpec, depth: int, rank: int) -> ClassicalSymbol | None:
    a = q_to.log_symbol(depth, rank).classical
    b = q_from.log_symbol(depth, rank).classical
    diff = a - b
    return diff


# -- fit cache -------------------------------------------------------------------


class FitCache:
    """Binary cache of regularized-trace fits keyed by diagonal hash, ``M`` and ``n0``."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    @staticmethod
    def key(d: np.ndarray, M: int, n0: int, order, terms) -> str:
        h = hashlib.sha256(np.ascontiguousarray(d, dtype=complex).tobytes())
        h.update(f"{M}:{n0}:{complex(order)}:{terms}".encode())
        return h.hexdigest()

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, f"{key}.npz")

    def load(self, key: str) -> RegularizedTraceResult | None:
        path = self._path(key)
        if not os.path.exists(path):
            return None
        try:
            with np.load(path) as z:
                return RegularizedTraceResult(complex(z["residue"]), complex(z["finite_part"]), float(z["error"]))
        except Exception as exc:  # corrupted entries are rebuilt
            warnings.warn(f"discarding corrupted fit cache entry {path}: {exc}", RuntimeWarning, stacklevel=2)
            os.remove(path)
            return None

    def store(self, key: str, result: RegularizedTraceResult) -> None:
        np.savez(
            self._path(key),
            residue=np.complex128(result.residue),
            finite_part=np.complex128(result.finite_part),
            error=np.float64(result.error_estimate),
        )
