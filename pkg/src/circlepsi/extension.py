"""Geometry of the central extension: connection, curvature and the pair form.

Group elements are dense truncated matrices on modes ``-M..M``.  Forms are
evaluated on parameter families ``F(t)``, ``t`` in ``R^p``, whose partial
derivatives are either exact or central differences.

Conventions (see ``CURVATURE_FACTOR`` and :data:`circlepsi.spectral.SIGMA`):

* ``A_Q(v) = Tr_Q(Theta(v))`` with ``Theta = F^{-1} dF``;
* ``Omega_Q = dA_Q``; at a point, ``Omega_Q(v1, v2) = -Tr_Q([Theta(v1), Theta(v2)])``,
  which equals ``CURVATURE_FACTOR * rTr(delta_Q Theta ^ Theta)`` with ``rTr`` the
  residue trace in the convention ``rTr = SIGMA * Wodzicki``;
* ``alpha_Q = delta A_Q`` (simplicial coboundary), evaluated as
  ``rTr((delta_Q F2) F2^{-1} Theta_1)``.

Wedge products follow ``(b ^ c)(v1, v2) = b(v1) c(v2) - b(v2) c(v1)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy.linalg as sla

from . import spectral
from .spectral import SIGMA, QSpec, normalize_q, regularized_trace
from .symbols import ClassicalSymbol, log_derivation, residue_trace, star_compose

CURVATURE_FACTOR = -0.5


@dataclass(frozen=True)
class Space:
    """Truncation ``-M..M`` with fiber rank ``N`` and normalized regularization data."""

    M: int = 128
    N: int = 1
    q: QSpec = field(default_factory=normalize_q)
    margin: int | None = None

    @property
    def size(self) -> int:
        return (2 * self.M + 1) * self.N

    @property
    def window(self) -> tuple:
        margin = self.margin if self.margin is not None else max(self.M // 8, 16)
        return (self.M // 4, self.M - margin)

    def modes(self) -> np.ndarray:
        return np.repeat(np.arange(-self.M, self.M + 1), self.N)

    def log_q(self) -> np.ndarray:
        """Spectral values of ``log Q`` on the (mode, fiber) index."""
        n = np.arange(-self.M, self.M + 1)
        vals = 0.5 * np.log1p(n.astype(float) ** 2) + self.q.shift_values(n)
        return np.repeat(vals, self.N)

    def quantize(self, a: ClassicalSymbol) -> np.ndarray:
        if a.rank != self.N:
            raise ValueError("symbol rank does not match the fiber rank")
        return spectral.quantize(a, self.M).dense()

    def diag(self, X: np.ndarray) -> np.ndarray:
        return np.diagonal(X).reshape(2 * self.M + 1, self.N).sum(axis=1)

    def tr_q(self, X: np.ndarray, order: float = 0) -> complex:
        return regularized_trace(self.diag(X), order, self.q, window=self.window).finite_part

    def rtr(self, X: np.ndarray, order: float = 0) -> complex:
        """Residue trace of a matrix in the library convention ``SIGMA * Wodzicki``."""
        return SIGMA * regularized_trace(self.diag(X), order, window=self.window).residue

    def delta(self, X: np.ndarray) -> np.ndarray:
        """``[log Q, X]`` computed entrywise on the spectral side."""
        L = self.log_q()
        return (L[:, None] - L[None, :]) * X


class Family:
    """Smooth family ``t -> F(t)`` of invertible matrices with ``p`` parameters."""

    def __init__(self, dim: int, value, partials=None, h: float = 1e-3):
        self.dim = dim
        self._value = value
        self._partials = partials
        self.h = h

    def value(self, t) -> np.ndarray:
        return self._value(np.asarray(t, dtype=float))

    def partials(self, t) -> list:
        t = np.asarray(t, dtype=float)
        if self._partials is not None:
            return self._partials(t)
        out = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = self.h
            out.append((self._value(t + e) - self._value(t - e)) / (2 * self.h))
        return out

    def numeric(self, h: float | None = None) -> Family:
        """Same family with derivatives replaced by central differences of step ``h``."""
        return Family(self.dim, self._value, None, self.h if h is None else h)

    def __mul__(self, other: Family) -> Family:
        if self.dim != other.dim:
            raise ValueError("families must share the parameter space")

        def value(t):
            return self.value(t) @ other.value(t)

        def partials(t):
            F, G = self.value(t), other.value(t)
            return [dF @ G + F @ dG for dF, dG in zip(self.partials(t), other.partials(t))]

        exact = self._partials is not None and other._partials is not None
        return Family(self.dim, value, partials if exact else None, min(self.h, other.h))

    def premultiply(self, G: np.ndarray) -> Family:
        exact = self._partials is not None
        return Family(
            self.dim,
            lambda t: G @ self.value(t),
            (lambda t: [G @ d for d in self.partials(t)]) if exact else None,
            self.h,
        )

    def phase(self, theta, dtheta) -> Family:
        """``e^{i theta(t)} F(t)`` for a scalar function ``theta`` with gradient ``dtheta``."""

        def value(t):
            return np.exp(1j * theta(t)) * self.value(t)

        def partials(t):
            ph = np.exp(1j * theta(t))
            F = self.value(t)
            return [ph * (dF + 1j * g * F) for dF, g in zip(self.partials(t), dtheta(t))]

        return Family(self.dim, value, partials if self._partials is not None else None, self.h)


def exp_family(B: np.ndarray, dim: int = 1, index: int = 0) -> Family:
    """``F(t) = exp(t_index B)`` with exact derivatives."""

    @functools.lru_cache(maxsize=64)
    def expm_at(s: float) -> np.ndarray:
        out = sla.expm(s * B)
        out.flags.writeable = False
        return out

    def value(t):
        return expm_at(float(t[index]))

    def partials(t):
        F = value(t)
        return [B @ F if i == index else np.zeros_like(F) for i in range(dim)]

    return Family(dim, value, partials)


def exp_sum_family(generators) -> Family:
    """``F(t) = exp(sum_i t_i B_i)`` with exact (Frechet) derivatives."""
    gens = [np.asarray(B) for B in generators]
    dim = len(gens)

    @functools.lru_cache(maxsize=64)
    def frechet_at(t: tuple):
        X = sum(ti * B for ti, B in zip(t, gens))
        F = sla.expm(X)
        return F, [sla.expm_frechet(X, B, compute_expm=False) for B in gens]

    def value(t):
        return frechet_at(tuple(float(x) for x in t))[0]

    def partials(t):
        return frechet_at(tuple(float(x) for x in t))[1]

    return Family(dim, value, partials)


def constant_family(G: np.ndarray, dim: int = 1) -> Family:
    return Family(dim, lambda t: G, lambda t: [np.zeros_like(G)] * dim)


def central_family(size: int, dim: int = 1, weights=None) -> Family:
    """``exp(i <w, t>) Id``."""
    w = np.ones(dim) if weights is None else np.asarray(weights, dtype=float)

    def value(t):
        return np.exp(1j * w @ t) * np.eye(size)

    def partials(t):
        return [1j * wi * value(t) for wi in w]

    return Family(dim, value, partials)


def maurer_cartan(fam: Family, t, v) -> np.ndarray:
    """``Theta(v) = F(t)^{-1} dF(t)[v]``."""
    F = fam.value(t)
    dF = sum(vi * P for vi, P in zip(np.atleast_1d(v), fam.partials(t)))
    try:
        return np.linalg.solve(F, dF)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"family is singular at t={t}") from exc


def connection_aq(fam: Family, t, v, space: Space) -> complex:
    """``A_Q(v) = Tr_Q(Theta(v))``."""
    return space.tr_q(maurer_cartan(fam, t, v))


def omega_at(X: np.ndarray, Y: np.ndarray, space: Space) -> complex:
    """``Omega_Q`` on Lie algebra elements given as matrices: ``-Tr_Q([X, Y])``."""
    return -space.tr_q(X @ Y - Y @ X)


def curvature_at(fam: Family, t, v1, v2, space: Space) -> complex:
    return omega_at(maurer_cartan(fam, t, v1), maurer_cartan(fam, t, v2), space)


@dataclass
class CurvatureReport:
    residue_value: complex
    trace_value: complex
    gap: float

    def to_json(self) -> dict:
        return {
            "residueValue": [self.residue_value.real, self.residue_value.imag],
            "traceValue": [self.trace_value.real, self.trace_value.imag],
            "gap": self.gap,
        }


def curvature_residue_form(psi1: ClassicalSymbol, psi2: ClassicalSymbol, q: QSpec) -> complex:
    """``CURVATURE_FACTOR * rTr(delta psi1 psi2 - delta psi2 psi1)`` from symbols."""
    depth = min(psi1.depth, psi2.depth)
    lq = q.log_symbol(depth, rank=psi1.rank)
    form = star_compose(log_derivation(psi1, lq), psi2) - star_compose(log_derivation(psi2, lq), psi1)
    return CURVATURE_FACTOR * SIGMA * residue_trace(form)


def curvature_omega_q(
    psi1: ClassicalSymbol, psi2: ClassicalSymbol, q: QSpec | None = None, M: int = 2048
) -> CurvatureReport:
    """Curvature at the identity through the residue pairing and through ``-Tr_Q([psi1, psi2])``."""
    q = normalize_q() if q is None else q
    res = curvature_residue_form(psi1, psi2, q)
    A, B = spectral.quantize(psi1, M), spectral.quantize(psi2, M)
    d = spectral.commutator_diagonal(A, B)
    K = psi1.bandwidth + psi2.bandwidth
    order = float(np.real(psi1.order + psi2.order))
    with mpmath.workdps(40):
        tr = regularized_trace(
            d,
            order,
            q,
            window=(M // 4, M - 2 * K - 8),
            sampler=lambda modes: spectral.commutator_diagonal_mp(psi1, psi2, modes, M),
        ).finite_part
    return CurvatureReport(res, -tr, abs(res + tr))


@dataclass
class StokesReport:
    boundary_integral: complex
    curvature_integral: complex
    gap: float
    cells: int

    def to_json(self) -> dict:
        return {
            "boundaryIntegral": [self.boundary_integral.real, self.boundary_integral.imag],
            "curvatureIntegral": [self.curvature_integral.real, self.curvature_integral.imag],
            "gap": self.gap,
            "cells": self.cells,
        }


def stokes_check(fam: Family, square: tuple, space: Space, cells: int = 4) -> StokesReport:
    """Trapezoid line integral of ``A_Q`` around ``[s0, s0+L] x [t0, t0+L]`` vs midpoint area integral of ``Omega_Q``."""
    if fam.dim != 2:
        raise ValueError("stokes_check needs a two-parameter family")
    s0, t0, L = square
    h = L / cells
    grid = np.linspace(0.0, L, cells + 1)
    w = np.full(cells + 1, h)
    w[0] = w[-1] = h / 2

    def a(point, direction):
        return connection_aq(fam, point, direction, space)

    es, et = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    line = 0j
    for g, wi in zip(grid, w):
        line += wi * a((s0 + g, t0), es)  # bottom, +s
        line += wi * a((s0 + L, t0 + g), et)  # right, +t
        line -= wi * a((s0 + g, t0 + L), es)  # top, -s
        line -= wi * a((s0, t0 + g), et)  # left, -t
    area = 0j
    mids = (np.arange(cells) + 0.5) * h
    for ms in mids:
        for mt in mids:
            area += h * h * curvature_at(fam, (s0 + ms, t0 + mt), es, et, space)
    return StokesReport(complex(line), complex(area), float(abs(line - area)), cells)


def alpha_q(fam1: Family, fam2: Family, t, v, space: Space) -> complex:
    """``alpha_Q(F1, F2)(v) = rTr((delta_Q F2) F2^{-1} Theta_1(v))``."""
    F2 = fam2.value(t)
    theta1 = maurer_cartan(fam1, t, v)
    X = space.delta(F2) @ np.linalg.inv(F2) @ theta1
    return space.rtr(X, order=-1)


def alpha_via_coboundary(fam1: Family, fam2: Family, t, v, space: Space) -> complex:
    """``(delta A_Q)(F1, F2)(v) = A_Q(F2) - A_Q(F1 F2) + A_Q(F1)``."""
    return (
        connection_aq(fam2, t, v, space)
        - connection_aq(fam1 * fam2, t, v, space)
        + connection_aq(fam1, t, v, space)
    )


def faces(families: list) -> list:
    """Face maps ``d_1 .. d_{p+1}`` of the simplicial group model on ``p`` slots."""
    p = len(families)
    out = [families[1:]]
    for i in range(1, p):
        out.append(families[: i - 1] + [families[i - 1] * families[i]] + families[i + 1 :])
    out.append(families[:-1])
    return out


def simplicial_delta(form):
    """``(delta beta)(F_1..F_{p+1}) = sum_j (-1)^{j-1} beta(d_j(F))``."""

    def evaluator(families, *args, **kwargs):
        total = 0j
        for j, fs in enumerate(faces(list(families))):
            total += (-1) ** j * form(fs, *args, **kwargs)
        return total

    return evaluator


def omega_form(families, t, v1, v2, space: Space) -> complex:
    (fam,) = families
    return curvature_at(fam, t, v1, v2, space)


def alpha_form(families, t, v, space: Space) -> complex:
    f1, f2 = families
    return alpha_q(f1, f2, t, v, space)


def d_alpha(fam1: Family, fam2: Family, t, space: Space, h: float = 1e-3) -> complex:
    """``d alpha_Q(d_s, d_t)`` by central differences in a two-parameter family pair."""
    t = np.asarray(t, dtype=float)
    es, et = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    ds = (alpha_q(fam1, fam2, t + h * es, et, space) - alpha_q(fam1, fam2, t - h * es, et, space)) / (2 * h)
    dt = (alpha_q(fam1, fam2, t + h * et, es, space) - alpha_q(fam1, fam2, t - h * et, es, space)) / (2 * h)
    return ds - dt


@dataclass
class ChangeOfQReport:
    lhs: complex
    rhs: complex
    gap: float

    def to_json(self) -> dict:
        return {"lhs": [self.lhs.real, self.lhs.imag], "rhs": [self.rhs.real, self.rhs.imag], "gap": self.gap}


def change_of_q(fam: Family, t, v, space: Space, q1: QSpec) -> ChangeOfQReport:
    """``A_Q - A_{Q1}`` against ``rTr(Theta(v) (log Q - log Q1))``."""
    theta = maurer_cartan(fam, t, v)
    space1 = Space(space.M, space.N, q1, space.margin)
    lhs = space.tr_q(theta) - space1.tr_q(theta)
    P = space.log_q() - space1.log_q()
    rhs = space.rtr(theta * P[None, :], order=-1)
    return ChangeOfQReport(lhs, rhs, float(abs(lhs - rhs)))
