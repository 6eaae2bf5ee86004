"""Scalar-factor expansion to second order.

A small, explicit reference for the mechanics of the scheme: one forward
factor ``X`` with at most quadratic ``d<X^c>``, jumps with deterministic
moment functions, and a general driver ``f(t, x, v, z, u)`` entering through
its first and second partial derivatives at ``(0, v0(t), 0, 0)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError
from .ode_core import DEFAULT_CAP, TimeGrid, integrate_backward
from .poly_table import CoefficientTable, entry_index

_DERIVS = ("fx", "fv", "fz", "fu", "fxx", "fvv", "fzz", "fuu",
           "fxv", "fxz", "fxu", "fvz", "fvu", "fzu")


def _zero(t, v):
    return 0.0


@dataclass(frozen=True)
class DriverDerivatives:
    """Driver and its partials at the expansion point.

    ``f(t, x, v, z, u)`` is the full driver (its zeroth-order slice drives
    ``v0``, and path-wise residuals evaluate it at the truncated solution).
    Every partial is a callable of ``(t, v0)``; omitted ones are zero.
    """

    f: Callable
    fx: Callable = _zero
    fv: Callable = _zero
    fz: Callable = _zero
    fu: Callable = _zero
    fxx: Callable = _zero
    fvv: Callable = _zero
    fzz: Callable = _zero
    fuu: Callable = _zero
    fxv: Callable = _zero
    fxz: Callable = _zero
    fxu: Callable = _zero
    fvz: Callable = _zero
    fvu: Callable = _zero
    fzu: Callable = _zero

    def at(self, t, v0) -> dict:
        return {name: float(getattr(self, name)(t, v0)) for name in _DERIVS}


def finite_difference_derivatives(f: Callable, h: float = 1e-4) -> DriverDerivatives:
    """Central-difference partials of ``f(t, x, v, z, u)``; meant for tests."""
    axes = {"x": 0, "v": 1, "z": 2, "u": 3}

    def point(v0, shifts):
        p = [0.0, v0, 0.0, 0.0]
        for ax, s in shifts:
            p[axes[ax]] += s
        return p

    def first(ax):
        return lambda t, v0: (f(t, *point(v0, [(ax, h)])) - f(t, *point(v0, [(ax, -h)]))) / (2 * h)

    def second(a, b):
        if a == b:
            return lambda t, v0: (f(t, *point(v0, [(a, h)])) - 2 * f(t, *point(v0, []))
                                  + f(t, *point(v0, [(a, -h)]))) / (h * h)
        return lambda t, v0: (f(t, *point(v0, [(a, h), (b, h)])) - f(t, *point(v0, [(a, h), (b, -h)]))
                              - f(t, *point(v0, [(a, -h), (b, h)]))
                              + f(t, *point(v0, [(a, -h), (b, -h)]))) / (4 * h * h)

    kw = {}
    for name in _DERIVS:
        spec = name[1:]
        kw[name] = first(spec) if len(spec) == 1 else second(spec[0], spec[1])
    return DriverDerivatives(f=f, **kw)


@dataclass(frozen=True)
class QuadCovSpec:
    """``d<X^c>/dt = s2(t) x^2 + s1(t) x + s0(t)``; each term a constant or callable."""

    s2: object = 0.0
    s1: object = 0.0
    s0: object = 0.0
    x_range: tuple = (-5.0, 5.0)

    def coeffs(self, t) -> tuple:
        return tuple(float(c(t)) if callable(c) else float(c) for c in (self.s2, self.s1, self.s0))

    def check(self, t) -> None:
        """Non-negativity at the range endpoints and at the vertex when it lies inside."""
        a, b, c = self.coeffs(t)
        lo, hi = self.x_range
        pts = [lo, hi]
        if a != 0 and lo < -b / (2 * a) < hi:
            pts.append(-b / (2 * a))
        if min(a * x * x + b * x + c for x in pts) < -1e-14:
            raise ParameterError(f"quadratic covariation negative on {self.x_range} at t={t}")

    def __call__(self, t, x):
        a, b, c = self.coeffs(t)
        return a * x * x + b * x + c


@dataclass(frozen=True)
class JumpMomentSpec:
    """Raw jump moments ``q(t, n)``; ``intensity`` is folded into the driver by the caller."""

    q: Callable = None

    @classmethod
    def constant(cls, moments) -> "JumpMomentSpec":
        m = tuple(float(v) for v in moments)
        return cls(lambda t, n: m[n] if n < len(m) else 0.0)

    @classmethod
    def none(cls) -> "JumpMomentSpec":
        return cls(lambda t, n: 1.0 if n == 0 else 0.0)

    def __post_init__(self):
        if self.q is None:
            object.__setattr__(self, "q", lambda t, n: 1.0 if n == 0 else 0.0)
        if abs(self.q(0.0, 0) - 1.0) > 1e-12:
            raise ParameterError("q(t, 0) must equal 1")


GENERIC_LABELS = ((0, 0), (1, 1), (1, 0), (2, 2), (2, 1), (2, 0))


def generic_rhs(drivers: DriverDerivatives, quad: QuadCovSpec, jumps: JumpMomentSpec):
    """Right-hand side for the state ``(v0, v1_1, v1_0, v2_2, v2_1, v2_0)``."""

    def rhs(t, w):
        v0, a, b, c2, c1, c0 = w
        d = drivers.at(t, v0)
        q1, q2 = jumps.q(t, 1), jumps.q(t, 2)
        s2, s1, s0 = quad.coeffs(t)
        fv = d["fv"]
        zu = d["fz"] + d["fu"] * q1
        vzu = d["fvz"] + d["fvu"] * q1
        out = np.empty(6)
        out[0] = drivers.f(t, 0.0, v0, 0.0, 0.0)
        out[1] = d["fx"] + fv * a
        out[2] = fv * b + zu * a
        out[3] = (fv - s2) * c2 + d["fvv"] * a * a + 2 * d["fxv"] * a + d["fxx"]
        out[4] = (fv * c1 + (zu - 0.5 * s1) * c2 + vzu * a * a + d["fvv"] * a * b
                  + (d["fxz"] + d["fxu"] * q1) * a + d["fxv"] * b)
        out[5] = (fv * c0 + 0.5 * (d["fu"] * q2 - s0) * c2 + zu * c1 + 0.5 * d["fvv"] * b * b
                  + 0.5 * (d["fzz"] + d["fuu"] * q1 * q1 + 2 * d["fzu"] * q1) * a * a
                  + vzu * a * b)
        return out

    return rhs


def solve_generic(drivers: DriverDerivatives, quad: QuadCovSpec, jumps: JumpMomentSpec,
                  h_derivs, grid: TimeGrid, cap: float = DEFAULT_CAP) -> CoefficientTable:
    """Order-2 table (k = 0 slice) for terminal derivatives ``(H(0), H'(0), H''(0))``.

    The six coefficients are marched together; the system is lower
    triangular in the listed order, and the ``v0`` component sees only itself,
    so it coincides with a separate zeroth-order solve on the same grid.
    ``DivergedSolve.label`` is the ``(n, m)`` pair of the offending entry.
    """
    h0, h1, h2 = (float(v) for v in h_derivs)
    for t in grid.nodes:
        quad.check(t)
    terminal = [h0, h1, 0.0, h2, 0.0, 0.0]
    values = integrate_backward(generic_rhs(drivers, quad, jumps), terminal, grid, cap,
                                labels=GENERIC_LABELS)
    idx = entry_index(2)
    table = np.zeros((grid.n_nodes, len(idx)))
    for j, (n, m) in enumerate(GENERIC_LABELS):
        table[:, idx[n, m, 0]] = values[:, j]
    return CoefficientTable(grid, 2, table, "x", meta={"model": "generic"})
