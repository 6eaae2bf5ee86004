"""Exponential-utility quadratic-growth BSDE.

The driver is ``Theta/2 - alpha^2 xi^2 (1+Y) Gamma^2 / 2 + sigma^2 (1+Y) Z / 2
+ kappa Y Gamma`` with ``xi^2 = 1 - rho^2``.  The Gamma^2 term only ever pairs
coefficients of strictly lower order, so each order is still a linear system
in its own unknowns.  Also provides the exact linear-case solution used as a
benchmark and a least-squares liability fitter.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial, pi, sin
from typing import Callable

import numpy as np

from ._system import CoefficientSystem, sv_factors
from .errors import ParameterError, RankDeficient
from .ode_core import DEFAULT_CAP, SampledFunction, TimeGrid, rk4_backward, time_function
from .poly_table import CoefficientTable


@dataclass(frozen=True)
class ThetaSpec:
    """Squared risk premium ``Theta(x, y) = c0 * exp(-c1 x) * (y + 1)``."""

    c0: float = 0.0
    c1: float = 0.0

    def __post_init__(self):
        if self.c0 < 0:
            raise ParameterError("c0 must be non-negative")

    def derivative(self, a: int, b: int) -> float:
        return self.c0 * (-self.c1) ** a if b <= 1 else 0.0

    def __call__(self, x, y, t=None):
        return self.c0 * np.exp(-self.c1 * np.asarray(x, dtype=float)) * (np.asarray(y, dtype=float) + 1.0)


@dataclass(frozen=True)
class LinearTheta:
    """``Theta(t, x, y) = tx(t) x + ty(t) y + t0(t)``; each part constant, callable or per-node."""

    tx: object = 0.0
    ty: object = 0.0
    t0: object = 0.0

    def derivative(self, a: int, b: int):
        if (a, b) == (1, 0):
            return self.tx
        if (a, b) == (0, 1):
            return self.ty
        if (a, b) == (0, 0):
            return self.t0
        return 0.0

    def __call__(self, x, y, t=0.0):
        def at(v):
            return v(t) if callable(v) else float(v)
        return at(self.tx) * np.asarray(x) + at(self.ty) * np.asarray(y) + at(self.t0)


class LiabilitySpec:
    """Terminal liability ``H(x, y) = exp(-g1 x) G(y)``.

    ``G`` is represented by its Taylor derivatives at 0.  For a polynomial
    ``G(y) = sum g_d y**d`` they are ``d! g_d``; an exact ``func`` together with
    ``derivs`` may be supplied for smooth non-polynomial ``G``.
    """

    def __init__(self, g1: float, coeffs=None, func: Callable | None = None,
                 derivs: Callable[[int], float] | None = None):
        if coeffs is None and derivs is None:
            raise ParameterError("liability needs polynomial coefficients or exact derivatives")
        self.g1 = float(g1)
        self.coeffs = None if coeffs is None else np.asarray(coeffs, dtype=float)
        if self.coeffs is not None and not np.all(np.isfinite(self.coeffs)):
            raise ParameterError("liability coefficients must be finite")
        self.func = func
        self._derivs = derivs

    @classmethod
    def sine(cls, g1: float, shift: float = pi / 6) -> "LiabilitySpec":
        """``G(y) = sin(y + shift)`` with exact derivatives."""
        return cls(g1, func=lambda y: np.sin(np.asarray(y) + shift),
                   derivs=lambda k: sin(shift + k * pi / 2))

    def g_derivative(self, k: int) -> float:
        if self._derivs is not None:
            return float(self._derivs(k))
        return factorial(k) * float(self.coeffs[k]) if k < len(self.coeffs) else 0.0

    def derivative(self, a: int, b: int) -> float:
        """``d^a/dx^a d^b/dy^b H`` at the origin."""
        return (-self.g1) ** a * self.g_derivative(b)

    def G(self, y):
        if self.func is not None:
            return self.func(y)
        return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), self.coeffs)

    def __call__(self, x, y):
        return np.exp(-self.g1 * np.asarray(x, dtype=float)) * self.G(y)


@dataclass(frozen=True)
class LinearLiability:
    hx: float = 0.0
    hy: float = 0.0
    h0: float = 0.0

    def derivative(self, a: int, b: int) -> float:
        return {(1, 0): self.hx, (0, 1): self.hy, (0, 0): self.h0}.get((a, b), 0.0)

    def __call__(self, x, y):
        return self.hx * np.asarray(x) + self.hy * np.asarray(y) + self.h0


def theta_derivative(spec: ThetaSpec, a: int, b: int) -> float:
    return spec.derivative(a, b)


def liability_derivative(spec, gamma: float, n: int, k: int) -> float:
    """Terminal value ``gamma * d^(n-k)/dx d^k/dy H(0, 0)``."""
    return gamma * spec.derivative(n - k, k)


def fit_liability_poly(target: Callable, degree: int, fit_range=(-1.0, 1.0), n_points: int = 201):
    """Ordinary least-squares power-basis coefficients ``g_0..g_degree`` on equispaced points."""
    lo, hi = map(float, fit_range)
    if not hi > lo:
        raise ParameterError("fit range is degenerate")
    if degree < 0 or degree >= n_points:
        raise ParameterError("need 0 <= degree < n_points")
    ys = np.linspace(lo, hi, n_points)
    vals = np.asarray(target(ys), dtype=float)
    A = np.vander(ys, degree + 1, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(A, vals, rcond=None)
    if rank < degree + 1:
        raise RankDeficient(f"design matrix rank {rank} < {degree + 1}")
    return coeffs


@dataclass(frozen=True)
class UtilityParams:
    sigma: object
    alpha: object
    rho: object
    kappa: object
    theta: object = ThetaSpec()
    liability: object = LinearLiability()
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ParameterError("risk aversion must be positive")
        for name in ("sigma", "alpha", "kappa"):
            v = getattr(self, name)
            if not callable(v) and np.any(np.asarray(v, dtype=float) < 0):
                raise ParameterError(f"{name} must be non-negative")
        if not callable(self.rho) and np.any(np.abs(np.asarray(self.rho, dtype=float)) > 1):
            raise ParameterError("|rho| must not exceed 1")


def _add_convolutions(sysm: CoefficientSystem, n: int, m: int, k: int):
    """Gamma^2 and Y Gamma^2 blocks with the summation bounds as stated for the recursion."""
    row = (n, m - k, k)
    if m <= n - 2:
        for l in range(1, n):
            for j in range(max(1, l + 2 - n + m), min(l, m + 1) + 1):
                for p in range(max(1, j - m + k), min(j, k + 1) + 1):
                    w = -comb(m - k, j - p) * comb(k, p - 1)
                    sysm.add_quadratic(row, (l, j - p, p), (n - l, m - k - j + p, k - p + 2), "a2xi2", w)
    if 1 <= m <= n - 2 and k >= 1:
        for l in range(1, n - 1):
            for j in range(max(1, l + 2 - n + m), min(l, m) + 1):
                for p in range(max(1, j - m + k), min(j, k) + 1):
                    w = -comb(m - k, j - p) * comb(k, p) * p
                    sysm.add_quadratic(row, (l, j - p, p), (n - l - 1, m - k - j + p, k - p + 1), "a2xi2", w)


def utility_system(params: UtilityParams, n_max: int) -> CoefficientSystem:
    theta = params.theta
    sysm = CoefficientSystem(n_max)
    for n in range(n_max + 1):
        for m in range(n, -1, -1):
            for k in range(m + 1):
                i = m - k
                row = (n, i, k)
                if m <= n - 1 and k >= 1:
                    sysm.add(row, (n, i + 2, k - 1), "s2", -k)
                    sysm.add(row, (n, i + 1, k), "rsa", -k)
                    sysm.add(row, (n, i, k + 1), "a2", -k)
                if m <= n - 2:
                    sysm.add(row, (n, i + 2, k), "s2", -1)
                    sysm.add(row, (n, i + 1, k + 1), "rsa", -1)
                    sysm.add(row, (n, i, k + 2), "a2", -1)
                if m == n:
                    d = theta.derivative(n - k, k)
                    if callable(d) or np.ndim(d) > 0 or d != 0.0:
                        sysm.add_forcing(row, _half(d))
                if m <= n - 1:
                    sysm.add(row, (n, i + 1, k), "s2", 1)
                if m <= n - 1 and k >= 1:
                    sysm.add(row, (n - 1, i + 1, k - 1), "s2", k)
                    sysm.add(row, (n - 1, i, k), "kappa", k)
                _add_convolutions(sysm, n, m, k)
    return sysm


def _half(value):
    if callable(value):
        return lambda t: 0.5 * value(t)
    return 0.5 * np.asarray(value, dtype=float)


def utility_terminal(params: UtilityParams, n_max: int) -> dict:
    return {(n, n - k, k): liability_derivative(params.liability, params.gamma, n, k)
            for n in range(n_max + 1) for k in range(n + 1)}


def utility_solve(params: UtilityParams, n_max: int, grid: TimeGrid, cap=None) -> CoefficientTable:
    if n_max < 0:
        raise ParameterError("n_max must be non-negative")
    sysm = utility_system(params, n_max)
    factors = sv_factors(params.sigma, params.alpha, params.rho, params.kappa, grid)
    return sysm.solve(factors, utility_terminal(params, n_max), grid, "top", cap,
                      meta={"model": "utility"})


def initial_summary(table: CoefficientTable) -> np.ndarray:
    """Rows ``(n, V_0^(n), Z_0^(n), Gamma_0^(n))`` at the origin for n = 0..n_max."""
    rows = []
    for n in range(table.n_max + 1):
        w = table.truncated(n)[0]
        z = w[1, 0] if n >= 1 else 0.0
        g = w[0, 1] if n >= 1 else 0.0
        rows.append((n, w[0, 0], z, g))
    return np.array(rows)


def riccati_exact(h, theta: LinearTheta, params: UtilityParams, grid: TimeGrid,
                  cap: float = DEFAULT_CAP) -> tuple[SampledFunction, SampledFunction, SampledFunction]:
    """Exact ``(v_x, v_y, v_0)`` for linear ``H = hx x + hy y + h0`` and linear Theta.

    ``DivergedSolve`` signals a finite-time blow-up of the Riccati component.
    """
    hx, hy, h0 = map(float, h)
    s = time_function(params.sigma, grid)
    a = time_function(params.alpha, grid)
    r = time_function(params.rho, grid)
    k = time_function(params.kappa, grid)
    tx, ty, t0 = (time_function(theta.derivative(*ab), grid) for ab in ((1, 0), (0, 1), (0, 0)))

    def rhs(t, v):
        vx, vy, _ = v
        common = 0.5 * (s(t) ** 2 * vx - a(t) ** 2 * (1.0 - r(t) ** 2) * vy * vy)
        return np.array([0.5 * tx(t), common + k(t) * vy + 0.5 * ty(t), common + 0.5 * t0(t)])

    g = params.gamma
    vx, vy, v0 = rk4_backward(rhs, [g * hx, g * hy, g * h0], grid, cap, labels=["v_x", "v_y", "v_0"])
    return vx, vy, v0
