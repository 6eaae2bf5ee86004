"""lambda-SABR in CEV-free coordinates.

``X = ((S/S0)**(1-beta) - 1) / (1-beta)`` removes the CEV power from the
diffusion so that the quadratic covariations become polynomial in ``(X, Y)``;
the remaining drift carries ``b(x) = 1 / (1 + (1-beta) x)``, which enters the
recursion through its Taylor coefficients at the origin.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from ._system import CoefficientSystem, sv_factors
from .errors import DomainError, ParameterError
from .heston import TerminalSpec, moment_partial_sums
from .ode_core import TimeGrid
from .poly_table import CoefficientTable


@dataclass(frozen=True)
class SabrParams:
    sigma: object
    alpha: object
    rho: object
    kappa: object
    beta: float = 0.0

    def __post_init__(self):
        for name in ("sigma", "alpha", "kappa"):
            v = getattr(self, name)
            if not callable(v) and np.any(np.asarray(v, dtype=float) < 0):
                raise ParameterError(f"{name} must be non-negative")
        if not callable(self.rho) and np.any(np.abs(np.asarray(self.rho, dtype=float)) > 1):
            raise ParameterError("|rho| must not exceed 1")
        if not 0.0 <= self.beta < 1.0:
            raise ParameterError("CEV exponent must lie in [0, 1)")

    @property
    def floor(self) -> float:
        """Lower edge of the support of X."""
        return -1.0 / (1.0 - self.beta)


def sabr_transform(s, s0, beta):
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or s0 <= 0:
        raise DomainError("prices must be positive")
    c = 1.0 - beta
    return ((s / s0) ** c - 1.0) / c


def sabr_untransform(x, s0, beta):
    """Inverse of ``sabr_transform``; defined for ``x > -1/(1-beta)``."""
    x = np.asarray(x, dtype=float)
    c = 1.0 - beta
    base = 1.0 + c * x
    if np.any(base <= 0):
        raise DomainError(f"x must exceed {-1.0 / c}")
    return s0 * base ** (1.0 / c)


def b_derivative(beta: float, l: int) -> float:
    """``d^l b / dx^l`` at 0 for ``b(x) = 1/(1 + (1-beta) x)``."""
    if l < 0:
        raise ValueError("derivative order must be non-negative")
    return (-1) ** l * factorial(l) * (1.0 - beta) ** l


def sabr_system(params: SabrParams, n_max: int) -> CoefficientSystem:
    beta = params.beta
    bl = [b_derivative(beta, l) for l in range(n_max + 1)]
    sysm = CoefficientSystem(n_max)
    for n in range(n_max + 1):
        for m in range(n, -1, -1):
            for k in range(m + 1):
                i = m - k
                row = (n, i, k)
                # Y^2 part of (1+Y)^2 in the quadratic covariations
                if k >= 2:
                    w = -k * (k - 1)
                    sysm.add(row, (n, i + 2, k - 2), "s2", w)
                    sysm.add(row, (n, i + 1, k - 1), "rsa", w)
                    sysm.add(row, (n, i, k), "a2", w)
                # 2Y part
                if m <= n - 1 and k >= 1:
                    sysm.add(row, (n, i + 2, k - 1), "s2", -2 * k)
                    sysm.add(row, (n, i + 1, k), "rsa", -2 * k)
                    sysm.add(row, (n, i, k + 1), "a2", -2 * k)
                if m <= n - 2:
                    sysm.add(row, (n, i + 2, k), "s2", -1)
                    sysm.add(row, (n, i + 1, k + 1), "rsa", -1)
                    sysm.add(row, (n, i, k + 2), "a2", -1)
                if m <= n - 1 and k >= 1:
                    sysm.add(row, (n - 1, i, k), "kappa", k)
                if m <= n - 1 and beta != 0.0:
                    for l in range(i + 1):
                        c = beta * comb(i, l) * bl[l]
                        sysm.add(row, (n - l, i - l + 1, k), "s2", c)
                        if k >= 1:
                            sysm.add(row, (n - l - 1, i - l + 1, k - 1), "s2", c * 2 * k)
                        if k >= 2:
                            sysm.add(row, (n - l - 2, i - l + 1, k - 2), "s2", c * k * (k - 1))
    return sysm


def sabr_solve(params: SabrParams, terminal: TerminalSpec, n_max: int, grid: TimeGrid,
               cap=None) -> CoefficientTable:
    """Coefficient table; ``DivergedSolve`` names the first entry that blows up."""
    if n_max < 0:
        raise ParameterError("n_max must be non-negative")
    sysm = sabr_system(params, n_max)
    term = {(n, n, 0): terminal[n] for n in range(n_max + 1)}
    factors = sv_factors(params.sigma, params.alpha, params.rho, params.kappa, grid)
    return sysm.solve(factors, term, grid, "x", cap, meta={"model": "sabr"})


def sabr_moments(params: SabrParams, m_max: int, n_max: int, grid: TimeGrid,
                 return_partial=False):
    """Estimates of ``E[X_T**m]``, m = 1..m_max, in transformed coordinates."""
    if n_max < m_max:
        raise ParameterError("n_max must be at least m_max")
    partial = np.array([moment_partial_sums(sabr_solve(params, TerminalSpec.power(m), n_max, grid))
                        for m in range(1, m_max + 1)])
    gammas = partial[:, -1].copy()
    return (gammas, partial) if return_partial else gammas
