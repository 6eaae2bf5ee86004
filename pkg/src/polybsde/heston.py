"""Jump-extended Heston: recursive coefficient ODEs and moment estimates of X_T.

State variables are the log-return ``X = ln(S/S0)`` and the shifted variance
factor ``Y = Ybar - 1``.  Jumps in X are Gaussian with a Y-dependent
polynomial intensity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, exp, factorial

import numpy as np

from ._system import CoefficientSystem, sv_factors
from .errors import ParameterError
from .ode_core import TimeGrid
from .poly_table import CoefficientTable


@dataclass(frozen=True)
class IntensityPoly:
    """Jump intensity ``lambda(y) = sum_l coeffs[l] * y**l``."""

    coeffs: tuple = (0.0,)
    y_range: tuple = (-1.0, 4.0)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs) or (0.0,))
        lo, hi = self.y_range
        ys = np.linspace(lo, hi, 401)
        if np.any(self(ys) < -1e-12):
            raise ParameterError(f"intensity {self.coeffs} is negative on {self.y_range}")

    @classmethod
    def from_shifted_square(cls, scale: float) -> "IntensityPoly":
        """``scale * (y + 1)**2``."""
        return cls((scale, 2 * scale, scale))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def derivative(self, l: int) -> float:
        """``d^l lambda / dy^l`` at ``y = 0``."""
        return factorial(l) * self.coeffs[l] if l <= self.degree else 0.0

    def __call__(self, y):
        return np.polynomial.polynomial.polyval(y, self.coeffs)

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)


@dataclass(frozen=True)
class GaussianJump:
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError("jump stdev must be non-negative")


def gaussian_jump_moment(jump: GaussianJump, j: int) -> float:
    """Raw moment ``E[z**j]`` of Normal(mu, sigma^2)."""
    if j < 0:
        raise ValueError("moment order must be non-negative")
    q_prev, q = 0.0, 1.0
    for n in range(1, j + 1):
        q_prev, q = q, jump.mu * q + (n - 1) * jump.sigma ** 2 * q_prev
    return q


def gaussian_jump_moments(jump: GaussianJump, j_max: int) -> np.ndarray:
    return np.array([gaussian_jump_moment(jump, j) for j in range(j_max + 1)])


def jump_beta(jump: GaussianJump) -> float:
    """Compensator ``E[e^z - 1]`` of the proportional price jump."""
    return exp(jump.mu + 0.5 * jump.sigma ** 2) - 1.0


@dataclass(frozen=True)
class HestonParams:
    """sigma, alpha, rho, kappa may be constants, callables of t, or per-node arrays."""

    sigma: object
    alpha: object
    rho: object
    kappa: object
    intensity: IntensityPoly = field(default_factory=IntensityPoly)
    jump: GaussianJump = field(default_factory=GaussianJump)

    def __post_init__(self):
        for name in ("sigma", "alpha", "kappa"):
            v = getattr(self, name)
            if not callable(v) and np.any(np.asarray(v, dtype=float) < 0):
                raise ParameterError(f"{name} must be non-negative")
        if not callable(self.rho) and np.any(np.abs(np.asarray(self.rho, dtype=float)) > 1):
            raise ParameterError("|rho| must not exceed 1")


@dataclass(frozen=True)
class TerminalSpec:
    """Payoff derivatives ``d^n H / dx^n (0)`` for n = 0..len-1."""

    derivatives: tuple

    def __post_init__(self):
        d = tuple(float(v) for v in self.derivatives)
        if not all(np.isfinite(d)):
            raise ParameterError("terminal derivatives must be finite")
        object.__setattr__(self, "derivatives", d)

    @classmethod
    def power(cls, m: int) -> "TerminalSpec":
        """``H(x) = x**m``."""
        return cls(tuple(float(factorial(m)) if n == m else 0.0 for n in range(m + 1)))

    def __getitem__(self, n):
        return self.derivatives[n] if n < len(self.derivatives) else 0.0


def heston_system(params: HestonParams, n_max: int) -> CoefficientSystem:
    lam = params.intensity
    beta = jump_beta(params.jump)
    q = gaussian_jump_moments(params.jump, n_max + 1)
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
                if m <= n - 1 and k >= 1:
                    sysm.add(row, (n - 1, i + 1, k - 1), "s2", k)
                    sysm.add(row, (n - 1, i, k), "kappa", k)
                if m <= n - 1:
                    sysm.add(row, (n, i + 1, k), "s2", 1)
                    for l in range(min(k, lam.degree) + 1):
                        lam_l = comb(k, l) * lam.derivative(l)
                        if lam_l == 0.0:
                            continue
                        sysm.add(row, (n - l, i + 1, k - l), "one", lam_l * beta)
                        for j in range(1, n - m + 1):
                            sysm.add(row, (n - l, j + i, k - l), "one", -lam_l * q[j] / factorial(j))
    return sysm


def heston_solve(params: HestonParams, terminal: TerminalSpec, n_max: int, grid: TimeGrid,
                 cap=None) -> CoefficientTable:
    """Coefficient table up to order ``n_max``.

    Terminal values ``v[n]_{n,0}(T) = H^(n)(0)``, every other entry zero.
    Raises ``DivergedSolve`` tagged with the first offending ``(n, i, k)``.
    """
    if n_max < 0:
        raise ParameterError("n_max must be non-negative")
    sysm = heston_system(params, n_max)
    term = {(n, n, 0): terminal[n] for n in range(n_max + 1)}
    factors = sv_factors(params.sigma, params.alpha, params.rho, params.kappa, grid)
    return sysm.solve(factors, term, grid, "x", cap,
                      meta={"model": "heston"})


def moment_partial_sums(table: CoefficientTable) -> np.ndarray:
    """``sum_{j <= n} v[j]_{0,0}(0)`` for n = 0..n_max."""
    return np.cumsum([table[n, 0, 0][0] for n in range(table.n_max + 1)])


def heston_moments(params: HestonParams, m_max: int, n_max: int, grid: TimeGrid,
                   return_partial=False):
    """Estimates of ``E[X_T**m]`` for m = 1..m_max.

    With ``return_partial`` also returns an (m_max, n_max+1) array of partial
    sums over the expansion order.
    """
    if n_max < m_max:
        raise ParameterError("n_max must be at least m_max")
    partial = np.array([moment_partial_sums(heston_solve(params, TerminalSpec.power(m), n_max, grid))
                        for m in range(1, m_max + 1)])
    gammas = partial[:, -1].copy()
    return (gammas, partial) if return_partial else gammas
