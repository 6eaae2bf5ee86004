"""Moments, cumulants, Edgeworth densities and European option prices.

Cumulant vectors are 1-based in meaning and 0-based in storage:
``chi[0]`` is the mean, ``chi[1]`` the variance and so on.  ``order`` of a
cumulant vector is its length.
"""
from __future__ import annotations

from functools import lru_cache
from math import comb, factorial, sqrt

import numpy as np
from scipy.special import ndtr

from .errors import InvalidCumulants, OutOfBounds, QuadratureNotConverged

SQRT_2PI = sqrt(2.0 * np.pi)


@lru_cache(maxsize=None)
def partitions(n: int) -> tuple:
    """All ``(k_1, ..., k_n)`` with ``sum m k_m = n`` (multiplicity form of integer partitions)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    out = []

    def descend(m, remaining, ks):
        if m == 0:
            if remaining == 0:
                out.append(tuple(reversed(ks)))
            return
        for k in range(remaining // m, -1, -1):
            descend(m - 1, remaining - k * m, ks + [k])

    descend(n, n, [])
    return tuple(out)


def _bell_sum(values, n, signed):
    total = 0.0
    for ks in partitions(n):
        r = sum(ks)
        term = 1.0
        for m, k in enumerate(ks, start=1):
            if k:
                term *= (values[m - 1] / factorial(m)) ** k / factorial(k)
        if signed:
            term *= (-1) ** (r - 1) * factorial(r - 1)
        total += term
    return factorial(n) * total


def moments_to_cumulants(moments) -> np.ndarray:
    """Raw moments ``(g_1..g_M)`` to cumulants ``(chi_1..chi_M)`` by partition enumeration."""
    g = np.asarray(moments, dtype=float)
    if g.size < 1:
        raise ValueError("need at least one moment")
    # cumulants above the first are shift invariant; centring first avoids
    # the cancellation a large mean causes in the signed partition sum
    full = np.concatenate(([1.0], g))
    shift = -g[0]
    central = np.array([sum(comb(n, j) * full[j] * shift ** (n - j) for j in range(n + 1))
                        for n in range(1, g.size + 1)])
    central[0] = 0.0
    out = np.array([_bell_sum(central, n, True) for n in range(1, g.size + 1)])
    out[0] = g[0]
    return out


def cumulants_to_moments(cumulants) -> np.ndarray:
    c = np.asarray(cumulants, dtype=float)
    if c.size < 1:
        raise ValueError("need at least one cumulant")
    return np.array([_bell_sum(c, n, False) for n in range(1, c.size + 1)])


def hermite(n: int, x):
    """Probabilists' Hermite polynomial by three-term recursion."""
    if n < 0:
        raise ValueError("n must be non-negative")
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x.copy()
    if n == 0:
        return h_prev[()] if h_prev.ndim == 0 else h_prev
    for j in range(1, n):
        h_prev, h = h, x * h - j * h_prev
    return h[()] if h.ndim == 0 else h


def hermite_all(n_max: int, x) -> np.ndarray:
    """``H_0..H_n_max`` at x, stacked on the first axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for j in range(1, n_max):
        out[j + 1] = x * out[j] - j * out[j - 1]
    return out


def _validate(cumulants) -> np.ndarray:
    c = np.asarray(cumulants, dtype=float)
    if c.size < 2:
        raise InvalidCumulants("need at least mean and variance")
    if not np.all(np.isfinite(c)):
        raise InvalidCumulants("cumulants must be finite")
    if not c[1] > 0:
        raise InvalidCumulants(f"variance cumulant must be positive, got {c[1]}")
    return c


def hermite_weights(cumulants) -> np.ndarray:
    """Coefficients ``a_j`` of the standardized expansion ``phi(y) sum_j a_j H_j(y)``."""
    c = _validate(cumulants)
    n = c.size
    big_sigma = sqrt(c[1])
    a = np.zeros(3 * max(n - 2, 0) + 1)
    a[0] = 1.0
    for s in range(1, n - 1):
        for ks in partitions(s):
            r = sum(ks)
            term = 1.0
            for m, k in enumerate(ks, start=1):
                if k:
                    term *= (c[m + 1] / factorial(m + 2)) ** k / factorial(k)
            a[s + 2 * r] += term / big_sigma ** (s + 2 * r)
    return a


def edgeworth_density(cumulants, x):
    """Edgeworth density built from ``chi_1..chi_n``; may be negative in the tails."""
    c = _validate(cumulants)
    mu, big_sigma = c[0], sqrt(c[1])
    a = hermite_weights(c)
    y = (np.asarray(x, dtype=float) - mu) / big_sigma
    herm = hermite_all(a.size - 1, y)
    series = np.tensordot(a, herm, axes=1)
    return np.exp(-0.5 * y * y) / (SQRT_2PI * big_sigma) * series


def density_minimum(cumulants, n_points: int = 2001, width: float = 6.0) -> tuple[float, float]:
    """``(x, p(x))`` at the smallest density value on ``mu +- width * Sigma``."""
    c = _validate(cumulants)
    xs = c[0] + sqrt(c[1]) * np.linspace(-width, width, n_points)
    p = edgeworth_density(c, xs)
    j = int(np.argmin(p))
    return float(xs[j]), float(p[j])


def cumulant_warnings(cumulants, threshold: float = 1.0) -> list[str]:
    """Messages for standardized cumulants ``|chi_n| / chi_2^(n/2)`` above ``threshold``."""
    c = _validate(cumulants)
    out = []
    for n in range(3, c.size + 1):
        ratio = abs(c[n - 1]) / c[1] ** (n / 2)
        if ratio > threshold:
            out.append(f"standardized cumulant {n} is {ratio:.3g} (> {threshold}); consider a lower order")
    return out


def _phi(y):
    return np.exp(-0.5 * y * y) / SQRT_2PI


def _tail_integrals(a_len, d, big_sigma):
    """Upper-tail integrals of ``phi H_j`` and ``exp(Sigma y) phi H_j`` over ``[d, inf)``."""
    herm = hermite_all(max(a_len - 2, 0), d)
    pd = _phi(d)
    esd = np.exp(big_sigma * d)
    plain = np.empty(a_len)
    expo = np.empty(a_len)
    plain[0] = ndtr(-d)
    expo[0] = np.exp(0.5 * big_sigma ** 2) * ndtr(big_sigma - d)
    for j in range(1, a_len):
        plain[j] = pd * herm[j - 1]
        expo[j] = esd * pd * herm[j - 1] + big_sigma * expo[j - 1]
    return plain, expo


def _lower_integrals(a_len, d, big_sigma):
    """Lower-tail counterparts over ``(-inf, d]``."""
    herm = hermite_all(max(a_len - 2, 0), d)
    pd = _phi(d)
    esd = np.exp(big_sigma * d)
    plain = np.empty(a_len)
    expo = np.empty(a_len)
    plain[0] = ndtr(d)
    expo[0] = np.exp(0.5 * big_sigma ** 2) * ndtr(d - big_sigma)
    for j in range(1, a_len):
        plain[j] = -pd * herm[j - 1]
        expo[j] = -esd * pd * herm[j - 1] + big_sigma * expo[j - 1]
    return plain, expo


def call_price_closed(s0: float, strike: float, cumulants) -> float:
    """Call on ``S_T = s0 exp(X_T)`` against the Edgeworth density of ``X_T``, fully analytic."""
    c = _validate(cumulants)
    if not strike > 0:
        raise ValueError("strike must be positive")
    mu, big_sigma = c[0], sqrt(c[1])
    a = hermite_weights(c)
    d = (np.log(strike / s0) - mu) / big_sigma
    plain, expo = _tail_integrals(a.size, d, big_sigma)
    return float(s0 * np.exp(mu) * a @ expo - strike * a @ plain)


def put_price_closed(s0: float, strike: float, cumulants) -> float:
    """Put by the lower-tail formulas (not by parity)."""
    c = _validate(cumulants)
    if not strike > 0:
        raise ValueError("strike must be positive")
    mu, big_sigma = c[0], sqrt(c[1])
    a = hermite_weights(c)
    d = (np.log(strike / s0) - mu) / big_sigma
    plain, expo = _lower_integrals(a.size, d, big_sigma)
    return float(strike * a @ plain - s0 * np.exp(mu) * a @ expo)


def density_forward(s0: float, cumulants) -> float:
    """``int s0 e^x p(x) dx`` for the Edgeworth density (need not equal the martingale forward)."""
    c = _validate(cumulants)
    big_sigma = sqrt(c[1])
    a = hermite_weights(c)
    return float(s0 * np.exp(c[0] + 0.5 * c[1]) * np.sum(a * big_sigma ** np.arange(a.size)))


_GL_NODES = {}


def _gauss_legendre(order):
    if order not in _GL_NODES:
        _GL_NODES[order] = np.polynomial.legendre.leggauss(order)
    return _GL_NODES[order]


def adaptive_gauss_legendre(fn, lo: float, hi: float, rtol: float = 1e-8, atol: float = 1e-14,
                            order: int = 20, max_depth: int = 30, breakpoints=()) -> float:
    """Integral of a vectorized ``fn`` on ``[lo, hi]`` by recursive panel bisection.

    A panel is accepted when its ``order``-point rule agrees with the sum over
    its two halves to within ``rtol`` times the running magnitude of the
    integral (or ``atol``).
    """
    x, w = _gauss_legendre(order)

    def rule(a, b):
        half = 0.5 * (b - a)
        return half * np.dot(w, fn(a + half * (x + 1.0)))

    edges = sorted({lo, hi, *[p for p in breakpoints if lo < p < hi]})
    panels = [(a, b, rule(a, b), 0) for a, b in zip(edges[:-1], edges[1:])]
    scale = abs(sum(p[2] for p in panels))
    total = 0.0
    while panels:
        a, b, whole, depth = panels.pop()
        m = 0.5 * (a + b)
        left, right = rule(a, m), rule(m, b)
        refined = left + right
        scale = max(scale, abs(refined))
        if abs(refined - whole) <= max(rtol * scale, atol) * (b - a) / (hi - lo):
            total += refined
        elif depth >= max_depth:
            raise QuadratureNotConverged(f"panel [{a}, {b}] not converged after {depth} bisections")
        else:
            panels.append((a, m, left, depth + 1))
            panels.append((m, b, right, depth + 1))
    return float(total)


def default_bounds(cumulants, width: float = 12.0, floor: float | None = None) -> tuple[float, float]:
    """``mu +- width * Sigma``, the lower end clipped at ``floor`` when given."""
    c = _validate(cumulants)
    lo, hi = c[0] - width * sqrt(c[1]), c[0] + width * sqrt(c[1])
    if floor is not None:
        lo = max(lo, floor)
    return lo, hi


def price_numeric(payoff, cumulants, bounds=None, rtol: float = 1e-8, breakpoints=()) -> float:
    """``int payoff(x) p(x) dx`` by adaptive Gauss-Legendre; payoff must be vectorized."""
    c = _validate(cumulants)
    lo, hi = bounds if bounds is not None else default_bounds(c)
    return adaptive_gauss_legendre(lambda x: payoff(x) * edgeworth_density(c, x), lo, hi,
                                   rtol=rtol, breakpoints=breakpoints)


def black_scholes(s0: float, strike: float, vol: float, T: float, kind: str = "call") -> float:
    """Zero-rate Black-Scholes price."""
    if vol <= 0 or T <= 0:
        intrinsic = max(s0 - strike, 0.0) if kind == "call" else max(strike - s0, 0.0)
        return intrinsic
    sd = vol * sqrt(T)
    d1 = (np.log(s0 / strike) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    if kind == "call":
        return float(s0 * ndtr(d1) - strike * ndtr(d2))
    return float(strike * ndtr(-d2) - s0 * ndtr(-d1))


def implied_vol(price: float, s0: float, strike: float, T: float, kind: str = "call",
                tol: float = 1e-10, vol_max: float = 10.0) -> float:
    """Black-Scholes implied volatility by bisection on ``(0, vol_max]``."""
    if kind == "call":
        lower, upper = max(s0 - strike, 0.0), s0
    elif kind == "put":
        lower, upper = max(strike - s0, 0.0), strike
    else:
        raise ValueError(f"unknown option kind {kind!r}")
    if not lower < price < upper:
        raise OutOfBounds(f"{kind} price {price} outside ({lower}, {upper})")
    lo, hi = 0.0, vol_max
    if black_scholes(s0, strike, hi, T, kind) < price:
        raise OutOfBounds(f"{kind} price {price} needs a volatility above {vol_max}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if black_scholes(s0, strike, mid, T, kind) < price:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
