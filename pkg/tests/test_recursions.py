"""Coefficient recursions against an independent dense-polynomial oracle.

The oracle never looks at index formulas: it rebuilds the order-n polynomials
from a state vector, applies the generator and the driver with plain
polynomial arithmetic, and reads the time derivatives back off the monomials.
"""
from itertools import product
from math import comb, factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import convolve2d

from polybsde._system import sv_factors
from polybsde.heston import GaussianJump, HestonParams, IntensityPoly, gaussian_jump_moments, heston_system, jump_beta
from polybsde.ode_core import TimeGrid
from polybsde.poly_table import entry_index, entry_keys
from polybsde.sabr import SabrParams, b_derivative, sabr_system
from polybsde.utility import LiabilitySpec, ThetaSpec, UtilityParams, utility_system

GRID = TimeGrid(1.0, 10)


class Dense:
    """Polynomials as arrays ``c[i, k]`` of ``x**i y**k`` coefficients (no factorials)."""

    def __init__(self, size):
        self.D = size

    def zero(self):
        return np.zeros((self.D, self.D))

    def dx(self, c):
        out = self.zero()
        out[:-1] = c[1:] * np.arange(1, self.D)[:, None]
        return out

    def dy(self, c):
        out = self.zero()
        out[:, :-1] = c[:, 1:] * np.arange(1, self.D)[None, :]
        return out

    def times_y(self, c, p=1):
        out = self.zero()
        out[:, p:] = c[:, :self.D - p]
        return out

    def times_x(self, c, p=1):
        out = self.zero()
        out[p:] = c[:self.D - p]
        return out

    def mul(self, a, b):
        return convolve2d(a, b)[:self.D, :self.D]


def to_polys(w, n_max, D):
    idx = entry_index(n_max)
    polys = []
    for n in range(n_max + 1):
        c = np.zeros((D, D))
        for i in range(n + 1):
            for k in range(n + 1 - i):
                c[i, k] = w[idx[n, i, k]] / (factorial(i) * factorial(k))
        polys.append(c)
    return polys


def from_polys(rhs_polys, n_max):
    out = np.zeros(len(entry_keys(n_max)))
    idx = entry_index(n_max)
    for n, c in enumerate(rhs_polys):
        deg = np.add.outer(np.arange(c.shape[0]), np.arange(c.shape[1]))
        assert np.allclose(c[deg > n], 0.0, atol=1e-9), "oracle produced terms above the order"
        for i in range(n + 1):
            for k in range(n + 1 - i):
                out[idx[n, i, k]] = c[i, k] * factorial(i) * factorial(k)
    return out


def generator(P, c, f, vol_power):
    """``-(1+y)^p (s2 d_xx + rsa d_xy + a2 d_yy)``."""
    core = f["s2"] * P.dx(P.dx(c)) + f["rsa"] * P.dx(P.dy(c)) + f["a2"] * P.dy(P.dy(c))
    out = core.copy()
    for _ in range(vol_power):
        out = out + P.times_y(out)
    return -out


def heston_oracle(params, n_max, w):
    P = Dense(n_max + 3)
    f = sv_factors(params.sigma, params.alpha, params.rho, params.kappa, GRID)
    polys = to_polys(w, n_max, P.D)
    beta = jump_beta(params.jump)
    q = gaussian_jump_moments(params.jump, n_max + 2)
    lam = params.intensity.coeffs
    get = lambda n: polys[n] if n >= 0 else P.zero()  # noqa: E731
    out = []
    for n in range(n_max + 1):
        r = generator(P, polys[n], f, 1)
        r += f["s2"] * P.dx(polys[n]) + f["s2"] * P.times_y(P.dx(get(n - 1)))
        r += f["kappa"] * P.times_y(P.dy(get(n - 1)))
        for l, a_l in enumerate(lam):
            base = get(n - l)
            comp = beta * P.dx(base)
            d = base
            for a in range(1, n_max + 2):
                d = P.dx(d)
                comp -= q[a] / factorial(a) * d
            r += a_l * P.times_y(comp, l)
        out.append(r)
    return from_polys(out, n_max)


def sabr_oracle(params, n_max, w):
    P = Dense(n_max + 3)
    f = sv_factors(params.sigma, params.alpha, params.rho, params.kappa, GRID)
    polys = to_polys(w, n_max, P.D)
    get = lambda n: polys[n] if n >= 0 else P.zero()  # noqa: E731
    out = []
    for n in range(n_max + 1):
        r = generator(P, polys[n], f, 2)
        r += f["kappa"] * P.times_y(P.dy(get(n - 1)))
        for l in range(n + 1):
            blk = P.dx(get(n - l)) + 2 * P.times_y(P.dx(get(n - l - 1))) + P.times_y(P.dx(get(n - l - 2)), 2)
            r += params.beta * f["s2"] * b_derivative(params.beta, l) / factorial(l) * P.times_x(blk, l)
        out.append(r)
    return from_polys(out, n_max)


def utility_oracle(params, n_max, w):
    P = Dense(n_max + 3)
    f = sv_factors(params.sigma, params.alpha, params.rho, params.kappa, GRID)
    polys = to_polys(w, n_max, P.D)
    get = lambda n: polys[n] if n >= 0 else P.zero()  # noqa: E731
    out = []
    for n in range(n_max + 1):
        r = generator(P, polys[n], f, 1)
        r += f["s2"] * P.dx(polys[n]) + f["s2"] * P.times_y(P.dx(get(n - 1)))
        r += f["kappa"] * P.times_y(P.dy(get(n - 1)))
        for a in range(n + 1):
            r[a, n - a] += 0.5 * params.theta.derivative(a, n - a) / (factorial(a) * factorial(n - a))
        sq = P.zero()
        for l in range(1, n):
            sq += P.mul(P.dy(get(l)), P.dy(get(n - l)))
        for l in range(1, n - 1):
            sq += P.times_y(P.mul(P.dy(get(l)), P.dy(get(n - 1 - l))))
        r -= f["a2xi2"] * sq
        out.append(r)
    return from_polys(out, n_max)


def system_rhs(sysm, params, w, t=0.4):
    f = sv_factors(params.sigma, params.alpha, params.rho, params.kappa, GRID)
    return sysm.rhs(f, GRID)(t, w)


def heston_params(rng, degree):
    return HestonParams(rng.uniform(0.05, 0.5), rng.uniform(0, 1), rng.uniform(-1, 1), rng.uniform(0, 2),
                        IntensityPoly(tuple(rng.uniform(0.5, 3, size=degree + 1)), y_range=(0, 1)),
                        GaussianJump(rng.uniform(-0.1, 0.1), rng.uniform(0, 0.1)))


@given(seed=st.integers(0, 2 ** 32 - 1), n_max=st.integers(0, 7), degree=st.integers(0, 3))
def test_heston_rhs_matches_oracle(seed, n_max, degree):
    rng = np.random.default_rng(seed)
    p = heston_params(rng, degree)
    w = rng.normal(size=len(entry_keys(n_max)))
    assert np.allclose(system_rhs(heston_system(p, n_max), p, w), heston_oracle(p, n_max, w),
                       rtol=1e-11, atol=1e-11)


@given(seed=st.integers(0, 2 ** 32 - 1), n_max=st.integers(0, 7), beta=st.sampled_from([0.0, 0.4, 0.9]))
def test_sabr_rhs_matches_oracle(seed, n_max, beta):
    rng = np.random.default_rng(seed)
    p = SabrParams(rng.uniform(0.05, 0.5), rng.uniform(0, 1), rng.uniform(-1, 1), rng.uniform(0, 2), beta)
    w = rng.normal(size=len(entry_keys(n_max)))
    assert np.allclose(system_rhs(sabr_system(p, n_max), p, w), sabr_oracle(p, n_max, w), rtol=1e-11, atol=1e-11)


@given(seed=st.integers(0, 2 ** 32 - 1), n_max=st.integers(0, 7))
def test_utility_rhs_matches_oracle(seed, n_max):
    rng = np.random.default_rng(seed)
    p = UtilityParams(rng.uniform(0.05, 0.5), rng.uniform(0, 1), rng.uniform(-1, 1), rng.uniform(0, 2),
                      ThetaSpec(rng.uniform(0, 0.1), rng.uniform(-1, 1)), LiabilitySpec.sine(0.6), 1.0)
    w = rng.normal(size=len(entry_keys(n_max)))
    assert np.allclose(system_rhs(utility_system(p, n_max), p, w), utility_oracle(p, n_max, w),
                       rtol=1e-11, atol=1e-11)


def brute_force_convolution(w, n_max):
    """Gamma^2 and Y Gamma^2 blocks by enumerating every index tuple and filtering by validity."""
    idx = entry_index(n_max)
    out = np.zeros(len(idx))
    keys = entry_keys(n_max)
    for (n, i, k) in keys:
        total = 0.0
        for l in range(n + 1):
            for (l2, lag) in ((n - l, 0), (n - l - 1, 1)):
                for i1, k1 in product(range(i + 1), range(1, k + 2)):
                    i2, k2 = i - i1, k - lag - (k1 - 1) + 1
                    if (l, i1, k1) not in idx or (l2, i2, k2) not in idx or k2 < 1:
                        continue
                    if lag == 0:
                        wgt = comb(i, i1) * comb(k, k1 - 1)
                    else:
                        wgt = comb(i, i1) * comb(k - 1, k1 - 1) * k
                    total += wgt * w[idx[l, i1, k1]] * w[idx[l2, i2, k2]]
        out[idx[n, i, k]] = -total
    return out


def test_convolution_bounds_equal_brute_force():
    """Printed summation bounds versus validity-filtered enumeration on 100 random tables."""
    n_max = 8
    p = UtilityParams(0.0, 1.0, 0.0, 0.0, ThetaSpec(0.0, 0.0), LiabilitySpec.sine(0.0), 1.0)
    sysm = utility_system(p, n_max)
    f = {"s2": 0.0, "rsa": 0.0, "a2": 0.0, "kappa": 0.0, "one": 0.0, "a2xi2": 1.0}
    rhs = sysm.rhs(f, GRID)
    rng = np.random.default_rng(7)
    for _ in range(100):
        w = rng.normal(size=len(entry_keys(n_max)))
        assert np.allclose(rhs(0.0, w), brute_force_convolution(w, n_max), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("build", [
    lambda n: heston_system(HestonParams(0.2, 0.5, -0.5, 1.0, IntensityPoly((8, 10, 5)), GaussianJump(0.01, 0.03)), n),
    lambda n: sabr_system(SabrParams(0.2, 0.5, -0.5, 1.0, 0.4), n),
    lambda n: utility_system(UtilityParams(0.2, 0.5, -0.5, 1.0, ThetaSpec(0.01, 0.4), LiabilitySpec.sine(0.6)), n),
])
def test_terms_only_reference_solved_entries(build):
    sysm = build(8)
    pairs = list(sysm.dependency_pairs())
    assert pairs
    assert all(c <= r for r, c in pairs)


def test_entry_layout_is_solve_order():
    keys = entry_keys(5)
    expected = [(n, m - k, k) for n in range(6) for m in range(n, -1, -1) for k in range(m + 1)]
    assert list(keys) == expected
