import numpy as np
import pytest

from polybsde.errors import DivergedSolve, ParameterError
from polybsde.generic import (DriverDerivatives, JumpMomentSpec, QuadCovSpec, finite_difference_derivatives,
                              solve_generic)
from polybsde.montecarlo import McConfig, ScalarModel, Target, residual_parts, residual_stats
from polybsde.ode_core import TimeGrid, solve_zeroth

G = TimeGrid(1.0, 200)
NONE = JumpMomentSpec.none()


def test_martingale_identity():
    t = solve_generic(DriverDerivatives(lambda t, x, v, z, u: 0.0), QuadCovSpec(s0=0.04), NONE, (0, 1, 0), G)
    assert np.all(t[1, 1, 0] == 1.0)
    others = [key for key in t.keys if key != (1, 1, 0)]
    assert all(np.all(t[key] == 0.0) for key in others)


def test_linear_in_z():
    c = 0.3
    d = DriverDerivatives(lambda t, x, v, z, u: c * z, fz=lambda t, v: c)
    t = solve_generic(d, QuadCovSpec(s0=0.04), NONE, (0, 1, 0), G)
    assert np.allclose(t[1, 1, 0], 1.0)
    assert np.allclose(t[1, 0, 0], -c * (1.0 - G.nodes), atol=1e-14)
    assert np.all(t[2, 2, 0] == 0.0) and np.allclose(t[2, 1, 0], 0.0) and np.allclose(t[2, 0, 0], 0.0)


def test_exponential_zeroth_order():
    d = DriverDerivatives(lambda t, x, v, z, u: -v, fv=lambda t, v: -1.0)
    t = solve_generic(d, QuadCovSpec(s0=0.01), NONE, (1, 0, 0), G)
    assert np.allclose(t[0, 0, 0], np.exp(1.0 - G.nodes), rtol=1e-10)
    assert all(np.allclose(t[key], 0.0) for key in t.keys if key != (0, 0, 0))


def test_zeroth_matches_scalar_solve():
    f = lambda t, x, v, z, u: np.sin(v) + t  # noqa: E731
    t = solve_generic(finite_difference_derivatives(f), QuadCovSpec(s0=0.01), NONE, (0.4, 1, 0), G)
    v0 = solve_zeroth(lambda s, v: f(s, 0, v, 0, 0), 0.4, G)
    assert np.array_equal(t[0, 0, 0], v0.values)


def test_second_order_vanishes_for_linear_system():
    d = DriverDerivatives(lambda t, x, v, z, u: 0.2 * x + 0.1 * v - 0.3 * z,
                          fx=lambda t, v: 0.2, fv=lambda t, v: 0.1, fz=lambda t, v: -0.3)
    t = solve_generic(d, QuadCovSpec(s0=0.04), NONE, (0.1, 1.0, 0.0), G)
    assert np.allclose(t[2, 2, 0], 0.0) and np.allclose(t[2, 1, 0], 0.0) and np.allclose(t[2, 0, 0], 0.0)
    assert not np.allclose(t[1, 0, 0], 0.0)


def test_jump_moments_enter_second_order():
    d = DriverDerivatives(lambda t, x, v, z, u: 0.5 * u, fu=lambda t, v: 0.5)
    jumps = JumpMomentSpec.constant([1.0, 0.0, 0.05])
    t = solve_generic(d, QuadCovSpec(s0=0.0), jumps, (0, 0, 2.0), G)
    # zero mean jumps: only the second moment couples v2_2 (constant 2) into v2_0
    assert np.allclose(t[2, 0, 0], -0.5 * 0.5 * 0.05 * 2.0 * (1.0 - G.nodes), atol=1e-14)


def test_quad_cov_checked():
    with pytest.raises(ParameterError):
        solve_generic(DriverDerivatives(lambda *a: 0.0), QuadCovSpec(s2=1.0, s0=-0.5), NONE, (0, 1, 0), G)
    with pytest.raises(ParameterError):
        JumpMomentSpec(lambda t, n: 2.0)
    QuadCovSpec(s2=1.0, s1=-2.0, s0=1.0).check(0.0)


def test_divergence_tagged():
    d = DriverDerivatives(lambda t, x, v, z, u: -v * v, fv=lambda t, v: -2 * v)
    with pytest.raises(DivergedSolve) as exc:
        solve_generic(d, QuadCovSpec(s0=0.01), NONE, (5.0, 0, 0), TimeGrid(2.0, 400))
    assert exc.value.label == (0, 0)


def test_finite_difference_helper():
    f = lambda t, x, v, z, u: x * x * v + 3 * z * u + v ** 3  # noqa: E731
    d = finite_difference_derivatives(f)
    vals = d.at(0.0, 0.5)
    assert vals["fv"] == pytest.approx(0.75, rel=1e-6)
    assert vals["fxx"] == pytest.approx(1.0, rel=1e-5)
    assert vals["fzu"] == pytest.approx(3.0, rel=1e-5)
    assert vals["fvv"] == pytest.approx(3.0, rel=1e-5)


def test_order_two_residual_mean_zero():
    """Martingale diffusion, quadratic payoff, linear driver: E[H - V~(2)] is zero up to sampling error."""
    s2, s1, s0, c = 0.05, 0.02, 0.04, 0.2
    quad = QuadCovSpec(s2=s2, s1=s1, s0=s0)
    drift = lambda t, x: 0.0 * x  # noqa: E731
    driver = lambda t, x, v, z, u: c * z - 0.1 * v  # noqa: E731
    d = DriverDerivatives(driver, fz=lambda t, v: c, fv=lambda t, v: -0.1)
    grid = TimeGrid(1.0, 200)
    table = solve_generic(d, quad, NONE, (0.3, 1.0, 2.0), TimeGrid(1.0, 800))
    model = ScalarModel(drift, quad, lambda t, x, v, z, u: driver(t, x, v, z, u))
    H = lambda x, y: 0.3 + x + x * x  # noqa: E731
    parts = residual_parts(model, [Target(table, 2, H)], McConfig(20000, 200, seed=5), grid)
    st = residual_stats(parts.residuals[0])
    assert abs(st.mean) < 3 * st.stderr + 1e-4
