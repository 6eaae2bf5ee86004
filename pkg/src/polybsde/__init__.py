"""Polynomial asymptotic expansion of BSDEs driven by stochastic-volatility factors.

Value functions are expanded as polynomials in the forward factors ``(X, Y)``
whose time-dependent coefficients solve a recursive system of linear ODEs.
"""
from .edgeworth import (call_price_closed, cumulants_to_moments, edgeworth_density, implied_vol,
                        moments_to_cumulants, price_numeric, put_price_closed)
from .errors import (DivergedSolve, DomainError, EmptySample, GridMismatch, InvalidCumulants, OutOfBounds,
                     OutOfGridTime, OutOfRangeOrder, ParameterError, PolyBsdeError, QuadratureNotConverged,
                     RankDeficient)
from .generic import DriverDerivatives, JumpMomentSpec, QuadCovSpec, solve_generic
from .heston import (GaussianJump, HestonParams, IntensityPoly, TerminalSpec, gaussian_jump_moment,
                     heston_moments, heston_solve, jump_beta)
from .montecarlo import (McConfig, ResidualStats, pathwise_residual, residual_parts, residual_stats,
                         simulate_heston, simulate_sabr, simulate_utility)
from .ode_core import SampledFunction, TimeGrid, rk4_backward, solve_zeroth
from .poly_table import CoefficientTable, evaluate_controls, evaluate_value
from .sabr import SabrParams, sabr_moments, sabr_solve, sabr_transform, sabr_untransform
from .utility import (LiabilitySpec, ThetaSpec, UtilityParams, fit_liability_poly, riccati_exact,
                      utility_solve)

__version__ = "0.1.0"
