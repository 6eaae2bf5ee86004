"""Euler simulation of the forward models and path-wise residuals of truncated solutions.

Paths are produced in fixed-size blocks.  Block ``b`` draws from its own
counter-based stream ``Philox(SeedSequence(seed, spawn_key=(b,)))``, so every
path is the same whatever the number of worker threads.  Residual evaluation
consumes one block at a time and keeps only per-path accumulators, which lets
a few hundred thousand paths run in modest memory.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySample, GridMismatch, ParameterError
from .heston import HestonParams, gaussian_jump_moments, jump_beta
from .ode_core import TimeGrid, node_values
from .poly_table import CoefficientTable, inv_factorials
from .sabr import SabrParams
from .utility import UtilityParams

DEFAULT_MC_STEPS_PER_YEAR = 300


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    steps_per_year: int = DEFAULT_MC_STEPS_PER_YEAR
    seed: int = 0
    antithetic: bool = False
    block_size: int = 5000
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ParameterError("n_paths must be positive")
        if self.steps_per_year < 1 or self.block_size < 1 or self.threads < 1:
            raise ParameterError("steps_per_year, block_size and threads must be positive")
        if self.antithetic and self.block_size % 2:
            raise ParameterError("antithetic sampling needs an even block size")

    def grid(self, t_end: float) -> TimeGrid:
        return TimeGrid.per_year(t_end, self.steps_per_year)

    def blocks(self) -> list[tuple[int, int]]:
        """``(block_id, n_paths_in_block)`` covering ``n_paths``."""
        full, rest = divmod(self.n_paths, self.block_size)
        out = [(b, self.block_size) for b in range(full)]
        if rest:
            out.append((full, rest + (rest % 2 if self.antithetic else 0)))
        return out


def block_rng(seed: int, block_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block_id,))))


@dataclass
class PathSet:
    """Simulated paths of one block (or several concatenated).

    ``X`` and ``Y`` have shape ``(paths, nodes)``.  ``jumps`` holds the summed
    jump sizes of each step and ``n_jumps`` their count (Heston only).
    ``block_ids`` records the stream each path came from.
    """

    grid: TimeGrid
    X: np.ndarray
    Y: np.ndarray
    jumps: np.ndarray | None = None
    n_jumps: np.ndarray | None = None
    block_ids: np.ndarray | None = None
    truncated_steps: int = 0
    breached: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def truncated_fraction(self) -> float:
        """Share of (path, step) pairs where ``Y + 1 < 0`` and the square root was floored."""
        return self.truncated_steps / max(1, self.n_paths * self.grid.n_steps)

    def continuous_increments(self) -> np.ndarray:
        dx = np.diff(self.X, axis=1)
        return dx if self.jumps is None else dx - self.jumps

    @staticmethod
    def concat(parts: Sequence["PathSet"]) -> "PathSet":
        def cat(name):
            vals = [getattr(p, name) for p in parts]
            return None if vals[0] is None else np.concatenate(vals)
        return PathSet(parts[0].grid, cat("X"), cat("Y"), cat("jumps"), cat("n_jumps"),
                       cat("block_ids"), sum(p.truncated_steps for p in parts), cat("breached"))


def _normals(rng, shape, antithetic):
    if not antithetic:
        return rng.standard_normal(shape)
    half = rng.standard_normal((shape[0] // 2,) + shape[1:])
    return np.concatenate([half, -half])


class HestonModel:
    """Log-price with Gaussian jumps and polynomial intensity; shifted square-root variance."""

    tag = "heston"
    has_jumps = True

    def __init__(self, params: HestonParams):
        self.params = params
        self.beta = jump_beta(params.jump)

    def prepare(self, grid: TimeGrid):
        p = self.params
        self.sig = node_values(p.sigma, grid)
        self.alp = node_values(p.alpha, grid)
        self.rho = node_values(p.rho, grid)
        self.kap = node_values(p.kappa, grid)

    def simulate(self, rng, n: int, grid: TimeGrid, antithetic=False) -> PathSet:
        self.prepare(grid)
        p, h = self.params, grid.h
        S = grid.n_steps
        X = np.zeros((n, S + 1))
        Y = np.zeros((n, S + 1))
        J = np.zeros((n, S))
        N = np.zeros((n, S), dtype=np.int64)
        trunc = 0
        sq = np.sqrt(h)
        for i in range(S):
            x, y = X[:, i], Y[:, i]
            g = _normals(rng, (n, 3), antithetic)
            dw = g[:, 0]
            db = self.rho[i] * dw + np.sqrt(1.0 - self.rho[i] ** 2) * g[:, 1]
            trunc += int(np.count_nonzero(y + 1.0 < 0))
            sv = np.sqrt(np.maximum(y + 1.0, 0.0))
            lam = np.maximum(p.intensity(y), 0.0)
            cnt = rng.poisson(lam * h)
            jump = cnt * p.jump.mu + np.sqrt(cnt) * p.jump.sigma * g[:, 2]
            s = self.sig[i]
            X[:, i + 1] = x - (0.5 * s * s * (y + 1.0) + lam * self.beta) * h + s * sv * sq * dw + jump
            Y[:, i + 1] = y - self.kap[i] * y * h + self.alp[i] * sv * sq * db
            J[:, i] = jump
            N[:, i] = cnt
        return PathSet(grid, X, Y, J, N, truncated_steps=trunc)

    def driver(self, i, x, y, V, Z, G, EU):
        p = self.params
        s = self.sig[i]
        lam = np.maximum(p.intensity(y), 0.0)
        return Z * (0.5 * s * s * (y + 1.0) + lam * self.beta) + self.kap[i] * G * y - lam * EU

    def jump_moments(self, n_max):
        return gaussian_jump_moments(self.params.jump, n_max)


class SabrModel:
    """CEV-free SABR coordinates with the support guard ``1 + (1-beta) X > 0``."""

    tag = "sabr"
    has_jumps = False

    def __init__(self, params: SabrParams):
        self.params = params

    def prepare(self, grid):
        p = self.params
        self.sig = node_values(p.sigma, grid)
        self.alp = node_values(p.alpha, grid)
        self.rho = node_values(p.rho, grid)
        self.kap = node_values(p.kappa, grid)

    def b(self, x):
        return 1.0 / (1.0 + (1.0 - self.params.beta) * x)

    def simulate(self, rng, n, grid, antithetic=False) -> PathSet:
        self.prepare(grid)
        p, h = self.params, grid.h
        S = grid.n_steps
        floor = p.floor + 1e-8
        X = np.zeros((n, S + 1))
        Y = np.zeros((n, S + 1))
        breached = np.zeros(n, dtype=bool)
        sq = np.sqrt(h)
        for i in range(S):
            x, y = X[:, i], Y[:, i]
            g = _normals(rng, (n, 2), antithetic)
            dw = g[:, 0]
            db = self.rho[i] * dw + np.sqrt(1.0 - self.rho[i] ** 2) * g[:, 1]
            s = self.sig[i]
            vol = 1.0 + y
            xn = x + s * vol * sq * dw - 0.5 * p.beta * s * s * self.b(x) * vol * vol * h
            low = xn <= floor
            if low.any():
                breached |= low
                xn = np.where(low, floor, xn)
            X[:, i + 1] = xn
            Y[:, i + 1] = y + self.alp[i] * vol * sq * db - self.kap[i] * y * h
        return PathSet(grid, X, Y, breached=breached)

    def driver(self, i, x, y, V, Z, G, EU):
        s = self.sig[i]
        vol = 1.0 + y
        return 0.5 * self.params.beta * s * s * self.b(x) * vol * vol * Z + self.kap[i] * y * G


class UtilityModel:
    """Physical-measure dynamics with risk premium ``theta = +sqrt(Theta)``."""

    tag = "utility"
    has_jumps = False

    def __init__(self, params: UtilityParams):
        self.params = params

    def prepare(self, grid):
        p = self.params
        self.grid = grid
        self.sig = node_values(p.sigma, grid)
        self.alp = node_values(p.alpha, grid)
        self.rho = node_values(p.rho, grid)
        self.kap = node_values(p.kappa, grid)

    def theta_sq(self, i, x, y):
        return self.params.theta(x, y, self.grid.nodes[i])

    def simulate(self, rng, n, grid, antithetic=False) -> PathSet:
        self.prepare(grid)
        h = grid.h
        S = grid.n_steps
        X = np.zeros((n, S + 1))
        Y = np.zeros((n, S + 1))
        trunc = 0
        sq = np.sqrt(h)
        for i in range(S):
            x, y = X[:, i], Y[:, i]
            g = _normals(rng, (n, 2), antithetic)
            dw = g[:, 0]
            r = self.rho[i]
            db = r * dw + np.sqrt(1.0 - r * r) * g[:, 1]
            trunc += int(np.count_nonzero(y + 1.0 < 0))
            sv = np.sqrt(np.maximum(y + 1.0, 0.0))
            th = np.sqrt(np.maximum(self.theta_sq(i, x, y), 0.0))
            s, a = self.sig[i], self.alp[i]
            X[:, i + 1] = x + s * sv * (sq * dw + th * h) - 0.5 * s * s * (y + 1.0) * h
            Y[:, i + 1] = y + a * sv * (sq * db + r * th * h) - self.kap[i] * y * h
        return PathSet(grid, X, Y, truncated_steps=trunc)

    def driver(self, i, x, y, V, Z, G, EU):
        s, a, r = self.sig[i], self.alp[i], self.rho[i]
        vol = 1.0 + y
        return (0.5 * self.theta_sq(i, x, y) - 0.5 * a * a * (1.0 - r * r) * vol * G * G
                + 0.5 * s * s * vol * Z + self.kap[i] * y * G)


class ScalarModel:
    """One factor ``dX = drift(t, X) dt + sqrt(quad(t, X)) dW`` with a general driver."""

    tag = "scalar"
    has_jumps = False

    def __init__(self, drift: Callable, quad, driver: Callable):
        self.drift_fn = drift
        self.quad = quad
        self.driver_fn = driver

    def prepare(self, grid):
        self.grid = grid

    def simulate(self, rng, n, grid, antithetic=False) -> PathSet:
        self.prepare(grid)
        h = grid.h
        S = grid.n_steps
        X = np.zeros((n, S + 1))
        sq = np.sqrt(h)
        for i in range(S):
            t, x = grid.nodes[i], X[:, i]
            dw = _normals(rng, (n,), antithetic)
            X[:, i + 1] = x + self.drift_fn(t, x) * h + np.sqrt(np.maximum(self.quad(t, x), 0.0)) * sq * dw
        return PathSet(grid, X, np.zeros_like(X))

    def driver(self, i, x, y, V, Z, G, EU):
        return self.driver_fn(self.grid.nodes[i], x, V, Z, EU)


@dataclass(frozen=True)
class Target:
    """One truncated solution to validate: ``table`` summed to ``order`` against ``terminal(X_T, Y_T)``."""

    table: CoefficientTable
    order: int
    terminal: Callable
    label: object = None


def power_terminal(m: int) -> Callable:
    return lambda x, y: x ** m


@dataclass
class ResidualParts:
    """Per-target, per-path pieces of ``H - V~(T)``; arrays have shape (targets, paths)."""

    terminal: np.ndarray
    v0: np.ndarray
    driver: np.ndarray
    stochastic: np.ndarray
    jumps: np.ndarray
    labels: list = field(default_factory=list)

    @property
    def approximation(self) -> np.ndarray:
        """``V~(T) = V0 + int f dt + int Z dX^c + int Gamma dY + jump sum``."""
        return self.v0[:, None] + self.driver + self.stochastic + self.jumps

    @property
    def residuals(self) -> np.ndarray:
        return self.terminal - self.approximation

    def consistency(self) -> np.ndarray:
        """``V0 - E[H - int Z dX - int Gamma dY - int f dt]`` accumulated term by term."""
        inner = self.terminal - self.stochastic - self.jumps - self.driver
        return self.v0 - inner.mean(axis=1)


class _Evaluator:
    """Coefficients of every target re-expressed on one monomial basis.

    For each path step the value, both controls and (Heston) the expected
    jump control of all targets are a single matrix product of the monomials
    ``x^i y^k / (i! k!)``, ``i + k < N``, with a precomputed coefficient block.
    """

    def __init__(self, model, targets: Sequence[Target], grid: TimeGrid):
        self.model = model
        self.targets = list(targets)
        self.grid = grid
        N = max(t.table.n_max for t in targets) + 1
        S = grid.n_steps
        T = len(targets)
        self.mono_i = np.array([i for d in range(N) for i in range(d, -1, -1)])
        self.mono_k = np.array([d - i for d in range(N) for i in range(d, -1, -1)])
        kinds = 4 if model.has_jumps else 3
        C = np.zeros((S, self.mono_i.size, kinds, T))
        self.v0 = np.empty(T)
        q = model.jump_moments(N - 1) * inv_factorials(N - 1) if model.has_jumps else None
        ii, kk = self.mono_i, self.mono_k
        for j, t in enumerate(targets):
            r = t.table.grid.refinement_of(grid)
            full = t.table.truncated(t.order)
            self.v0[j] = full[0, 0, 0]
            o = full.shape[1]
            W = np.zeros((S, N + 1, N + 1))
            W[:, :o, :o] = full[: r * S + 1: r][:S]
            C[:, :, 0, j] = W[:, ii, kk]
            C[:, :, 1, j] = W[:, ii + 1, kk]
            C[:, :, 2, j] = W[:, ii, kk + 1]
            if model.has_jumps:
                for a in range(1, o):
                    C[:, :, 3, j] += q[a] * W[:, np.minimum(ii + a, N), kk] * (ii + a <= N - 1)
        self.CT = np.ascontiguousarray(C.reshape(S, self.mono_i.size, kinds * T).transpose(0, 2, 1))
        self.N, self.T, self.kinds = N, T, kinds
        self.fi = inv_factorials(N - 1)

    def monomials(self, x, y):
        """Monomial matrix of shape ``(n_monomials, paths)``."""
        xp = np.empty((self.N, x.size))
        yp = np.empty((self.N, y.size))
        xp[0] = 1.0
        yp[0] = 1.0
        for j in range(1, self.N):
            np.multiply(xp[j - 1], x * (1.0 / j), out=xp[j])
            np.multiply(yp[j - 1], y * (1.0 / j), out=yp[j])
        return xp[self.mono_i] * yp[self.mono_k]

    def evaluate(self, paths: PathSet, model) -> ResidualParts:
        if paths.grid != self.grid:
            raise GridMismatch("paths were simulated on a different grid")
        model.prepare(self.grid)
        P = paths.n_paths
        T, K = self.T, self.kinds
        drv = np.zeros((T, P))
        sto = np.zeros((T, P))
        jmp = np.zeros((T, P))
        dxc = paths.continuous_increments()
        dY = np.diff(paths.Y, axis=1)
        h = self.grid.h
        for i in range(self.grid.n_steps):
            x, y = paths.X[:, i], paths.Y[:, i]
            vals = (self.CT[i] @ self.monomials(x, y)).reshape(K, T, P)
            V, Z, G = vals[0], vals[1], vals[2]
            EU = vals[3] if K == 4 else 0.0
            drv += model.driver(i, x, y, V, Z, G, EU) * h
            sto += Z * dxc[:, i] + G * dY[:, i]
            if paths.jumps is not None:
                hit = np.nonzero(paths.jumps[:, i])[0]
                if hit.size:
                    vj = self.CT[i][:T] @ self.monomials(x[hit] + paths.jumps[hit, i], y[hit])
                    jmp[:, hit] += vj - V[:, hit]
        term = np.array([t.terminal(paths.X[:, -1], paths.Y[:, -1]) * np.ones(P) for t in self.targets])
        return ResidualParts(term, self.v0.copy(), drv, sto, jmp, [t.label for t in self.targets])


def _run_blocks(fn, config: McConfig):
    blocks = config.blocks()
    if config.threads == 1 or len(blocks) == 1:
        return [fn(b, n) for b, n in blocks]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        return list(pool.map(lambda bn: fn(*bn), blocks))


def simulate(model, config: McConfig, grid: TimeGrid) -> PathSet:
    """All paths at once; memory grows with ``n_paths * nodes``."""

    def one(b, n):
        ps = model.simulate(block_rng(config.seed, b), n, grid, config.antithetic)
        ps.block_ids = np.full(n, b)
        return ps

    return PathSet.concat(_run_blocks(one, config))


def simulate_heston(params: HestonParams, config: McConfig, grid: TimeGrid) -> PathSet:
    return simulate(HestonModel(params), config, grid)


def simulate_sabr(params: SabrParams, config: McConfig, grid: TimeGrid) -> PathSet:
    return simulate(SabrModel(params), config, grid)


def simulate_utility(params: UtilityParams, config: McConfig, grid: TimeGrid) -> PathSet:
    return simulate(UtilityModel(params), config, grid)


def make_model(tag: str, params):
    models = {"heston": HestonModel, "sabr": SabrModel, "utility": UtilityModel}
    if tag not in models:
        raise ParameterError(f"unknown model {tag!r}")
    return models[tag](params)


def residual_parts(model, targets: Sequence[Target], config: McConfig, grid: TimeGrid) -> ResidualParts:
    """Simulate block by block and accumulate residual pieces for every target."""
    ev = _Evaluator(model, targets, grid)

    def one(b, n):
        return ev.evaluate(model.simulate(block_rng(config.seed, b), n, grid, config.antithetic), model)

    parts = _run_blocks(one, config)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=1)  # noqa: E731
    return ResidualParts(cat("terminal"), ev.v0.copy(), cat("driver"), cat("stochastic"), cat("jumps"),
                         [t.label for t in targets])


def pathwise_residuals(model, targets: Sequence[Target], paths: PathSet) -> np.ndarray:
    """``H(X_T) - V~(T)`` for already simulated paths; shape (targets, paths)."""
    ev = _Evaluator(model, targets, paths.grid)
    return ev.evaluate(paths, model).residuals


def pathwise_residual(model, table: CoefficientTable, order: int, paths: PathSet, terminal=None) -> np.ndarray:
    terminal = terminal or power_terminal(1)
    return pathwise_residuals(model, [Target(table, order, terminal)], paths)[0]


@dataclass(frozen=True)
class ResidualStats:
    mean: float
    stdev: float
    stderr: float
    count: int
    order: int | None = None


def residual_stats(samples, order: int | None = None) -> ResidualStats:
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise EmptySample("no samples")
    mean = float(np.mean(s))
    sd = float(np.std(s, ddof=1)) if s.size > 1 else float("nan")
    return ResidualStats(mean, sd, sd / np.sqrt(s.size) if s.size > 1 else float("nan"), int(s.size), order)


def terminal_samples(model, config: McConfig, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """``(X_T, Y_T)`` for every path, simulated block by block."""

    def one(b, n):
        ps = model.simulate(block_rng(config.seed, b), n, grid, config.antithetic)
        return ps.X[:, -1].copy(), ps.Y[:, -1].copy()

    out = _run_blocks(one, config)
    return np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out])


def moment_estimates(x_terminal, m_max: int) -> list[ResidualStats]:
    """Sample raw moments ``E[X_T**m]`` with standard errors."""
    return [residual_stats(x_terminal ** m, order=m) for m in range(1, m_max + 1)]


def option_prices(s_terminal, strikes, kind: str = "call") -> list[ResidualStats]:
    s_terminal = np.asarray(s_terminal, dtype=float)
    out = []
    for k in strikes:
        pay = np.maximum(s_terminal - k, 0.0) if kind == "call" else np.maximum(k - s_terminal, 0.0)
        out.append(residual_stats(pay))
    return out


__all__ = [
    "McConfig", "PathSet", "HestonModel", "SabrModel", "UtilityModel", "ScalarModel", "Target",
    "ResidualParts", "ResidualStats", "block_rng", "simulate", "simulate_heston", "simulate_sabr",
    "simulate_utility", "make_model", "residual_parts", "pathwise_residual", "pathwise_residuals",
    "residual_stats", "terminal_samples", "moment_estimates", "option_prices", "power_terminal",
]
