"""Fixed-step backward RK4 on a uniform time grid.

All coefficient functions of the expansion live on one ``TimeGrid``; the
integrators below march from ``t_end`` down to ``t_start`` and return the
solution at every node.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import DivergedSolve, GridMismatch, OutOfGridTime, ParameterError

DEFAULT_CAP = 1e12
DEFAULT_STEPS_PER_YEAR = 1000


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_steps: int
    t_start: float = 0.0

    def __post_init__(self):
        if not self.n_steps >= 1:
            raise ParameterError(f"n_steps must be positive, got {self.n_steps}")
        if not self.t_end > self.t_start:
            raise ParameterError("t_end must exceed t_start")

    @classmethod
    def per_year(cls, t_end: float, steps_per_year: int = DEFAULT_STEPS_PER_YEAR) -> "TimeGrid":
        return cls(float(t_end), max(1, int(round(steps_per_year * t_end))))

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = self.t_start + self.h * np.arange(self.n_nodes)
        nodes[-1] = self.t_end
        return nodes

    def left_index(self, t: float) -> int:
        """Index of the node at or immediately left of ``t``."""
        span = self.t_end - self.t_start
        tol = 1e-12 * max(1.0, span)
        if t < self.t_start - tol or t > self.t_end + tol:
            raise OutOfGridTime(f"t={t} outside [{self.t_start}, {self.t_end}]")
        i = int(np.floor((t - self.t_start) / self.h + 1e-9))
        return min(max(i, 0), self.n_steps)

    def refinement_of(self, coarse: "TimeGrid") -> int:
        """Integer factor r such that every r-th node of self is a node of ``coarse``."""
        if abs(self.t_end - coarse.t_end) > 1e-12 or abs(self.t_start - coarse.t_start) > 1e-12:
            raise GridMismatch("grids cover different intervals")
        r, rem = divmod(self.n_steps, coarse.n_steps)
        if rem or r < 1:
            raise GridMismatch(
                f"grid with {self.n_steps} steps does not refine one with {coarse.n_steps}")
        return r


@dataclass(frozen=True)
class SampledFunction:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.grid.n_nodes:
            raise ValueError("values must have one entry per grid node")

    def __call__(self, t: float) -> float:
        """Left-node (piecewise constant) lookup."""
        return float(self.values[self.grid.left_index(t)])

    @property
    def at_start(self) -> float:
        return float(self.values[0])

    @property
    def at_end(self) -> float:
        return float(self.values[-1])


def _check(v, cap, t, labels):
    ok = np.abs(v) <= cap  # False for nan
    if not ok.all():
        idx = int(np.argmin(ok))
        label = labels[idx] if labels is not None else None
        raise DivergedSolve(idx, label, t, float(v[idx]))


def integrate_backward(rhs: Callable[[float, np.ndarray], np.ndarray],
                       terminal_state, grid: TimeGrid, cap: float = DEFAULT_CAP,
                       labels: Sequence | None = None) -> np.ndarray:
    """Classical RK4 from ``grid.t_end`` to ``grid.t_start``.

    Returns an array of shape ``(grid.n_nodes, dim)``; row ``-1`` is the
    terminal state unchanged.
    """
    v = np.array(terminal_state, dtype=float, copy=True).reshape(-1)
    _check(v, cap, grid.t_end, labels)
    out = np.empty((grid.n_nodes, v.size))
    out[-1] = v
    h = grid.h
    nodes = grid.nodes
    for i in range(grid.n_steps, 0, -1):
        t = nodes[i]
        k1 = rhs(t, v)
        k2 = rhs(t - 0.5 * h, v - 0.5 * h * k1)
        k3 = rhs(t - 0.5 * h, v - 0.5 * h * k2)
        k4 = rhs(t - h, v - h * k3)
        v = v - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(v, cap, nodes[i - 1], labels)
        out[i - 1] = v
    return out


def rk4_backward(rhs: Callable[[float, np.ndarray], np.ndarray], terminal_state,
                 grid: TimeGrid, cap: float = DEFAULT_CAP,
                 labels: Sequence | None = None) -> list[SampledFunction]:
    """Backward RK4; one ``SampledFunction`` per state component.

    Raises ``DivergedSolve`` if any value turns non-finite or exceeds ``cap``.
    """
    values = integrate_backward(rhs, terminal_state, grid, cap, labels)
    return [SampledFunction(grid, values[:, j]) for j in range(values.shape[1])]


def solve_zeroth(f0: Callable[[float, float], float], terminal: float, grid: TimeGrid,
                 cap: float = DEFAULT_CAP) -> SampledFunction:
    """Scalar nonlinear backward ODE ``v' = f0(t, v)``, ``v(T) = terminal``."""

    def rhs(t, v):
        return np.array([f0(t, float(v[0]))])

    return rk4_backward(rhs, [terminal], grid, cap, labels=[(0, 0)])[0]


def time_function(value, grid: TimeGrid) -> Callable[[float], float]:
    """Wrap a constant, a callable of t, or a per-node array as a function of time.

    Per-node arrays are linearly interpolated at RK4 stage times.
    """
    if callable(value):
        fn = lambda t: float(value(t))  # noqa: E731
        fn.constant = None
        return fn
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        c = float(arr)
        fn = lambda t: c  # noqa: E731
        fn.constant = c
        return fn
    if arr.shape != (grid.n_nodes,):
        raise ParameterError(f"time-dependent parameter needs {grid.n_nodes} values, got {arr.shape}")
    nodes = grid.nodes
    fn = lambda t: float(np.interp(t, nodes, arr))  # noqa: E731
    fn.constant = None
    return fn


def node_values(value, grid: TimeGrid) -> np.ndarray:
    """Constant, callable or per-node parameter as a per-node array."""
    if callable(value):
        return np.array([float(value(t)) for t in grid.nodes])
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_nodes, float(arr))
    if arr.shape != (grid.n_nodes,):
        raise ParameterError(f"time-dependent parameter needs {grid.n_nodes} values, got {arr.shape}")
    return arr
