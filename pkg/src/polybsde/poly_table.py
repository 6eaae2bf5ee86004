"""Two-factor polynomial coefficient tables and truncated reconstruction.

A table stores the deterministic coefficients ``v[n]_{i,k}(t)`` multiplying
``x**i * y**k / (i! k!)`` in the order-``n`` correction, for every
``i + k <= n <= n_max``.  Factorial weights are applied at evaluation time,
so terminal values read as raw derivatives of the payoff.
"""
from __future__ import annotations

import csv
import io
from functools import lru_cache
from math import factorial
from pathlib import Path

import numpy as np

from .errors import OutOfRangeOrder
from .ode_core import SampledFunction, TimeGrid


@lru_cache(maxsize=None)
def entry_keys(n_max: int) -> tuple:
    """All (n, i, k) keys in solve order: n ascending, total degree m descending, k ascending."""
    keys = []
    for n in range(n_max + 1):
        for m in range(n, -1, -1):
            for k in range(m + 1):
                keys.append((n, m - k, k))
    return tuple(keys)


@lru_cache(maxsize=None)
def entry_index(n_max: int) -> dict:
    return {key: j for j, key in enumerate(entry_keys(n_max))}


@lru_cache(maxsize=None)
def inv_factorials(n: int) -> np.ndarray:
    return np.array([1.0 / factorial(i) for i in range(n + 1)])


class CoefficientTable:
    """Coefficients ``v[n]_{i,k}`` sampled on a time grid.

    ``values`` has shape ``(grid.n_nodes, len(entry_keys(n_max)))``.
    ``terminal_support`` selects the terminal-condition check: ``"x"`` allows
    nonzero terminal values only at ``(n, n, 0)`` (pricing models), ``"top"``
    at every ``(n, n-k, k)`` (utility model), ``None`` skips the check.
    """

    def __init__(self, grid: TimeGrid, n_max: int, values: np.ndarray, terminal_support="x",
                 meta: dict | None = None):
        values = np.asarray(values, dtype=float)
        keys = entry_keys(n_max)
        if values.shape != (grid.n_nodes, len(keys)):
            raise ValueError(f"expected values of shape {(grid.n_nodes, len(keys))}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficient table contains non-finite values")
        if terminal_support is not None:
            for j, (n, i, k) in enumerate(keys):
                allowed = (i == n and k == 0) if terminal_support == "x" else (i + k == n)
                if not allowed and values[-1, j] != 0.0:
                    raise ValueError(f"entry {(n, i, k)} has nonzero terminal value {values[-1, j]}")
        self.grid = grid
        self.n_max = n_max
        self.values = values
        self.values.setflags(write=False)
        self.meta = dict(meta or {})
        self._truncated = {}

    @property
    def keys(self) -> tuple:
        return entry_keys(self.n_max)

    @property
    def index(self) -> dict:
        return entry_index(self.n_max)

    def __getitem__(self, key) -> np.ndarray:
        """Node values of entry ``(n, i, k)``; zeros for keys outside the table shape."""
        n, i, k = key
        j = self.index.get((n, i, k))
        if j is None:
            if 0 <= n <= self.n_max and i >= 0 and k >= 0:
                return np.zeros(self.grid.n_nodes)
            raise KeyError(key)
        return self.values[:, j]

    def entry(self, n: int, i: int, k: int) -> SampledFunction:
        return SampledFunction(self.grid, self[n, i, k])

    @property
    def entries(self) -> dict:
        return {key: SampledFunction(self.grid, self.values[:, j]) for j, key in enumerate(self.keys)}

    def check_order(self, order: int) -> int:
        order = int(order)
        if not 0 <= order <= self.n_max:
            raise OutOfRangeOrder(f"truncation order {order} outside [0, {self.n_max}]")
        return order

    def truncated(self, order: int) -> np.ndarray:
        """``W[t, i, k] = sum_{j <= order} v[j]_{i,k}(t)`` with shape (nodes, order+1, order+1)."""
        order = self.check_order(order)
        if order not in self._truncated:
            w = np.zeros((self.grid.n_nodes, order + 1, order + 1))
            for j, (n, i, k) in enumerate(self.keys):
                if n <= order:
                    w[:, i, k] += self.values[:, j]
            w.setflags(write=False)
            self._truncated[order] = w
        return self._truncated[order]

    def order_slice(self, n: int) -> np.ndarray:
        """Coefficients of the single order ``n`` as (nodes, n+1, n+1)."""
        w = np.zeros((self.grid.n_nodes, n + 1, n + 1))
        for j, (nn, i, k) in enumerate(self.keys):
            if nn == n:
                w[:, i, k] = self.values[:, j]
        return w

    def value_at_origin(self, order: int, node: int = 0) -> float:
        return float(self.truncated(order)[node, 0, 0])

    def to_csv(self, path=None) -> str:
        """Rows ``n,i,k,t_index,value``; returns the text and writes it when ``path`` is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "i", "k", "t_index", "value"])
        for j, (n, i, k) in enumerate(self.keys):
            col = self.values[:, j]
            for t_index in range(self.grid.n_nodes):
                w.writerow([n, i, k, t_index, repr(float(col[t_index]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, grid: TimeGrid, terminal_support="x") -> "CoefficientTable":
        text = Path(source).read_text() if not isinstance(source, io.StringIO) else source.getvalue()
        rows = list(csv.DictReader(io.StringIO(text)))
        n_max = max(int(r["n"]) for r in rows)
        idx = entry_index(n_max)
        values = np.zeros((grid.n_nodes, len(idx)))
        for r in rows:
            values[int(r["t_index"]), idx[int(r["n"]), int(r["i"]), int(r["k"])]] = float(r["value"])
        return cls(grid, n_max, values, terminal_support)


def poly2(coeffs: np.ndarray, x, y):
    """``sum_{i,k} coeffs[i,k] x**i y**k / (i! k!)`` with numpy broadcasting over x, y."""
    coeffs = np.asarray(coeffs, dtype=float)
    ni, nk = coeffs.shape
    if ni == 0 or nk == 0:
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)[()]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    # Horner in x of polynomials in y
    fi = inv_factorials(max(ni, nk))
    cy = coeffs * fi[:ni, None] * fi[None, :nk]
    acc_rows = [np.polynomial.polynomial.polyval(y, cy[i]) for i in range(ni)]
    out = acc_rows[-1]
    for i in range(ni - 2, -1, -1):
        out = out * x + acc_rows[i]
    return out


def _coeffs_at(table: CoefficientTable, order: int, t: float) -> np.ndarray:
    order = table.check_order(order)
    return table.truncated(order)[table.grid.left_index(t)]


def evaluate_value(table: CoefficientTable, order: int, t: float, x, y=0.0):
    """Truncated value ``V^(order)(t, x, y)``; coefficients read at the left grid node."""
    return poly2(_coeffs_at(table, order, t), x, y)


def evaluate_controls(table: CoefficientTable, order: int, t: float, x, y=0.0):
    """``(Z, Gamma)`` of the truncated expansion: the x- and y-partials of the value."""
    c = _coeffs_at(table, order, t)
    return poly2(c[1:, :], x, y), poly2(c[:, 1:], x, y)


def _jump_terms(table, order, t, x, y, zpow):
    """Sum over orders j <= order of the jump-control series with ``z**p / p!`` given by zpow(p)."""
    order = table.check_order(order)
    node = table.grid.left_index(t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fi = inv_factorials(table.n_max + 1)
    total = 0.0
    for j in range(1, order + 1):
        for m in range(j):
            for k in range(m + 1):
                inner = 0.0
                for l in range(m + 1, j + 1):
                    v = table[j, l - k, k][node]
                    if v != 0.0:
                        inner = inner + zpow(l - m) * v
                if np.any(inner != 0.0):
                    total = total + x ** (m - k) * y ** k * fi[m - k] * fi[k] * inner
    return total + np.zeros(np.broadcast(x, y).shape)


def evaluate_jump_control(table: CoefficientTable, order: int, t: float, x, y, z):
    """Truncated jump control ``U^(order)(t, z)`` at state ``(x, y)``."""
    z = np.asarray(z, dtype=float)
    fi = inv_factorials(table.n_max + 1)
    out = _jump_terms(table, order, t, x, y, lambda p: z ** p * fi[p])
    return out * np.ones_like(z)


def expected_jump_control(table: CoefficientTable, order: int, t: float, x, y, moments):
    """``int U^(order)(t, z) Q(dz)`` given raw jump moments ``moments[p] = q(t, p)``."""
    fi = inv_factorials(table.n_max + 1)
    return _jump_terms(table, order, t, x, y, lambda p: moments[p] * fi[p])
