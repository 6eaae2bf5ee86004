"""Assembly of the recursive coefficient ODEs as one sparse vector system.

Each model lemma is a list of terms ``d/dt v[row] += factor_g(t) * w * v[col]``
(linear), ``factor_g(t) * w * v[c1] * v[c2]`` (quadratic, utility only) and
``w * forcing(t)``.  Rows and columns are ``(n, i, k)`` keys laid out in solve
order, so every term references the row itself or an earlier entry and
marching the whole vector with RK4 is the same computation as solving the
entries one by one.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np
import scipy.sparse as sp

from .ode_core import TimeGrid, integrate_backward, time_function
from .poly_table import CoefficientTable, entry_index, entry_keys


def valid_key(n, i, k, n_max):
    return 0 <= n <= n_max and i >= 0 and k >= 0 and i + k <= n


class CoefficientSystem:
    def __init__(self, n_max: int):
        self.n_max = n_max
        self.keys = entry_keys(n_max)
        self.index = entry_index(n_max)
        self.size = len(self.keys)
        self._lin = defaultdict(lambda: ([], [], []))
        self._quad = defaultdict(lambda: ([], [], [], []))
        self._forcing = []

    def _row(self, row):
        return self.index[row]

    def add(self, row, col, group, weight):
        """Linear term; silently dropped when ``col`` is outside the table shape."""
        if weight == 0 or not valid_key(*col, self.n_max):
            return
        r, c, w = self._lin[group]
        r.append(self._row(row))
        c.append(self.index[col])
        w.append(float(weight))

    def add_quadratic(self, row, col1, col2, group, weight):
        if weight == 0 or not (valid_key(*col1, self.n_max) and valid_key(*col2, self.n_max)):
            return
        r, a, b, w = self._quad[group]
        r.append(self._row(row))
        a.append(self.index[col1])
        b.append(self.index[col2])
        w.append(float(weight))

    def add_forcing(self, row, value):
        """``value`` is a constant or a callable of t."""
        self._forcing.append((self._row(row), value))

    def matrices(self) -> dict:
        out = {}
        for g, (r, c, w) in self._lin.items():
            out[g] = sp.csr_matrix((w, (r, c)), shape=(self.size, self.size))
        return out

    def quadratic_terms(self) -> dict:
        return {g: tuple(np.asarray(a, dtype=int if j < 3 else float) for j, a in enumerate(t))
                for g, t in self._quad.items()}

    def dependency_pairs(self):
        """(row, col) index pairs for every term, for ordering checks."""
        for r, c, _ in self._lin.values():
            yield from zip(r, c)
        for r, a, b, _ in self._quad.values():
            yield from zip(r, a)
            yield from zip(r, b)

    def rhs(self, factors: dict, grid: TimeGrid):
        """Right-hand side ``f(t, v)`` given group factors (constants, callables or per-node arrays)."""
        fns = {g: time_function(factors[g], grid) for g in set(self._lin) | set(self._quad)}
        mats = self.matrices()
        quads = self.quadratic_terms()
        size = self.size

        const_lin = all(fns[g].constant is not None for g in mats)
        if const_lin:
            combined = sp.csr_matrix((size, size))
            for g, m in mats.items():
                combined = combined + fns[g].constant * m
            combined = combined.tocsr()
        forcing_rows = np.array([r for r, _ in self._forcing], dtype=int)
        forcing_fns = [time_function(v, grid) for _, v in self._forcing]
        const_forcing = all(f.constant is not None for f in forcing_fns)
        if const_forcing:
            fvec = np.zeros(size)
            np.add.at(fvec, forcing_rows, [f.constant for f in forcing_fns])

        def rhs(t, v):
            if const_lin:
                out = combined @ v
            else:
                out = np.zeros(size)
                for g, m in mats.items():
                    out += fns[g](t) * (m @ v)
            for g, (r, a, b, w) in quads.items():
                out += fns[g](t) * np.bincount(r, weights=w * v[a] * v[b], minlength=size)
            if const_forcing:
                if len(forcing_fns):
                    out += fvec
            else:
                fv = np.zeros(size)
                np.add.at(fv, forcing_rows, [f(t) for f in forcing_fns])
                out += fv
            return out

        return rhs

    def solve(self, factors: dict, terminal: dict, grid: TimeGrid, terminal_support="x",
              cap=None, meta=None) -> CoefficientTable:
        v_T = np.zeros(self.size)
        for key, val in terminal.items():
            if key in self.index:
                v_T[self.index[key]] = val
        kwargs = {} if cap is None else {"cap": cap}
        values = integrate_backward(self.rhs(factors, grid), v_T, grid, labels=self.keys, **kwargs)
        return CoefficientTable(grid, self.n_max, values, terminal_support, meta)


def sv_factors(sigma, alpha, rho, kappa, grid: TimeGrid) -> dict:
    """Group factors shared by the two-factor models.

    ``s2 = sigma^2/2``, ``rsa = rho*sigma*alpha``, ``a2 = alpha^2/2``; ``one`` is 1.
    """
    params = (sigma, alpha, rho, kappa)
    if all(not callable(p) and np.ndim(p) == 0 for p in params):
        s, a, r, k = (float(p) for p in params)
        return {"s2": 0.5 * s * s, "rsa": r * s * a, "a2": 0.5 * a * a, "kappa": k, "one": 1.0,
                "a2xi2": 0.5 * a * a * (1.0 - r * r)}
    s, a, r, k = (time_function(p, grid) for p in params)
    return {
        "s2": lambda t: 0.5 * s(t) ** 2,
        "rsa": lambda t: r(t) * s(t) * a(t),
        "a2": lambda t: 0.5 * a(t) ** 2,
        "kappa": k,
        "one": 1.0,
        "a2xi2": lambda t: 0.5 * a(t) ** 2 * (1.0 - r(t) ** 2),
    }
