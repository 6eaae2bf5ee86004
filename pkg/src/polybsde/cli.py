"""``poly-bsde`` command line: INI config in, CSV files out.

Commands::

    poly-bsde coeffs    --config FILE   coefficient table of one terminal payoff
    poly-bsde moments   --config FILE   moment estimates by expansion order
    poly-bsde price     --config FILE   Edgeworth smile, optionally with MC prices
    poly-bsde validate  --config FILE   path-wise residual statistics
    poly-bsde utility   --config FILE   initial value/controls by order (+ validation)

Exit codes: 0 success, 2 configuration error, 3 coefficient ODE divergence,
4 Monte Carlo or pricing failure.  The config schema is documented in README.md.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import dataclass, field, replace
from math import pi
from pathlib import Path

import numpy as np

from .edgeworth import (call_price_closed, cumulant_warnings, default_bounds, density_minimum,
                        implied_vol, moments_to_cumulants, price_numeric, put_price_closed)
from .errors import (DivergedSolve, DomainError, EmptySample, GridMismatch, InvalidCumulants,
                     OutOfBounds, OutOfRangeOrder, ParameterError, QuadratureNotConverged,
                     RankDeficient)
from .heston import GaussianJump, HestonParams, IntensityPoly, TerminalSpec, heston_solve, moment_partial_sums
from .montecarlo import (McConfig, Target, make_model, moment_estimates, power_terminal, residual_parts,
                         residual_stats, terminal_samples)
from .ode_core import TimeGrid
from .sabr import SabrParams, sabr_solve, sabr_untransform
from .utility import (LiabilitySpec, LinearLiability, LinearTheta, ThetaSpec, UtilityParams,
                      fit_liability_poly, initial_summary, riccati_exact, utility_solve)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_NUMERIC = 0, 2, 3, 4
MODELS = ("heston", "sabr", "utility", "generic")


@dataclass
class RunConfig:
    model: str
    T: float
    params: object
    grid: TimeGrid
    n_max: int
    m_max: int
    terminal_power: int
    mc: McConfig | None
    refinement: int = 4
    pricing: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)
    out_dir: Path = Path("out")


# ---------------------------------------------------------------- parsing

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    """``"0-3, 5"`` -> ``[0, 1, 2, 3, 5]``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _section(cp, name):
    return cp[name] if cp.has_section(name) else {}


def _num(sec, key, default=None, kind=float):
    if key not in sec:
        if default is None:
            raise ParameterError(f"missing required key {key!r}")
        return default
    try:
        return kind(sec[key])
    except ValueError as exc:
        raise ParameterError(f"bad value for {key!r}: {sec[key]!r}") from exc


def _liability(sec) -> object:
    kind = sec.get("liability", "sine").strip()
    g1 = _num(sec, "g1", 0.0)
    if kind == "sine":
        return LiabilitySpec.sine(g1, _num(sec, "shift", pi / 6))
    if kind == "poly":
        return LiabilitySpec(g1, coeffs=_floats(sec["coeffs"]))
    if kind == "fit":
        payoff = sec.get("fit_payoff", "call").strip()
        strike, level, scale = (_num(sec, k, d) for k, d in
                                (("fit_strike", 0.0), ("fit_level", 0.0), ("fit_scale", 1.0)))
        if payoff not in ("call", "put"):
            raise ParameterError("fit_payoff must be call or put")
        sign = 1.0 if payoff == "call" else -1.0

        def target(y):
            return level + scale * np.maximum(0.0, sign * (y - strike))
        fit_range = tuple(_floats(sec.get("fit_range", "-1, 1")))
        coeffs = fit_liability_poly(target, _num(sec, "fit_degree", 5, int), fit_range,
                                    _num(sec, "fit_points", 201, int))
        return LiabilitySpec(g1, coeffs=coeffs)
    if kind == "linear":
        return LinearLiability(*(_num(sec, k, 0.0) for k in ("hx", "hy", "h0")))
    raise ParameterError(f"unknown liability {kind!r}")


def _theta(sec):
    if sec.get("theta", "exp").strip() == "linear":
        return LinearTheta(*(_num(sec, k, 0.0) for k in ("theta_x", "theta_y", "theta_0")))
    return ThetaSpec(_num(sec, "c0", 0.0), _num(sec, "c1", 0.0))


def build_params(model: str, cp):
    p = _section(cp, "params")
    base = [_num(p, k) for k in ("sigma", "alpha", "rho", "kappa")]
    if model == "heston":
        inten = _section(cp, "intensity")
        jump = _section(cp, "jump")
        lam = IntensityPoly(tuple(_floats(inten.get("coeffs", "0"))),
                            tuple(_floats(inten.get("y_range", "-1, 4"))))
        return HestonParams(*base, intensity=lam,
                            jump=GaussianJump(_num(jump, "mu", 0.0), _num(jump, "sigma", 0.0)))
    if model == "sabr":
        return SabrParams(*base, beta=_num(p, "beta", 0.0))
    if model == "utility":
        u = _section(cp, "utility")
        return UtilityParams(*base, theta=_theta(u), liability=_liability(u), gamma=_num(u, "gamma", 1.0))
    raise ParameterError(f"model {model!r} is available from the library only")


def load_config(path, out=None, seed=None, threads=None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(path):
        raise ParameterError(f"cannot read config {path}")
    model = _section(cp, "model").get("name", "").strip()
    if model not in MODELS:
        raise ParameterError(f"[model] name must be one of {MODELS}, got {model!r}")
    T = _num(_section(cp, "model"), "T")
    params = build_params(model, cp)
    grid = TimeGrid.per_year(T, _num(_section(cp, "grid"), "steps_per_year", 1000, int))
    ex = _section(cp, "expansion")
    n_max = _num(ex, "n_max", 10, int)
    m_max = _num(ex, "m_max", 1, int)
    if n_max < 0 or m_max < 1:
        raise ParameterError("need n_max >= 0 and m_max >= 1")
    mc = None
    mcs = _section(cp, "mc")
    if mcs and _num(mcs, "n_paths", 0, int) > 0:
        mc = McConfig(_num(mcs, "n_paths", kind=int), _num(mcs, "steps_per_year", 300, int),
                      _num(mcs, "seed", 0, int), mcs.get("antithetic", "false").strip().lower() == "true",
                      _num(mcs, "block_size", 5000, int), _num(mcs, "threads", 1, int))
        if seed is not None:
            mc = replace(mc, seed=seed)
        if threads is not None:
            mc = replace(mc, threads=threads)
    pr = _section(cp, "pricing")
    pricing = {
        "s0": _num(pr, "s0", 1.0),
        "strikes": _floats(pr.get("strikes", "0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15")),
        "orders": _ints(pr.get("cumulant_orders", "2-6")),
        "put_below": _num(pr, "put_below", 1.0),
        "warn_threshold": _num(pr, "warn_threshold", 1.0),
        "bounds_width": _num(pr, "bounds_width", 12.0),
    }
    if any(k <= 0 for k in pricing["strikes"]) or pricing["s0"] <= 0:
        raise ParameterError("strikes and s0 must be positive")
    if any(o < 2 for o in pricing["orders"]):
        raise ParameterError("cumulant orders start at 2")
    va = _section(cp, "validate")
    validate = {
        "orders": _ints(va.get("orders", f"0-{n_max}")),
        "scatter_paths": _num(va, "scatter_paths", 1000, int),
    }
    if any(not 0 <= o <= n_max for o in validate["orders"]):
        raise ParameterError("validation orders must lie in [0, n_max]")
    out_dir = Path(out) if out else Path(_section(cp, "output").get("dir", "out"))
    return RunConfig(model, T, params, grid, n_max, m_max, _num(ex, "terminal_power", 1, int), mc,
                     _num(_section(cp, "mc"), "table_refinement", 4, int), pricing, validate, out_dir)


# ---------------------------------------------------------------- output

def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_gnuplot(path: Path, header, blocks: dict):
    """One whitespace-separated block per key, two blank lines apart (``index`` in gnuplot)."""
    lines = []
    for key, rows in blocks.items():
        lines.append(f"# {key}")
        lines.append("# " + " ".join(header))
        lines.extend(" ".join(repr(float(v)) for v in row) for row in rows)
        lines += ["", ""]
    path.write_text("\n".join(lines))
    return path


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


# ---------------------------------------------------------------- commands

def _solve(cfg: RunConfig, m: int, grid: TimeGrid):
    if cfg.model == "heston":
        return heston_solve(cfg.params, TerminalSpec.power(m), cfg.n_max, grid)
    if cfg.model == "sabr":
        return sabr_solve(cfg.params, TerminalSpec.power(m), cfg.n_max, grid)
    return utility_solve(cfg.params, cfg.n_max, grid)


def _pricing_model(cfg):
    if cfg.model not in ("heston", "sabr"):
        raise ParameterError(f"command needs a heston or sabr model, got {cfg.model}")


def cmd_coeffs(cfg: RunConfig, plot=False):
    table = _solve(cfg, cfg.terminal_power, cfg.grid)
    path = cfg.out_dir / "coeffs.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path)
    return [path]


def cmd_moments(cfg: RunConfig, plot=False):
    _pricing_model(cfg)
    if cfg.n_max < cfg.m_max:
        raise ParameterError("n_max must be at least m_max")
    rows = []
    for m in range(1, cfg.m_max + 1):
        partial = moment_partial_sums(_solve(cfg, m, cfg.grid))
        rows += [(m, n, float(g)) for n, g in enumerate(partial)]
    out = [write_csv(cfg.out_dir / "moments.csv", ["m", "n", "gamma"], rows)]
    blocks = {f"m={m}": [(n, g) for mm, n, g in rows if mm == m] for m in range(1, cfg.m_max + 1)}
    out.append(write_gnuplot(cfg.out_dir / "moments.dat", ["n", "gamma"], blocks))
    if cfg.mc is not None:
        xT, _ = terminal_samples(make_model(cfg.model, cfg.params), cfg.mc, cfg.mc.grid(cfg.T))
        est = moment_estimates(xT, cfg.m_max)
        out.append(write_csv(cfg.out_dir / "moments_mc.csv", ["m", "mean", "stderr", "count"],
                             [(s.order, s.mean, s.stderr, s.count) for s in est]))
    if plot:
        from .plotting import plot_moments
        plot_moments(rows, cfg.out_dir / "moments.png")
        out.append(cfg.out_dir / "moments.png")
    return out


def _kind(cfg, ratio):
    return "put" if ratio < cfg.pricing["put_below"] else "call"


def _iv(price, s0, strike, T, kind):
    try:
        return implied_vol(price, s0, strike, T, kind)
    except OutOfBounds as exc:
        _warn(f"no implied vol for {kind} K={strike}: {exc}")
        return float("nan")


def cmd_price(cfg: RunConfig, plot=False):
    _pricing_model(cfg)
    pr = cfg.pricing
    order_max = max(pr["orders"])
    if cfg.n_max < order_max:
        raise ParameterError("n_max must be at least the highest cumulant order")
    moments = np.array([moment_partial_sums(_solve(cfg, m, cfg.grid))[-1] for m in range(1, order_max + 1)])
    cum = moments_to_cumulants(moments)
    s0 = pr["s0"]
    out = [write_csv(cfg.out_dir / "cumulants.csv", ["order", "moment", "cumulant"],
                     [(j + 1, moments[j], cum[j]) for j in range(order_max)])]
    for msg in cumulant_warnings(cum, pr["warn_threshold"]):
        _warn(msg)
    rows = []
    for order in pr["orders"]:
        c = cum[:order]
        x_min, p_min = density_minimum(c)
        if p_min < 0:
            _warn(f"Edgeworth density of order {order} is negative near x={x_min:.3g} (min {p_min:.3g})")
        for ratio in pr["strikes"]:
            K, kind = ratio * s0, _kind(cfg, ratio)
            if cfg.model == "heston":
                price = call_price_closed(s0, K, c) if kind == "call" else put_price_closed(s0, K, c)
            else:
                beta = cfg.params.beta
                floor = cfg.params.floor
                sign = 1.0 if kind == "call" else -1.0
                kx = (float((K / s0) ** (1 - beta)) - 1.0) / (1 - beta)
                bounds = default_bounds(c, pr["bounds_width"], floor=floor)

                def payoff(x, K=K, sign=sign):
                    s = sabr_untransform(np.maximum(x, floor + 1e-12), s0, beta)
                    return np.maximum(sign * (s - K), 0.0)
                price = price_numeric(payoff, c, bounds, breakpoints=(kx,))
            rows.append((ratio, kind, order, price, _iv(price, s0, K, cfg.T, kind)))
    out.append(write_csv(cfg.out_dir / "smile.csv",
                         ["strike_ratio", "kind", "cumulant_order", "price", "implied_vol"], rows))
    blocks = {f"order={o}": [(r[0], r[3], r[4]) for r in rows if r[2] == o] for o in pr["orders"]}
    out.append(write_gnuplot(cfg.out_dir / "smile.dat", ["strike_ratio", "price", "implied_vol"], blocks))
    mc_rows = []
    if cfg.mc is not None:
        xT, _ = terminal_samples(make_model(cfg.model, cfg.params), cfg.mc, cfg.mc.grid(cfg.T))
        sT = s0 * np.exp(xT) if cfg.model == "heston" else sabr_untransform(xT, s0, cfg.params.beta)
        for ratio in pr["strikes"]:
            K, kind = ratio * s0, _kind(cfg, ratio)
            pay = np.maximum(sT - K, 0.0) if kind == "call" else np.maximum(K - sT, 0.0)
            st = residual_stats(pay)
            mc_rows.append((ratio, kind, st.mean, st.stderr, _iv(st.mean, s0, K, cfg.T, kind)))
        out.append(write_csv(cfg.out_dir / "smile_mc.csv",
                             ["strike_ratio", "kind", "price", "stderr", "implied_vol"], mc_rows))
    if plot:
        from .plotting import plot_smile
        plot_smile(rows, mc_rows, cfg.out_dir / "smile.png")
        out.append(cfg.out_dir / "smile.png")
    return out


def _terminal(cfg: RunConfig):
    if cfg.model == "utility":
        gamma, liab = cfg.params.gamma, cfg.params.liability
        return lambda x, y: gamma * liab(x, y)
    return power_terminal(cfg.terminal_power)


def cmd_validate(cfg: RunConfig, plot=False):
    if cfg.model not in ("heston", "sabr", "utility"):
        raise ParameterError(f"validation needs heston, sabr or utility, got {cfg.model}")
    if cfg.mc is None:
        raise ParameterError("validation needs an [mc] section with n_paths > 0")
    mc_grid = cfg.mc.grid(cfg.T)
    table_grid = TimeGrid(cfg.T, mc_grid.n_steps * cfg.refinement)
    table = _solve(cfg, cfg.terminal_power, table_grid)
    term = _terminal(cfg)
    orders = cfg.validate["orders"]
    parts = residual_parts(make_model(cfg.model, cfg.params), [Target(table, n, term, n) for n in orders],
                           cfg.mc, mc_grid)
    res = parts.residuals
    stats = [residual_stats(r, n) for r, n in zip(res, orders)]
    rows = [(s.order, s.mean, s.stdev, s.stderr) for s in stats]
    out = [write_csv(cfg.out_dir / "residual_stats.csv", ["order_n", "mean", "stdev", "stderr"], rows)]
    k = min(cfg.validate["scatter_paths"], res.shape[1])
    scatter = [(p, n, res[j, p]) for j, n in enumerate(orders) for p in range(k)]
    out.append(write_csv(cfg.out_dir / "residual_scatter.csv", ["path_id", "order_n", "residual"], scatter))
    if plot:
        from .plotting import plot_residual_scatter, plot_residual_stats
        plot_residual_stats(rows, cfg.out_dir / "residual_stats.png")
        plot_residual_scatter(scatter, cfg.out_dir / "residual_scatter.png")
        out += [cfg.out_dir / "residual_stats.png", cfg.out_dir / "residual_scatter.png"]
    return out


def cmd_utility(cfg: RunConfig, plot=False):
    if cfg.model != "utility":
        raise ParameterError("the utility command needs model name = utility")
    table = utility_solve(cfg.params, cfg.n_max, cfg.grid)
    rows = [tuple(r) for r in initial_summary(table)]
    rows = [(int(n), v, z, g) for n, v, z, g in rows]
    out = [write_csv(cfg.out_dir / "utility_summary.csv", ["n", "V0", "Z0", "Gamma0"], rows)]
    p = cfg.params
    if isinstance(p.liability, LinearLiability) and isinstance(p.theta, LinearTheta):
        h = (p.liability.hx, p.liability.hy, p.liability.h0)
        vx, vy, v0 = riccati_exact(h, p.theta, p, cfg.grid)
        w = table.truncated(cfg.n_max)
        out.append(write_csv(cfg.out_dir / "riccati.csv",
                             ["t", "v_x", "v_y", "v_0", "expansion_x", "expansion_y", "expansion_0"],
                             [(t, vx.values[j], vy.values[j], v0.values[j], w[j, 1, 0], w[j, 0, 1], w[j, 0, 0])
                              for j, t in enumerate(cfg.grid.nodes)]))
    if plot:
        from .plotting import plot_utility_summary
        plot_utility_summary(rows, cfg.out_dir / "utility_summary.png")
        out.append(cfg.out_dir / "utility_summary.png")
    if cfg.mc is not None:
        out += cmd_validate(cfg, plot)
    return out


COMMANDS = {"coeffs": cmd_coeffs, "moments": cmd_moments, "price": cmd_price,
            "validate": cmd_validate, "utility": cmd_utility}

_CONFIG_ERRORS = (ParameterError, configparser.Error, DomainError, RankDeficient, OutOfRangeOrder)
_NUMERIC_ERRORS = (QuadratureNotConverged, InvalidCumulants, OutOfBounds, EmptySample, GridMismatch)


def build_parser():
    ap = argparse.ArgumentParser(prog="poly-bsde", description="Polynomial expansion BSDE solver")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides [mc] seed)")
    ap.add_argument("--threads", type=int, help="worker threads (overrides [mc] threads)")
    ap.add_argument("--plot", action="store_true", help="also write PNG figures next to the CSVs")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.out, args.seed, args.threads)
        paths = COMMANDS[args.command](cfg, args.plot)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedSolve as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
