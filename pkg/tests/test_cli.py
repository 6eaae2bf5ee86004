import csv
from pathlib import Path

import numpy as np
import pytest

from polybsde.cli import load_config, main, write_gnuplot

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

HESTON = """
[model]
name = heston
T = 1.0
[params]
sigma = 0.2
alpha = {alpha}
rho = {rho}
kappa = 0.5
[intensity]
coeffs = 2.0
[jump]
mu = -0.02
sigma = 0.03
[grid]
steps_per_year = 50
[expansion]
n_max = {n_max}
m_max = 2
{extra}
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def heston_ini(tmp_path, alpha=0.3, rho=-0.5, n_max=1, extra=""):
    return write(tmp_path, HESTON.format(alpha=alpha, rho=rho, n_max=n_max, extra=extra))


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_coeffs_martingale_payoff(tmp_path):
    cfg = heston_ini(tmp_path)
    assert main(["coeffs", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "coeffs.csv")
    assert rows[0] == ["n", "i", "k", "t_index", "value"]
    top = [float(r[4]) for r in rows[1:] if r[:3] == ["1", "1", "0"]]
    assert len(top) == 51 and all(v == 1.0 for v in top)


def test_invalid_correlation_exit_code(tmp_path, capsys):
    assert main(["coeffs", "--config", heston_ini(tmp_path, rho=1.5), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["coeffs", "--config", str(tmp_path / "absent.ini")]) == 2


def test_divergence_exit_code(tmp_path):
    text = """
[model]
name = utility
T = 5.0
[params]
sigma = 0.2
alpha = 1.0
rho = 0.0
kappa = 0.0
[utility]
liability = linear
hy = 100.0
theta = linear
[grid]
steps_per_year = 100
[expansion]
n_max = 20
"""
    assert main(["utility", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 3


def test_long_maturity_config_first_moment(tmp_path):
    cfg = load_config(CONFIGS / "heston_long_maturity.ini", out=tmp_path)
    assert cfg.mc is not None and cfg.n_max >= 10
    text = (CONFIGS / "heston_long_maturity.ini").read_text().replace("[mc]", "[mc_disabled]")
    ini = write(tmp_path, text)
    assert main(["coeffs", "--config", ini, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "coeffs.csv")[1:]
    gamma1 = sum(float(r[4]) for r in rows if r[1] == "0" and r[2] == "0" and r[3] == "0")
    assert gamma1 == pytest.approx(-5.60e-2, rel=0.10)


def test_idempotent_outputs(tmp_path):
    extra = "[mc]\nn_paths = 400\nsteps_per_year = 25\nseed = 3\nblock_size = 200\n[validate]\norders = 0, 1\n" \
            "scatter_paths = 5\n[pricing]\ncumulant_orders = 2-2\nstrikes = 0.9, 1.0, 1.1\n"
    cfg = heston_ini(tmp_path, n_max=2, extra=extra)
    snapshots = []
    for _ in range(2):
        for cmd in ("moments", "price", "validate"):
            assert main([cmd, "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        snapshots.append({p.name: p.read_bytes() for p in sorted((tmp_path / "o").iterdir())})
    assert snapshots[0] == snapshots[1]
    names = set(snapshots[0])
    assert {"moments.csv", "moments_mc.csv", "smile.csv", "smile_mc.csv", "cumulants.csv",
            "residual_stats.csv", "residual_scatter.csv"} <= names
    for name, data in snapshots[0].items():
        assert b"\r" not in data
    assert read_rows(tmp_path / "o" / "smile.csv")[0] == ["strike_ratio", "kind", "cumulant_order", "price",
                                                          "implied_vol"]
    assert read_rows(tmp_path / "o" / "residual_stats.csv")[0] == ["order_n", "mean", "stdev", "stderr"]
    scatter = read_rows(tmp_path / "o" / "residual_scatter.csv")
    assert scatter[0] == ["path_id", "order_n", "residual"] and len(scatter) == 11


def test_seed_override_changes_mc(tmp_path):
    extra = "[mc]\nn_paths = 200\nsteps_per_year = 20\nseed = 3\n"
    cfg = heston_ini(tmp_path, n_max=2, extra=extra)
    main(["moments", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["moments", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "moments_mc.csv").read_bytes() != (tmp_path / "b" / "moments_mc.csv").read_bytes()
    assert (tmp_path / "a" / "moments.csv").read_bytes() == (tmp_path / "b" / "moments.csv").read_bytes()


def test_plot_flag_writes_png(tmp_path):
    cfg = heston_ini(tmp_path, n_max=3, extra="[pricing]\ncumulant_orders = 2-3\n")
    out = tmp_path / "o"
    assert main(["moments", "--config", cfg, "--out", str(out)]) == 0
    assert not list(out.glob("*.png"))
    assert main(["price", "--config", cfg, "--out", str(out), "--plot"]) == 0
    png = out / "smile.png"
    assert png.exists() and png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_riccati_config(tmp_path):
    assert main(["utility", "--config", str(CONFIGS / "riccati_linear.ini"), "--out", str(tmp_path)]) == 0
    summary = read_rows(tmp_path / "utility_summary.csv")
    assert summary[0] == ["n", "V0", "Z0", "Gamma0"] and len(summary) == 12
    ric = np.array([[float(v) for v in r] for r in read_rows(tmp_path / "riccati.csv")[1:]])
    assert np.max(np.abs(ric[:, 1] - ric[:, 4])) < 1e-8
    assert abs(ric[0, 3] - float(summary[-1][1])) < 1e-6


def test_pricing_command_rejects_utility(tmp_path):
    assert main(["price", "--config", str(CONFIGS / "riccati_linear.ini"), "--out", str(tmp_path)]) == 2


def test_gnuplot_layout(tmp_path):
    path = write_gnuplot(tmp_path / "g.dat", ["n", "v"], {"a": [(0, 1.5), (1, 2.5)], "b": [(0, 3.0)]})
    blocks = path.read_text().split("\n\n\n")
    assert len(blocks) == 2
    assert blocks[0].splitlines() == ["# a", "# n v", "0.0 1.5", "1.0 2.5"]
    assert blocks[1].splitlines()[:3] == ["# b", "# n v", "0.0 3.0"]
