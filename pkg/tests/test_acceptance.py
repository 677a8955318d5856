"""Acceptance gate: Monte Carlo reproduction and property checks.

Criteria 1-6 and 13 run four Monte Carlo cells of 300 replications (RIS at
n = 500 uses the first 100).  The cells take well over an hour on one core,
so their records are cached under ``.acceptance_cache`` keyed by a hash of
the package source and the cell configuration; any code change invalidates
the cache.  Set ``BSAR_ACCEPTANCE_REFRESH=1`` to recompute regardless, and
``BSAR_WORKERS`` to spread replications over several processes.

Each criterion prints one ``CRITERION k: PASS|FAIL`` line (collected in the
terminal summary) and fails its test when the check fails.
"""

import hashlib
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bsar.dgp import McCellConfig, simulate_replication
from bsar.harness import read_records, run_cell, summarize, write_records

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / ".acceptance_cache"
REPS = 300
SEED = 2024

CELLS = {
    "n50_rho0": McCellConfig(n=50, rho_true=0.0, replications=REPS, master_seed=SEED, cell_id=1),
    "n50_rho08": McCellConfig(n=50, rho_true=0.8, replications=REPS, master_seed=SEED, cell_id=2,
                              estimators=("em", "gibbs", "ris")),
    "n500_rho0": McCellConfig(n=500, rho_true=0.0, replications=REPS, master_seed=SEED, cell_id=3,
                              estimators=("em", "gibbs", "gmm", "gmmlin")),
    # same cell id and seed: these are the first 100 datasets of n500_rho0
    "n500_rho0_ris": McCellConfig(n=500, rho_true=0.0, replications=100, master_seed=SEED, cell_id=3,
                                  estimators=("ris",)),
    "n500_rho08": McCellConfig(n=500, rho_true=0.8, replications=REPS, master_seed=SEED, cell_id=4,
                               estimators=("gmm", "gmmlin")),
}


def _source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted((ROOT / "src" / "bsar").glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _cell_records(name):
    cfg = CELLS[name]
    key = hashlib.sha256(f"{_source_hash()}|{cfg!r}".encode()).hexdigest()[:16]
    path = CACHE / f"{name}-{key}.csv"
    if path.exists() and os.environ.get("BSAR_ACCEPTANCE_REFRESH") != "1":
        return read_records(path)
    records = run_cell(cfg, workers=int(os.environ.get("BSAR_WORKERS", "1")))
    CACHE.mkdir(exist_ok=True)
    write_records(records, path)
    return records


@pytest.fixture(scope="session")
def mc():
    out = {}
    for name, cfg in CELLS.items():
        records = _cell_records(name)
        out[name] = (records, summarize(records, cfg.rho_true, cfg.beta_true))
    return out


def report(k, passed, detail):
    line = f"CRITERION {k}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def _bias(summary, est, param="rho"):
    return summary[est].bias[param].mean


def _fmt(summary, est, param="rho"):
    s = summary[est]
    b = s.bias[param]
    return f"{est} {param} {b.mean:+.4f} (sd {b.sd:.3f}, n={s.n_effective}, failed={s.n_failed})"


# ---------------------------------------------------------------- Monte Carlo


def test_criterion_01_small_sample_no_dependence(mc):
    records, s = mc["n50_rho0"]
    em, gibbs = _bias(s, "em"), _bias(s, "gibbs")
    seconds = sum(r.seconds for r in records)
    ok = abs(em - -0.002) <= 0.03 and abs(gibbs - -0.017) <= 0.03 and seconds < 1800
    report(1, ok, f"{_fmt(s, 'em')} target -0.002+-0.03; {_fmt(s, 'gibbs')} target -0.017+-0.03; "
                  f"cell wall time {seconds:.0f}s < 1800s")


def test_criterion_02_ris_best_at_high_dependence(mc):
    _, s = mc["n50_rho08"]
    ris, em, gibbs = _bias(s, "ris"), _bias(s, "em"), _bias(s, "gibbs")
    ok = abs(ris - -0.015) <= 0.03 and abs(ris) < abs(em) and abs(ris) < abs(gibbs)
    report(2, ok, f"{_fmt(s, 'ris')} target -0.015+-0.03; |ris| < |em| ({em:+.4f}) and < |gibbs| ({gibbs:+.4f})")


def test_criterion_03_large_sample_no_dependence(mc):
    _, s = mc["n500_rho0"]
    _, s_ris = mc["n500_rho0_ris"]
    parts = [(_fmt(s, e), abs(_bias(s, e)) <= 0.02) for e in ("em", "gibbs", "gmm", "gmmlin")]
    parts.append((_fmt(s_ris, "ris"), abs(_bias(s_ris, "ris")) <= 0.03))
    ok = all(p for _, p in parts)
    report(3, ok, "; ".join(f"{t} {'ok' if p else 'OUT'}" for t, p in parts) + " (|bias| <= 0.02, RIS <= 0.03)")


def test_criterion_04_gmm_signs_at_high_dependence(mc):
    _, s = mc["n500_rho08"]
    lin, ps = _bias(s, "gmmlin"), _bias(s, "gmm")
    ok = lin > 0.3 and ps < -0.5
    report(4, ok, f"{_fmt(s, 'gmmlin')} needs > +0.3; {_fmt(s, 'gmm')} needs < -0.5")


def test_criterion_05_slope_bias(mc):
    _, s = mc["n500_rho0"]
    gibbs, em = _bias(s, "gibbs", "beta1"), _bias(s, "em", "beta1")
    ok = abs(gibbs - -0.07) <= 0.06 and abs(em - -0.12) <= 0.07
    report(5, ok, f"{_fmt(s, 'gibbs', 'beta1')} target -0.07+-0.06; {_fmt(s, 'em', 'beta1')} target -0.12+-0.07")


def test_criterion_06_intercept_slope_relation(mc):
    parts = []
    for name, (_, s) in mc.items():
        for est, summ in s.items():
            b0, b1 = summ.bias["beta0"].mean, summ.bias["beta1"].mean
            ok = abs(b0 - (-2.0 * b1)) <= 0.25 * abs(2.0 * b1)
            parts.append((f"{name}/{est} b0 {b0:+.4g} vs -2*b1 {-2 * b1:+.4g}", ok))
    bad = [t for t, ok in parts if not ok]
    detail = f"{len(parts) - len(bad)}/{len(parts)} estimator-cells within 25%"
    if bad:
        detail += "; outside: " + "; ".join(bad)
    report(6, not bad, detail)


def test_criterion_13_speed_ordering(mc):
    records = mc["n500_rho0"][0] + mc["n500_rho0_ris"][0]
    t = {e: np.mean([r.seconds for r in records if r.estimator == e])
         for e in ("gmmlin", "em", "gibbs", "gmm", "ris")}
    middle = ("em", "gibbs", "gmm")
    ok = all(t["gmmlin"] < t[e] < t["ris"] for e in middle)
    report(13, ok, "mean seconds per replication at n=500: " + ", ".join(f"{e} {v:.3f}" for e, v in t.items()))


# ---------------------------------------------------------- property checks


def test_criterion_07_ord_log_det():
    from bsar.spatial import draw_distance_weights, ord_log_det

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 51))
        W, _, _ = draw_distance_weights(n, 2.0 / np.sqrt(n), rng)
        lo = W.domain.lower
        for rho in np.linspace(max(lo, -1.0) + 1e-3, 0.999, 15):
            sign, dense = np.linalg.slogdet(np.eye(n) - rho * W.normalized)
            worst = max(worst, abs(ord_log_det(rho, W.eigenvalues) - dense))
    report(7, worst <= 1e-8, f"max |ord - dense| = {worst:.2e} over 100 draws x 15 rho (tol 1e-8)")


def test_criterion_08_ris_exactness():
    from scipy.stats import norm

    from bsar.ris import RisConfig, RisLikelihood, _recursive_log_probability

    data = simulate_replication(McCellConfig(n=50, rho_true=0.0), 0)
    lik = RisLikelihood(data, RisConfig(R=1000), np.random.default_rng(0))
    beta = np.array([0.3, -0.2])
    err0 = abs(lik(beta, 0.0) - norm.logcdf((2 * data.y - 1) * (data.X @ beta)).sum())
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    B = np.linalg.inv(np.linalg.cholesky(np.linalg.inv(S)).T)
    p = np.exp(_recursive_log_probability(np.zeros(2), B, np.log(np.random.default_rng(1).random((2, 1000)))))
    exact = 0.25 + np.arcsin(0.5) / (2 * np.pi)
    ok = err0 <= 1e-12 and abs(p - exact) <= 0.01
    report(8, ok, f"rho=0 |sim - exact| = {err0:.1e} (tol 1e-12); bivariate orthant {p:.4f} vs {exact:.4f} (tol 0.01)")


def test_criterion_09_km_gradients():
    from scipy.special import expit

    from bsar.dgp import generate_bsar
    from bsar.gmm import km_gradients, sigma_derivative, sigma_derivative_symmetric
    from bsar.spatial import WeightMatrix, draw_distance_weights, standardized_index

    rng = np.random.default_rng(9)
    worst = 0.0
    for i in range(50):
        n = int(rng.integers(5, 21))
        if i % 2:
            raw = (rng.random((n, n)) < 0.3).astype(float)
            np.fill_diagonal(raw, 0)
            for j in np.flatnonzero(raw.sum(1) == 0):
                raw[j, (j + 1) % n] = 1
            W = WeightMatrix.from_adjacency(raw)
        else:
            W, _, _ = draw_distance_weights(n, 0.6, rng)
        rho = [0.0, 0.3, 0.6][i % 3]
        data = generate_bsar(W, rng.normal(0, 1, 2), rho, rng)
        beta = rng.normal(0, 1, 2)
        _, G = km_gradients(beta, rho, data)
        P = lambda r: expit(standardized_index(W, r, data.X, beta))
        h = 1e-6
        fd = (P(rho + h) - P(rho - h)) / (2 * h)
        worst = max(worst, np.max(np.abs(G - fd)) / np.max(np.abs(fd)))
    ring = np.zeros((9, 9))
    idx = np.arange(9)
    ring[idx, (idx + 1) % 9] = ring[(idx + 1) % 9, idx] = 0.5
    sym = max(np.max(np.abs(sigma_derivative(ring, r) - sigma_derivative_symmetric(ring, r)))
              for r in (-0.5, 0.3, 0.6, 0.9))
    ok = worst <= 1e-5 and sym <= 1e-10
    report(9, ok, f"max relative FD error {worst:.1e} on 50 instances (tol 1e-5); symmetric reduction {sym:.1e} (tol 1e-10)")


def test_criterion_10_e_step_oracle():
    from bsar.binary import generalized_residual

    rng = np.random.default_rng(10)
    worst = 0.0
    pairs = [(q, y) for q in (-2.0, -0.5, 0.0, 0.7, 2.5) for y in (0, 1)]
    for q, y in pairs:
        total, count = 0.0, 0
        for _ in range(10):
            d = q + rng.standard_normal(1_000_000)
            keep = d > 0 if y == 1 else d <= 0
            total += d[keep].sum()
            count += keep.sum()
        worst = max(worst, abs(q + generalized_residual(q, y) - total / count))
    report(10, worst <= 0.005, f"max |E-step - simulated mean| = {worst:.4f} over 10 (q, y) pairs, 1e7 draws each (tol 0.005)")


def test_criterion_11_gibbs_conditionals():
    from bsar.gibbs import GibbsState, draw_beta, draw_rho_metropolis, rho_log_density

    data = simulate_replication(McCellConfig(n=50, rho_true=0.45), 0)
    rng = np.random.default_rng(11)
    state = GibbsState(beta=np.array([4.0, -2.0]), rho=0.45, sigma2=1.0,
                       v=rng.uniform(0.8, 1.2, 50), y_star=data.y_star.copy())
    draws = np.array([draw_beta(state, data, rng) for _ in range(100_000)])
    Xv = data.X / state.v[:, None]
    cov = np.linalg.inv(Xv.T @ data.X)
    cov_err = np.max(np.abs(np.cov(draws.T) - cov) / np.sqrt(np.outer(np.diag(cov), np.diag(cov))))

    lo, hi = data.W.domain.interior(1e-6)
    edges = np.linspace(lo, hi, 201)
    # midpoint rule with 20 nodes inside every bin
    grid = (edges[:-1, None] + (np.arange(20) + 0.5) / 20 * np.diff(edges)[:, None]).ravel()
    logf = np.array([rho_log_density(r, state, data) for r in grid])
    dens = np.exp(logf - logf.max())
    chain = np.empty(1_000_000)
    for i in range(chain.size):
        state.rho, _ = draw_rho_metropolis(state, data, rng, 0.1)
        chain[i] = state.rho
    hist, _ = np.histogram(chain[5000:], bins=edges)
    ref, _ = np.histogram(grid, bins=edges, weights=dens)
    tv = 0.5 * np.abs(hist / hist.sum() - ref / ref.sum()).sum()
    ok = cov_err <= 0.02 and tv < 0.02
    report(11, ok, f"draw_beta covariance max relative error {cov_err:.4f} (tol 0.02); "
                   f"Metropolis TV distance {tv:.4f} over 1e6 steps, 200 bins (tol 0.02)")


def test_criterion_12_end_to_end_determinism(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}.csv"
        subprocess.run([sys.executable, "-m", "bsar.cli", "run", "--n", "50", "--rho", "0.45", "--reps", "2",
                        "--seed", "5", "--out", str(out)], check=True, capture_output=True)
        rows = [line.split(",") for line in out.read_text().splitlines()]
        outs.append([r[:7] + r[8:] for r in rows])
    report(12, outs[0] == outs[1], f"two CLI runs, {len(outs[0]) - 1} records each, identical apart from seconds")
