"""Acceptance criteria, each at its stated tolerance.

Every test prints exactly one ``PASS``/``FAIL`` line with the measured
numbers, then asserts.  Run standalone with ``python tests/test_acceptance.py``
or through pytest.  Seeds are fixed so reruns are bit-identical; the slow
criteria (4 and 5) take roughly ten minutes each on one core.
"""

from __future__ import annotations

import json
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from nbsreg.cli import main as cli_main
from nbsreg.data import ingest_csv, CsvSchema
from nbsreg.design import Formula
from nbsreg.pipeline import PipelineSpec, fit_outcome_models, run_pipeline, run_with_models
from nbsreg.regression import NbsRegressionFit, OmegaGrid, integrate_nbs, wilcoxon_nbs
from nbsreg.simulation import (REFERENCE_THETA, ScenarioConfig, generate_scenario_data, run_study,
                               true_models, true_theta_oracle)

SEED = 20261019


@pytest.fixture
def report(capsys):
    """Print one verdict line past pytest's output capture."""
    def emit(number: int, ok: bool, detail: str, started: float) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}  ({time.time() - started:.0f}s)"
        with capsys.disabled():
            print("\n" + line, flush=True)
    return emit


# 1 ---------------------------------------------------------------------------------

def test_criterion_1_oracle_agreement(report):
    t0 = time.time()
    cfg = ScenarioConfig(effect_present=True)
    got = {k: true_theta_oracle(cfg, k[0], k[1], 1_000_000, seed=SEED) for k in REFERENCE_THETA}
    err = {k: abs(got[k] - v) for k, v in REFERENCE_THETA.items()}
    ok = max(err.values()) <= 0.003 and time.time() - t0 < 60
    detail = ", ".join(f"theta({int(l)}|{x})={got[(l, x)]:.4f} (reference {REFERENCE_THETA[(l, x)]})" for l, x in REFERENCE_THETA)
    report(1, ok, f"{detail}; max |diff| {max(err.values()):.4f} <= 0.003", t0)
    assert ok


# 2 ---------------------------------------------------------------------------------

def test_criterion_2_quadrature_exactness(report):
    t0 = time.time()
    grid = np.linspace(-3, 3, 5)
    worst = 0.0
    for b0 in grid:
        for b1 in grid:
            for b2 in grid:
                fit = NbsRegressionFit(np.array([b0, b1, b2]), ("(Intercept)", "x", "probit(omega)"),
                                       Formula(["x"]), OmegaGrid())
                for x in (0.0, 1.0):
                    closed = norm.cdf((b0 + b1 * x) / np.sqrt(1 + b2 ** 2))
                    worst = max(worst, abs(integrate_nbs(fit, {"x": x}).theta - closed))
    ok = worst < 1e-6
    report(2, ok, f"max |quadrature - closed form| = {worst:.2e} over 125 coefficient triples, x in {{0,1}}", t0)
    assert ok


# 3 ---------------------------------------------------------------------------------

def test_criterion_3_rank_sum_oracle(report):
    t0 = time.time()
    rng = np.random.default_rng(SEED)
    mismatches = 0
    for _ in range(1000):
        n1, n0 = rng.integers(1, 51, 2)
        # small integer support forces plenty of ties
        b1 = rng.integers(0, rng.integers(2, 30), n1).astype(float)
        b0 = rng.integers(0, rng.integers(2, 30), n0).astype(float)
        diff = b1[:, None] - b0[None, :]
        brute = (2 * (diff > 0).sum() + (diff == 0).sum()) / (2 * n0 * n1)
        mismatches += wilcoxon_nbs(b1, b0) != brute
    ok = mismatches == 0
    report(3, ok, f"{1000 - mismatches}/1000 random instances equal brute-force concordance exactly", t0)
    assert ok


# 4 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_table1_desk_scale(report):
    t0 = time.time()
    cfg = ScenarioConfig(n=500, censoring_target=0.10, effect_present=True, lambdas=(2.0,),
                         n_sims=200, n_boot=200, m_draws=5000, seed=SEED)
    rep = run_study(cfg)
    r0, r1 = rep.rows
    checks = [
        abs(r0.mean_estimate - 0.353) <= 0.012,
        abs(r1.mean_estimate - 0.588) <= 0.02,
        r0.rejection_rate >= 0.90,
        abs(r0.mean_bootstrap_se / r0.empirical_se - 1) <= 0.30,
        abs(r1.mean_bootstrap_se / r1.empirical_se - 1) <= 0.30,
    ]
    ok = all(checks)
    detail = (f"mean theta(2|0)={r0.mean_estimate:.3f} (0.353+-0.012), mean theta(2|1)={r1.mean_estimate:.3f} "
              f"(0.588+-0.02), reject={r0.rejection_rate:.3f} (>=0.90), SE/ESE x=0 "
              f"{r0.mean_bootstrap_se:.4f}/{r0.empirical_se:.4f}, x=1 {r1.mean_bootstrap_se:.4f}/{r1.empirical_se:.4f} "
              f"(within 30%); {r0.n_ok} sims ok")
    report(4, ok, detail, t0)
    assert ok


# 5 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_table2_type_one_error(report):
    t0 = time.time()
    cfg = ScenarioConfig(n=500, censoring_target=0.30, effect_present=False, lambdas=(2.0, 12.0),
                         n_sims=200, n_boot=200, m_draws=5000, seed=SEED + 5)
    rep = run_study(cfg, n_oracle=200_000)
    rates = {r.lam: r.rejection_rate for r in rep.rows if r.x == 0}
    normal = {r.lam: r.rejection_rate_normal for r in rep.rows if r.x == 0}
    ok = all(0.02 <= v <= 0.10 for v in rates.values())
    detail = (", ".join(f"lambda={l:g}: reject {v:.3f}" for l, v in rates.items()) +
              " (each in [0.02, 0.10]); normal-approx test: " +
              ", ".join(f"{v:.3f}" for v in normal.values()) + f"; {rep.rows[0].n_ok} sims ok")
    report(5, ok, detail, t0)
    assert ok


# 6 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_table3_bias_pattern(report):
    t0 = time.time()
    out = {}
    for kind in ("cost", "survival"):
        cfg = ScenarioConfig(n=5000, censoring_target=0.30, confounding=kind, level="high",
                             n_sims=50, n_boot=0, m_draws=5000, seed=SEED + 6)
        rep = run_study(cfg)
        out[kind] = {(r.lam, r.x): (r.true_theta, r.mean_estimate) for r in rep.rows}

    def avg_abs_bias(kind, lam):
        return np.mean([abs(out[kind][(lam, x)][1] - out[kind][(lam, x)][0]) for x in (0, 1)])

    truth21, est21 = out["cost"][(2.0, 1)]
    cost_drop = truth21 - est21
    c2, c12 = avg_abs_bias("cost", 2.0), avg_abs_bias("cost", 12.0)
    s2, s12 = avg_abs_bias("survival", 2.0), avg_abs_bias("survival", 12.0)
    ok = cost_drop >= 0.10 and c12 < c2 and s12 > s2
    detail = (f"cost-high theta(2|1) truth {truth21:.3f} est {est21:.3f} (drop {cost_drop:.3f} >= 0.10); "
              f"cost |bias| lambda=2 {c2:.3f} > lambda=12 {c12:.3f}; "
              f"survival |bias| lambda=2 {s2:.3f} < lambda=12 {s12:.3f} (averaged over x)")
    report(6, ok, detail, t0)
    assert ok


# 7 ---------------------------------------------------------------------------------

def test_criterion_7_model_fit_recovery(report):
    t0 = time.time()
    cfg = ScenarioConfig(n=5000, censoring_target=0.30, effect_present=True)
    spec = cfg.pipeline_spec()
    w_true = np.array([4.05, 0.15, cfg.beta_x, 0.2, cfg.beta_ax])
    c_true = np.array([4.2, 0.5, 0.0, 0.0, 0.002])   # x and l do not enter the cost model
    hits_w, hits_k, hits_c, names = [], [], [], None
    for i in range(100):
        d = generate_scenario_data(cfg, np.random.default_rng(np.random.SeedSequence(SEED, spawn_key=(7, i))))
        surv, _, _, cost = fit_outcome_models(d, spec.resolve(d))
        names = [f"weibull:{n}" for n in surv.names] + ["weibull:shape"] + [f"cost:{n}" for n in cost.names]
        hits_w.append(np.abs(surv.coefficients - w_true) <= 2 * surv.se)
        hits_k.append(abs(surv.shape_k - 2.0) <= 2 * surv.shape_se)
        hits_c.append(np.abs(cost.mean_coefficients - c_true) <= 2 * cost.se)
    rates = np.concatenate([np.mean(hits_w, 0), [np.mean(hits_k)], np.mean(hits_c, 0)])
    ok = bool(np.all(rates >= 0.93))
    detail = ", ".join(f"{n} {r:.2f}" for n, r in zip(names, rates)) + " (each >= 0.93)"
    report(7, ok, detail, t0)
    assert ok


# 8 ---------------------------------------------------------------------------------

def test_criterion_8_exchangeability_null(report):
    t0 = time.time()
    cfg = ScenarioConfig(n=5000)
    d = generate_scenario_data(cfg, np.random.default_rng(SEED + 8))
    surv, cost = true_models(cfg, treatment_effect=False)
    spec = PipelineSpec(lambdas=(2.0, 12.0), profiles=({"x": 0}, {"x": 1}), m_draws=100_000,
                        quantile_mode="empirical", seed=SEED)
    th = run_with_models(d, surv, cost, spec).thetas
    ok = bool(np.all((th >= 0.48) & (th <= 0.52)))
    detail = ", ".join(f"theta({l:g}|{p['x']})={th[i, j]:.4f}" for i, l in enumerate(spec.lambdas)
                       for j, p in enumerate(spec.profiles)) + " (each in [0.48, 0.52])"
    report(8, ok, detail, t0)
    assert ok


# 9 ---------------------------------------------------------------------------------

LAMBDAS_9 = "1,2,4,8,16,32,64"


@pytest.mark.slow
def test_criterion_9_zero_inflated_analogue(report):
    t0 = time.time()
    covered, monotone, failures = 0, 0, []
    n_seeds = 50
    with tempfile.TemporaryDirectory() as tmp:
        for s in range(n_seeds):
            run_dir = Path(tmp) / f"s{s}"
            seed = SEED + 900 + s
            code = cli_main(["simulate", "--scenario", "zero-inflated", "--n", "1000", "--seed", str(seed),
                             "--out", str(run_dir)])
            code = code or cli_main(["estimate", "--data", str(run_dir / "data.csv"), "--cost-model", "zero_inflated",
                                     "--lambda", LAMBDAS_9, "--M", "5000", "--bootstrap", "50", "--seed", str(seed),
                                     "--out", str(run_dir / "est")])
            if code != 0:
                failures.append(s)
                continue
            res = json.loads((run_dir / "est" / "results.json").read_text())
            # large-M plug-in estimate from the same fitted models
            data = ingest_csv(run_dir / "data.csv", CsvSchema.load(run_dir / "schema.json"))
            spec = PipelineSpec.from_dict(res["spec"])
            big = run_pipeline(data, replace(spec, m_draws=100_000, seed=seed + 1))
            ests = res["estimates"]
            lam_idx = {l: i for i, l in enumerate(spec.lambdas)}
            prof_idx = {json.dumps(p, sort_keys=True): j for j, p in enumerate(spec.profiles)}
            inside = all(e["ci_lower"] <= big.thetas[lam_idx[e["lambda"]], prof_idx[json.dumps(e["profile"], sort_keys=True)]]
                         <= e["ci_upper"] for e in ests)
            covered += inside
            theta = np.array([[e["theta"] for e in ests if e["lambda"] == l] for l in spec.lambdas])
            monotone += bool(np.all(np.diff(theta, axis=0) >= 0))
    ok = not failures and monotone == n_seeds and covered >= 0.9 * n_seeds
    detail = (f"end-to-end runs ok {n_seeds - len(failures)}/{n_seeds}; CED non-decreasing in lambda for every "
              f"profile in {monotone}/{n_seeds} seeds; all CIs contain the M=1e5 plug-in estimate in "
              f"{covered}/{n_seeds} seeds (>= 45)")
    report(9, ok, detail, t0)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
