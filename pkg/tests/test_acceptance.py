"""Acceptance criteria 1-10.

Each test records one ``PASS``/``FAIL`` line (also printed in the pytest
terminal summary) and then asserts the criterion, including its runtime
budget.  Run just this suite with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import make_dataset
from mempate import blm, cli, mem, sim
from mempate.bart import model as bart
from mempate.config import parse_text
from mempate.data import Dataset, Schema, write_dataset
from mempate.models import BLMModel
from mempate.pate import bayesian_bootstrap_weights
from oracles import evidence_rqmc, mvt_logpdf_rank_one, random_nig_instance

RESULTS: list[str] = []
SEED = 2024


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


@contextmanager
def timer():
    box = {}
    start = time.perf_counter()
    yield box
    box["s"] = time.perf_counter() - start


# ---------------------------------------------------------------------------


def test_criterion_01_blm_marginal_oracle():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    with timer() as t:
        for i in range(20):
            D, y, prior = random_nig_instance(rng)
            exact = math.exp(blm.marginal_log_likelihood(D, y, prior))
            worst = max(worst, abs(exact / evidence_rqmc(D, y, prior, seed=i) - 1))
    ok = worst < 0.01 and t["s"] < 120
    report(1, ok, f"max relative error {worst:.2e} over 20 instances (limit 1e-2), {t['s']:.1f}s")
    assert ok


def test_criterion_02_conjugacy():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    with timer() as t:
        for _ in range(100):
            n, d = int(rng.integers(2, 15)), int(rng.integers(1, 4))
            D = np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))])
            y = rng.normal(size=n)
            M = rng.normal(size=(d, d))
            prior = blm.NIGHyperparams(rng.uniform(1, 4), rng.uniform(0.5, 3), rng.normal(size=d), M @ M.T + np.eye(d))
            once = blm.posterior(D, y, prior)
            step = prior
            for i in range(n):
                step = blm.posterior(D[i:i + 1], y[i:i + 1], step).as_prior()
            for got, want in ((step.a, once.a_n), (step.b, once.b_n), (step.mu, once.mu_n), (step.V, once.V_n)):
                want = np.asarray(want)
                worst = max(worst, float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300)))
        D = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
        y = D @ [0.5, 1.0, -1.0] + rng.normal(size=200)
        diffuse = blm.posterior(D, y, blm.NIGHyperparams(2.0, 1.0, np.zeros(3), 1e8 * np.eye(3)))
        ls_err = float(np.max(np.abs(diffuse.mu_n - np.linalg.lstsq(D, y, rcond=None)[0])))
    ok = worst < 1e-8 and ls_err < 1e-3 and t["s"] < 10
    report(2, ok, f"sequential vs one-shot rel err {worst:.1e} (limit 1e-8); diffuse vs LS {ls_err:.1e}"
                  f" (limit 1e-3), {t['s']:.2f}s")
    assert ok


def test_criterion_03_bart_stump_closed_form():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    with timer() as t:
        for n in (1, 5, 20):
            X = rng.normal(size=(n, 3))
            y = 0.3 * rng.normal(size=n)
            cfg = bart.BartConfig(m=200, alpha=0.0, gamma=rng.uniform(0.1, 50), lam=rng.uniform(0.01, 1), nu=3.0)
            est = bart.marginal_log_likelihood_prior_mc(X, y, cfg, 100, rng)
            worst = max(worst, abs(est - mvt_logpdf_rank_one(y, cfg.m / cfg.gamma, cfg.lam, cfg.nu)))
    ok = worst < 1e-10 and t["s"] < 10
    report(3, ok, f"max |MC - analytic| {worst:.1e} for n in (1,5,20) (limit 1e-10), {t['s']:.2f}s")
    assert ok


def test_criterion_04_bart_conditional_correctness():
    rng = np.random.default_rng(SEED)
    with timer() as t:
        n, gamma = 40, 4.0
        X = rng.normal(size=(n, 2))
        y = 0.25 + 0.4 * rng.normal(size=n)
        cfg = bart.BartConfig(m=1, alpha=0.0, gamma=gamma, lam=0.1, n_burn=100, n_keep=10 ** 4)
        vals = np.array([d.value[0] for d in bart.fit_mcmc(X, y, cfg, rng)])
        target = y.sum() / (n + gamma)
        batches = vals.reshape(100, -1).mean(axis=1)
        se = batches.std(ddof=1) / math.sqrt(batches.size)
        z = abs(vals.mean() - target) / se
        Xp = rng.normal(size=(100, 3))
        Xp[:, 2] = np.round(Xp[:, 2])
        yp = np.sin(2 * Xp[:, 0]) + 0.3 * rng.normal(size=100)
        yp = (yp - yp.mean()) / np.ptp(yp)
        pcfg = bart.default_bart_config(Xp, yp, m=20, n_burn=250, n_keep=250, change_moves=True)
        trace = bart.MCMCTrace()
        bart.fit_mcmc(Xp, yp, pcfg, rng, check=True, trace=trace)
        sweeps = len(trace.sigma2)
    ok = z < 3 and sweeps == 500 and t["s"] < 120
    report(4, ok, f"leaf mean {vals.mean():.5f} vs {target:.5f}: {z:.2f} batch-means SE (limit 3);"
                  f" partition held over {sweeps} sweeps, {t['s']:.1f}s")
    assert ok


def test_criterion_05_mem_weights():
    rng = np.random.default_rng(SEED)
    fails = []
    with timer() as t:
        for i in range(300):
            H = i % 11
            K = 2 ** H
            kind = mem.PRIOR_KINDS[i % 4]
            prior = mem.prior_probs(mem.enumerate_patterns(H), mem.ModelPrior(kind, int(rng.integers(1, 6))))
            # values on a 2^-20 grid make the shifted inputs exact, so only the weights' own error is measured
            lm = np.round((rng.normal(scale=rng.choice([1.0, 30.0]), size=K) - rng.uniform(0, 1e5)) * 2 ** 20) / 2 ** 20
            w = mem.posterior_weights(lm, prior)
            if not (np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12):
                fails.append(("simplex", i))
            if np.max(np.abs(mem.posterior_weights(lm + np.round(rng.normal(scale=1e3) * 2 ** 20) / 2 ** 20, prior) - w)) > 1e-12:
                fails.append(("scale", i))
            if H:
                flat = mem.prior_probs(mem.enumerate_patterns(H), mem.ModelPrior())
                lm1 = rng.normal(size=K)
                q = int(rng.integers(K))
                lm2 = lm1.copy()
                lm2[q] += rng.uniform(0.01, 1)
                w1, w2 = mem.posterior_weights(lm1, flat), mem.posterior_weights(lm2, flat)
                others = np.arange(K) != q
                if not (w2[q] > w1[q] and np.all(w2[others] < w1[others])):
                    fails.append(("monotone", i))
        base = make_dataset(sizes=(50,), seed=SEED)
        idx = base.source_index("P")
        dup = Dataset(y=np.tile(base.y, 2), a=np.tile(base.a, 2), source=np.array(["P"] * 50 + ["S1"] * 50, dtype=object),
                      X=np.vstack([base.X[idx]] * 2), sources=("P", "S1"), covariate_names=base.covariate_names)
        w_borrow = mem.build_mem_space(dup, BLMModel(), "flat-half").weights[0]
    ok = not fails and w_borrow > 0.5 and t["s"] < 60
    report(5, ok, f"300 random instances H<=10, {len(fails)} property failures; duplicated-source"
                  f" omega(borrow) = {w_borrow:.4f} (limit > 0.5), {t['s']:.1f}s")
    assert ok


def _moments(n, N, rng, chunk=100_000):
    s = np.zeros((4, n))
    for start in range(0, N, chunk):
        w = bayesian_bootstrap_weights(n, rng, size=min(chunk, N - start))
        for k in range(4):
            s[k] += (w ** (k + 1)).sum(axis=0)
    m1, m2, m3, m4 = s / N
    var = m2 - m1 ** 2
    c4 = m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4
    return m1, var, np.sqrt(var / N), np.sqrt(np.maximum(c4 - var ** 2, 0) / N)


def test_criterion_06_bayesian_bootstrap():
    rng = np.random.default_rng(SEED)
    N = 10 ** 6
    worst = 0.0
    with timer() as t:
        for n in (2, 5, 50):
            mean, var, se_mean, se_var = _moments(n, N, rng)
            z_mean = np.abs(mean - 1 / n) / se_mean
            z_var = np.abs(var - (n - 1) / (n ** 2 * (n + 1))) / se_var
            # coordinate 1 at 3 SE; every coordinate at a Bonferroni-adjusted 4.5 SE
            worst = max(worst, z_mean[0], z_var[0], z_mean.max() / 1.5, z_var.max() / 1.5)
    ok = worst < 3 and t["s"] < 60
    report(6, ok, f"flat-Dirichlet moments for n in (2,5,50), 1e6 draws: worst {worst:.2f} SE (limit 3),"
                  f" {t['s']:.1f}s")
    assert ok


def test_criterion_07_scenario_one_blm():
    with timer() as t:
        res = sim.run_monte_carlo(sim.ScenarioConfig(1), ["nb-blm", "blm"], 200, B=100, seed=SEED,
                                  deltas=[0.0, -2.5, 2.5])
    nb0, b0 = res.get("nb-blm", 0.0), res.get("blm", 0.0)
    lo, hi = res.get("blm", -2.5), res.get("blm", 2.5)
    a = abs(nb0.bias) < 0.1
    b = b0.root_mse < nb0.root_mse
    c = b0.mean_borrow_weight > 0.5 and lo.mean_borrow_weight < 0.2 and hi.mean_borrow_weight < 0.2
    ok = a and b and c and t["s"] < 1800
    report(7, ok, f"BLM, 200 reps: (a) NB bias {nb0.bias:+.3f}; (b) RMSE {b0.root_mse:.3f} vs NB {nb0.root_mse:.3f};"
                  f" (c) borrow weight {b0.mean_borrow_weight:.3f} at 0, {lo.mean_borrow_weight:.3f}/"
                  f"{hi.mean_borrow_weight:.3f} at -/+2.5, {t['s']:.0f}s")
    assert ok


def test_criterion_07_scenario_one_bart():
    with timer() as t:
        res = sim.run_monte_carlo(sim.ScenarioConfig(1), ["nb-bart", "bart"], 50, B=100, seed=SEED,
                                  deltas=[0.0, -2.5, 2.5])
    nb0, b0 = res.get("nb-bart", 0.0), res.get("bart", 0.0)
    lo, hi = res.get("bart", -2.5), res.get("bart", 2.5)
    b = b0.root_mse < nb0.root_mse
    c = b0.mean_borrow_weight > 0.5 and lo.mean_borrow_weight < 0.2 and hi.mean_borrow_weight < 0.2
    ok = b and c and t["s"] < 7200
    report(7, ok, f"BART, 50 reps: (b) RMSE {b0.root_mse:.3f} vs NB {nb0.root_mse:.3f}; (c) borrow weight"
                  f" {b0.mean_borrow_weight:.3f} at 0, {lo.mean_borrow_weight:.3f}/{hi.mean_borrow_weight:.3f}"
                  f" at -/+2.5, {t['s']:.0f}s")
    assert ok


def test_criterion_08_scenario_three():
    with timer() as t:
        res = sim.run_monte_carlo(sim.ScenarioConfig(3), ["bart", "blm"], 100, B=100, seed=SEED, deltas=[0.0])
    br, bl = res.get("bart", 0.0), res.get("blm", 0.0)
    ok = abs(br.bias) < abs(bl.bias) and br.root_mse < bl.root_mse and t["s"] < 7200
    report(8, ok, f"100 reps: bias BART {br.bias:+.3f} vs BLM {bl.bias:+.3f}; RMSE BART {br.root_mse:.3f}"
                  f" vs BLM {bl.root_mse:.3f}, {t['s']:.0f}s")
    assert ok


def test_criterion_09_model_prior_family():
    bad = []
    with timer() as t:
        one = mem.ExchPattern((1,))
        for r in (1, 2, 39):
            expected = {"flat-half": 1 / 2, "power-r": (1 / 2) ** r, "inverse-r": 1 / r,
                        "power-half-r": (1 / 2) ** (r / 2)}
            for kind, p in expected.items():
                if mem.model_prior(one, mem.ModelPrior(kind, r)) != p:
                    bad.append((kind, r))
        for H in range(11):
            for kind in mem.PRIOR_KINDS:
                for r in (1, 2, 39):
                    total = mem.prior_probs(mem.enumerate_patterns(H), mem.ModelPrior(kind, r)).sum()
                    if abs(total - 1) > 1e-12:
                        bad.append((kind, r, H))
    ok = not bad and t["s"] < 1
    report(9, ok, f"exact Pr(Z=1) for r in (1,2,39) and pattern priors summing to 1 for H<=10:"
                  f" {len(bad)} mismatches, {t['s']:.2f}s")
    assert ok


def test_criterion_10_end_to_end_determinism(tmp_path):
    data = make_dataset(sizes=(60, 40, 40), p=2, seed=SEED)
    schema = Schema("y", "a", "site", "P", ("x1", "x2"))
    write_dataset(data, tmp_path / "d.csv", schema)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data.path = {tmp_path / 'd.csv'}\nschema.outcome = y\nschema.treatment = a\n"
                   "schema.source = site\nschema.primary = P\nschema.covariates = x1, x2\nB = 500\n"
                   "sim.reps = 3\nsim.part = 2\n")
    outputs = {"fit": ("mem_weights.csv", "pate_summary.csv", "pate_draws.csv", "manifest.txt"),
               "simulate": ("mc_results.csv", "manifest.txt")}
    mismatches = []
    with timer() as t:
        for command, files in outputs.items():
            for extra in ([], ["--model", "bart", "--set", "bart.m=50"]):
                runs = {}
                for name, threads in (("a", 1), ("b", 1), ("mt", 4)):
                    out = tmp_path / f"{command}-{len(extra)}-{name}"
                    code = cli.main([command, "--config", str(cfg), "--seed", "99", "--threads", str(threads),
                                     "--out", str(out)] + extra)
                    if code != 0:
                        mismatches.append((command, name, "exit", code))
                    runs[name] = out
                for f in files:
                    if (runs["a"] / f).read_bytes() != (runs["b"] / f).read_bytes():
                        mismatches.append((command, f, "rerun"))
                    if f != "manifest.txt" and (runs["a"] / f).read_bytes() != (runs["mt"] / f).read_bytes():
                        mismatches.append((command, f, "threads"))
                manifest = parse_text((runs["mt"] / "manifest.txt").read_text())
                if manifest["threads"] != "4" or manifest["seed"] != "99":
                    mismatches.append((command, "manifest"))
    ok = not mismatches and t["s"] < 300
    report(10, ok, f"fit and simulate (BLM and BART) byte-identical across reruns and 1 vs 4 threads:"
                   f" {len(mismatches)} mismatches, {t['s']:.0f}s")
    assert ok, mismatches
