"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from conftest import random_dataset
from oracles import platt_grid_search, triplet_brute_force
from skillpool.cli import main
from skillpool.metrics import best_f1_threshold, kendall_tau, roc_auc
from skillpool.model import Dataset, HierarchicalModel, LogitObservation, RankObservation, build_index
from skillpool.posterior import summarize_all
from skillpool.sampler import SamplerConfig, run_chains, sample
from skillpool.simkit import FixedHyperModel, TruthConfig, grid_posterior_oracle, recovery_config, sbc, simulate
from skillpool.upstream import platt_fit, triplet_loss_batch_hard
from targets import standard_normal
from test_metrics import brute_auc, brute_f1, brute_tau_b, enumerate_p, random_binary_instance
from test_model import central_diff
from test_upstream import platt_dataset, random_batch


@pytest.fixture
def verdict(capsys):
    def emit(criterion, title, checks, elapsed, limit, detail=""):
        ok = all(checks.values()) and elapsed < limit
        failed = [k for k, v in checks.items() if not v] + ([f"runtime>{limit}s"] if elapsed >= limit else [])
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2} {title}: {detail} ({elapsed:.1f}s, limit {limit}s)"
        if failed:
            line += f" failed: {', '.join(failed)}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_01_gradient_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        ds = random_dataset(rng, n=int(rng.integers(1, 11)), m=int(rng.integers(1, 4)))
        model = HierarchicalModel(ds)
        x = rng.uniform(-2, 2, model.dim)
        _, g = model(x)
        fd = central_diff(model, x, h=1e-5)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-2))))
    verdict(1, "gradient vs central differences", {"rel err < 1e-5": worst < 1e-5},
            time.perf_counter() - t0, 10, f"worst relative error {worst:.2e} over 20 instances")


def test_02_sampler_soundness(verdict):
    t0 = time.perf_counter()
    draws = sample(standard_normal(10), 10, SamplerConfig(chains=4, iterations=3000, warmup=1000, seed=2))
    x = draws.pooled()
    diag = draws.diagnostics()
    means, sds = x.mean(axis=0), x.std(axis=0, ddof=1)
    corr = np.corrcoef(x.T)[np.triu_indices(10, 1)]
    n_div = int(draws.divergent.sum())
    checks = {"means": bool(np.all(np.abs(means) <= 0.05)),
              "sds": bool(np.all((sds >= 0.95) & (sds <= 1.05))),
              "rhat": bool(np.all(diag.rhat < 1.01)),
              "divergences": n_div <= 2,
              "correlations": bool(np.all(np.abs(corr) <= 0.05)),
              "draw count": draws.draws.shape == (4, 2000, 10)}
    verdict(2, "10-D standard normal", checks, time.perf_counter() - t0, 60,
            f"max|mean| {np.abs(means).max():.3f}, sd in [{sds.min():.3f}, {sds.max():.3f}], "
            f"max Rhat {diag.rhat.max():.4f}, {n_div} divergences")


def test_03_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    logits = (1.4, 0.6, 2.1)
    ds = Dataset(("a",), ("x",), tuple(LogitObservation("a", "x", t, v) for t, v in enumerate(logits)),
                 (RankObservation("a", 1, "validation"),))
    mu, sigma, tau = 0.2, 1.0, 1.2
    mean, sd = grid_posterior_oracle(ds, mu, sigma, tau)
    model = FixedHyperModel(ds, (mu,), (sigma,), (tau,))
    x = sample(model, model.dim, SamplerConfig(chains=4, iterations=9000, warmup=1000, seed=3)).pooled()[:, 0]
    rel_mean = abs(x.mean() - mean) / abs(mean)
    rel_sd = abs(x.std(ddof=1) - sd) / sd
    verdict(3, "MCMC vs grid oracle (N=1, M=1)", {"mean": rel_mean < 0.02, "sd": rel_sd < 0.02},
            time.perf_counter() - t0, 30,
            f"oracle mean {mean:.4f} sd {sd:.4f}; relative error mean {rel_mean:.2%} sd {rel_sd:.2%}")


def test_04_parameter_recovery(verdict):
    t0 = time.perf_counter()
    hits = 0
    worst_z = 0.0
    for seed in range(20):
        ds, truth = simulate(recovery_config(seed))
        draws = run_chains(ds, config=SamplerConfig(chains=4, iterations=1000, warmup=500, seed=seed))
        idx = build_index(ds)
        mu = draws.pooled()[:, idx.mu]
        z = np.abs(mu.mean(axis=0) - truth.mu) / mu.std(axis=0, ddof=1)
        worst_z = max(worst_z, float(z.max()))
        hits += bool(np.all(z <= 3.0))
    verdict(4, "hyperparameter recovery (N=50, M=3)", {">= 19 of 20": hits >= 19},
            time.perf_counter() - t0, 900, f"{hits}/20 runs recover every mu within 3 sd (worst {worst_z:.2f} sd)")


SBC_TRUTH = TruthConfig(n_gamers=4, n_modalities=2, mu=(0, 0), sigma=(1, 1), tau=(1, 1), logits_per_pair=3,
                        validation_fraction=0.5, seed=11)
SBC_SAMPLER = SamplerConfig(chains=2, iterations=800, warmup=400, max_treedepth=6, seed=11)


def test_05_simulation_based_calibration(verdict):
    t0 = time.perf_counter()
    good = sbc(SBC_TRUTH, 200, SBC_SAMPLER)
    # the mutant is scored on every replicate: under the Rhat gate it would simply be excluded
    bad = sbc(SBC_TRUTH, 200, SBC_SAMPLER, mutate="gradient_sign", max_rhat=math.inf)
    kept = good.replicates - good.excluded
    checks = {"baseline p > 0.01": bool(np.all(good.p_values > 0.01)),
              "mutant p < 1e-4": bool(np.min(bad.p_values) < 1e-4)}
    verdict(5, "simulation-based calibration", checks, time.perf_counter() - t0, 1800,
            f"baseline min p {good.p_values.min():.3f} ({kept}/200 kept), mutant min p {bad.p_values.min():.1e}")


def test_06_metric_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    auc_err, f1_ok = 0.0, True
    for _ in range(100):
        s, y = random_binary_instance(rng)
        auc_err = max(auc_err, abs(roc_auc(s, y) - brute_auc(s, y)))
        sweep = max(brute_f1(s, y, c) for c in list(np.unique(s)) + [math.inf])
        f1_ok &= abs(brute_f1(s, y, best_f1_threshold(s, y)) - sweep) <= 1e-15
    tau_err = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 40))
        x, z = rng.integers(0, 6, n).astype(float), rng.integers(0, 6, n).astype(float)
        x[0], x[1], z[0], z[1] = 0, 1, 0, 1
        tau_err = max(tau_err, abs(kendall_tau(x, z)[0] - brute_tau_b(x, z)[0]))
    p_err = 0.0
    for n in range(3, 9):
        for _ in range(3 if n < 8 else 1):
            x, z = rng.permutation(n).astype(float), rng.permutation(n).astype(float)
            p_err = max(p_err, abs(kendall_tau(x, z)[1] - enumerate_p(x, z)))
    checks = {"auc": auc_err <= 1e-12, "f1": bool(f1_ok), "tau": tau_err <= 1e-15, "exact p": p_err <= 1e-15}
    verdict(6, "metric oracles", checks, time.perf_counter() - t0, 30,
            f"AUC err {auc_err:.1e}, tau err {tau_err:.1e}, exact-p err {p_err:.1e}")


def test_07_platt_vs_grid(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        s, y = platt_dataset(rng)
        model = platt_fit(s, y)
        a, b, _ = platt_grid_search(s, y)
        worst = max(worst, abs(model.a - a), abs(model.b - b))
    verdict(7, "Platt fit vs dense grid", {"within 1e-3": worst < 1e-3}, time.perf_counter() - t0, 30,
            f"worst parameter gap {worst:.1e} over 20 datasets")


def test_08_triplet_machinery(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    loss_err = 0.0
    for _ in range(50):
        e, y = random_batch(rng)
        margin = float(rng.uniform(0.1, 3))
        loss_err = max(loss_err, abs(triplet_loss_batch_hard(e, y, margin)[0] - triplet_brute_force(e, y, margin)))
    grad_err, checked = 0.0, 0
    while checked < 20:
        e, y = random_batch(rng)
        margin = float(rng.uniform(0.5, 3))
        _, grad = triplet_loss_batch_hard(e, y, margin)
        h = 1e-6
        fd = np.zeros_like(e)
        kinked = False
        for idx in np.ndindex(e.shape):
            d = np.zeros_like(e)
            d[idx] = h
            lp, gp = triplet_loss_batch_hard(e + d, y, margin)
            lm, gm = triplet_loss_batch_hard(e - d, y, margin)
            kinked |= not np.allclose(gp, gm, atol=1e-3)
            fd[idx] = (lp - lm) / (2 * h)
        if kinked:
            continue
        grad_err = max(grad_err, float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3))))
        checked += 1
    verdict(8, "batch-hard triplet loss", {"loss": loss_err <= 1e-12, "gradient": grad_err < 1e-4},
            time.perf_counter() - t0, 10, f"loss err {loss_err:.1e}, gradient rel err {grad_err:.1e} on 20 batches")


def _pipeline(out):
    t0 = time.perf_counter()
    codes = [
        main(["simulate", "--out", str(out / "data"), "--gamers", "425", "--modalities", "5", "--seed", "425"]),
        main(["pool", "--logits", str(out / "data" / "logits.jsonl"), "--ranks", str(out / "data" / "ranks.csv"),
              "--out", str(out / "fit"), "--chains", "4", "--iters", "3000", "--warmup", "1000", "--seed", "425"]),
        main(["groups", "--summary", str(out / "fit" / "summary.json"), "--ranks", str(out / "data" / "ranks.csv"),
              "--out", str(out / "groups")]),
    ]
    return codes, time.perf_counter() - t0


def test_09_pipeline_scale(verdict, tmp_path):
    codes, elapsed = _pipeline(tmp_path / "run1")
    codes2, _ = _pipeline(tmp_path / "run2")
    files = sorted(p.relative_to(tmp_path / "run1") for p in (tmp_path / "run1").rglob("*") if p.is_file())
    identical = all((tmp_path / "run1" / f).read_bytes() == (tmp_path / "run2" / f).read_bytes() for f in files)
    n_draws = sum(len((tmp_path / "run1" / "fit" / f"draws_chain{k}.csv").read_text().splitlines()) - 1
                  for k in range(4))
    checks = {"exit codes": codes == codes2 == [0, 0, 0], "byte-identical rerun": identical,
              "4 x 2000 draws": n_draws == 8000}
    verdict(9, "simulate -> pool -> groups at N=425, M=5", checks, elapsed, 600,
            f"{len(files)} output files, rerun identical: {identical}")


def test_10_interval_width(verdict):
    t0 = time.perf_counter()
    n, m = 40, 2
    counts = np.where(np.arange(n)[:, None] < n // 2, 2, 20) * np.ones((1, m), dtype=int)
    light_w, heavy_w, wins = [], [], 0
    for r in range(20):
        ds, _ = simulate(TruthConfig(n_gamers=n, n_modalities=m, mu=(0, 0), sigma=(1, 1), tau=(1, 1),
                                     logits_per_pair=counts, seed=100 + r))
        draws = run_chains(ds, config=SamplerConfig(chains=2, iterations=1000, warmup=500, seed=r))
        width = np.array([s.interval_90 for s in summarize_all(draws.pooled(), build_index(ds), ds)])
        light_w.append(width[: n // 2].mean())
        heavy_w.append(width[n // 2:].mean())
        wins += heavy_w[-1] < light_w[-1]
    checks = {"average narrower": np.mean(heavy_w) < np.mean(light_w), "every replicate": wins == 20}
    verdict(10, "credible interval width vs data volume", checks, time.perf_counter() - t0, 900,
            f"mean 90% width {np.mean(heavy_w):.3f} (20/pair) vs {np.mean(light_w):.3f} (2/pair); "
            f"narrower in {wins}/20 replicates")
