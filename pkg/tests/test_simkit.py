import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from skillpool.errors import ValidationError
from skillpool.metrics import roc_auc
from skillpool.model import Dataset, HierarchicalModel, LogitObservation, RankObservation, build_index
from skillpool.posterior import summarize_all
from skillpool.sampler import SamplerConfig, run_chains
from skillpool.simkit import (COVERAGE_PATTERN, FixedHyperModel, SignFlippedGradient, TruthConfig,
                              conjugate_posterior, coverage_counts, grid_posterior_oracle, rank_uniformity,
                              sbc, simulate, write_truth_json)


def one_pair(logits=(), rank=None):
    obs = tuple(LogitObservation("a", "x", t, v) for t, v in enumerate(logits))
    ranks = () if rank is None else (RankObservation("a", rank, "validation"),)
    return Dataset(("a",), ("x",), obs, ranks)


def test_simulate_is_deterministic():
    cfg = TruthConfig(n_gamers=6, n_modalities=2, mu=(0, 1), sigma=(1, 1), tau=(1, 1), seed=3)
    a, ta = simulate(cfg)
    b, tb = simulate(cfg)
    assert a.logits == b.logits and a.ranks == b.ranks and np.array_equal(ta.eta, tb.eta)


def test_truth_config_rejects_zero_scale():
    with pytest.raises(ValidationError):
        TruthConfig(n_gamers=2, n_modalities=1, mu=(0,), sigma=(0.0,), tau=(1,))
    with pytest.raises(ValidationError):
        TruthConfig(n_gamers=2, n_modalities=2, mu=(0,), sigma=(1,), tau=(1,))
    with pytest.raises(ValidationError):
        TruthConfig(n_gamers=2, n_modalities=1, mu=(0,), sigma=(1,), tau=(1,), validation_fraction=1.5)


def test_tiny_noise_logits_equal_effect():
    ds, truth = simulate(TruthConfig(n_gamers=3, n_modalities=2, mu=(0, 0), sigma=(1, 1), tau=(1e-8, 1e-8),
                                     logits_per_pair=5, seed=1))
    for obs in ds.logits:
        i, j = ds.gamers.index(obs.gamer), ds.modalities.index(obs.modality)
        assert abs(obs.logit - truth.eta[i, j]) < 1e-6


def test_logit_mean_matches_effect():
    n_draws = 100_000
    ds, truth = simulate(TruthConfig(n_gamers=1, n_modalities=1, mu=(0.3,), sigma=(1,), tau=(2.0,),
                                     logits_per_pair=n_draws, seed=4))
    values = np.array([o.logit for o in ds.logits])
    assert abs(values.mean() - truth.eta[0, 0]) < 3 * 2.0 / math.sqrt(n_draws)


def test_validation_fraction_and_rank_link():
    ds, truth = simulate(TruthConfig(n_gamers=2000, n_modalities=2, mu=(0.5, 0.5), sigma=(1, 1), tau=(1, 1),
                                     logits_per_pair=0, validation_fraction=0.25, seed=9))
    assert sum(r.split == "validation" for r in ds.ranks) == 500
    r = np.array([x.rank_a for x in ds.ranks])
    p = 1 / (1 + np.exp(-truth.skill))
    # logistic link: the mean outcome tracks the mean probability
    assert abs(r.mean() - p.mean()) < 4 * math.sqrt(p.mean() * (1 - p.mean()) / r.size)


def test_coverage_pattern_has_missing_pairs():
    counts = coverage_counts(2000, 5, np.random.default_rng(0))
    share = (counts > 0).mean(axis=0)
    for j, (target, mean) in enumerate(COVERAGE_PATTERN):
        assert abs(share[j] - target) < 0.04
        assert abs(counts[counts[:, j] > 0, j].mean() - mean) < 0.5


def test_truth_json(tmp_path):
    _, truth = simulate(TruthConfig(n_gamers=3, n_modalities=1, mu=(0,), sigma=(1,), tau=(1,), seed=2))
    write_truth_json(tmp_path / "t.json", truth)
    doc = json.loads((tmp_path / "t.json").read_text())
    assert [g["gamer"] for g in doc["gamers"]] == list(truth.gamers)
    assert doc["gamers"][1]["skill"] == pytest.approx(float(truth.skill[1]))


def test_truth_unconstrained_round_trip():
    ds, truth = simulate(TruthConfig(n_gamers=4, n_modalities=2, mu=(0, 1), sigma=(0.5, 2), tau=(1, 1), seed=5))
    model = HierarchicalModel(ds)
    assert np.allclose(model.constrain(truth.unconstrained()).eta, truth.eta)


# -- oracles ----------------------------------------------------------------

def test_conjugate_example():
    mean, sd = conjugate_posterior(0.0, 1.0, 1.0, [2.0])
    assert mean == pytest.approx(1.0) and sd == pytest.approx(1 / math.sqrt(2))
    assert conjugate_posterior(0.4, 2.0, 1.0, []) == (0.4, 2.0)


def test_grid_oracle_matches_conjugate():
    mean, sd = grid_posterior_oracle(one_pair([2.0]), 0.0, 1.0, 1.0)
    assert mean == pytest.approx(1.0, abs=1e-8) and sd == pytest.approx(1 / math.sqrt(2), abs=1e-8)
    logits = [0.3, -1.2, 2.2, 0.9]
    g = grid_posterior_oracle(one_pair(logits), 0.5, 0.8, 1.3)
    assert g == pytest.approx(conjugate_posterior(0.5, 0.8, 1.3, logits), abs=1e-8)


def test_grid_oracle_rank_term_raises_mean():
    base, _ = grid_posterior_oracle(one_pair([0.2]), 0.0, 1.0, 1.0)
    with_rank, _ = grid_posterior_oracle(one_pair([0.2], rank=1), 0.0, 1.0, 1.0)
    assert with_rank > base
    # independent quadrature with scipy densities
    num = integrate.quad(lambda e: e * stats.norm.pdf(e) * stats.norm.pdf(0.2, e) / (1 + math.exp(-e)), -12, 12)[0]
    den = integrate.quad(lambda e: stats.norm.pdf(e) * stats.norm.pdf(0.2, e) / (1 + math.exp(-e)), -12, 12)[0]
    assert with_rank == pytest.approx(num / den, abs=1e-7)


def test_grid_oracle_preconditions():
    ds = Dataset(("a", "b"), ("x",), (LogitObservation("a", "x", 0, 0.0),))
    with pytest.raises(ValidationError):
        grid_posterior_oracle(ds, 0, 1, 1)
    with pytest.raises(ValidationError):
        grid_posterior_oracle(one_pair([1.0]), 0, 1, 1, n_nodes=100)


def test_fixed_hyper_model_gradient(rng):
    ds, _ = simulate(TruthConfig(n_gamers=3, n_modalities=2, mu=(0, 1), sigma=(1, 0.5), tau=(1, 2),
                                 validation_fraction=0.7, seed=8))
    model = FixedHyperModel(ds, (0, 1), (1, 0.5), (1, 2))
    x = rng.normal(size=model.dim)
    _, g = model(x)
    fd = np.array([(model(x + h)[0] - model(x - h)[0]) / 2e-6 for h in np.eye(model.dim) * 1e-6])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-6)


def test_sign_flip_negates_gradient(small_dataset, rng):
    model = HierarchicalModel(small_dataset)
    x = rng.normal(size=model.dim)
    v, g = model(x)
    v2, g2 = SignFlippedGradient(model)(x)
    assert v == v2 and np.array_equal(g, -g2)


# -- SBC machinery ----------------------------------------------------------

def test_rank_uniformity_expected_counts():
    # 128 rank levels in 20 bins: bins hold 6 or 7 levels
    levels = np.arange(128)
    hist, chi2, p = rank_uniformity(levels[:, None], 128, 20)
    assert hist.sum() == 128 and chi2[0] == pytest.approx(0.0, abs=1e-12) and p[0] == pytest.approx(1.0)
    _, _, p_bad = rank_uniformity(np.zeros((200, 1), dtype=int), 128, 20)
    assert p_bad[0] < 1e-10


def test_rank_uniformity_null_calibration():
    # p-values of truly uniform ranks are roughly uniform
    rng = np.random.default_rng(0)
    p = np.array([rank_uniformity(rng.integers(0, 128, size=(200, 1)), 128, 20)[2][0] for _ in range(400)])
    assert np.mean(p < 0.01) < 0.03
    assert abs(np.mean(p < 0.5) - 0.5) < 0.08


def test_sbc_smoke_and_order_independence():
    cfg = TruthConfig(n_gamers=3, n_modalities=1, mu=(0,), sigma=(1,), tau=(1,), logits_per_pair=3,
                      validation_fraction=0.5, seed=5)
    sampler = SamplerConfig(chains=2, iterations=300, warmup=150, max_treedepth=6)
    with pytest.warns(RuntimeWarning):
        a = sbc(cfg, 3, sampler)
    with pytest.warns(RuntimeWarning):
        b = sbc(cfg, 3, sampler, n_jobs=2)
    assert np.array_equal(a.ranks, b.ranks) and a.excluded == b.excluded
    assert a.histograms.shape == (4, 20)
    assert np.all(a.histograms.sum(axis=1) == a.replicates - a.excluded)
    assert a.names == ["mu[video_spatial]", "sigma[video_spatial]", "tau[video_spatial]", "skill[g000]"]
    assert np.all((a.ranks >= 0) & (a.ranks <= 127))
    json.dumps(a.to_json())


def test_sbc_rejects_bad_arguments():
    cfg = TruthConfig(n_gamers=3, n_modalities=1, mu=(0,), sigma=(1,), tau=(1,))
    with pytest.raises(ValidationError):
        sbc(cfg, 0, SamplerConfig(chains=2, iterations=100, warmup=50))
    with pytest.raises(ValidationError):
        sbc(cfg, 5, SamplerConfig(chains=2, iterations=100, warmup=50), mutate="typo")


def test_posterior_skill_discriminates_held_out_ranks():
    ds, truth = simulate(TruthConfig(n_gamers=120, n_modalities=3, mu=(0, 0, 0), sigma=(1, 1, 1),
                                     tau=(1, 1, 1), logits_per_pair=8, validation_fraction=0.5, seed=21))
    draws = run_chains(ds, config=SamplerConfig(chains=2, iterations=800, warmup=400, seed=1))
    summaries = {s.gamer: s for s in summarize_all(draws.pooled(), build_index(ds), ds)}
    held_out = [r for r in ds.ranks if r.split == "train"]
    y = np.array([r.rank_a for r in held_out])
    auc = roc_auc([summaries[r.gamer].mean for r in held_out], y)
    random_auc = roc_auc(np.random.default_rng(3).normal(size=y.size), y)
    assert auc - random_auc >= 0.2
