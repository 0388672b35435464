import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import gaussian_kde

from skillpool.errors import ValidationError
from skillpool.model import Dataset, LogitObservation, RankObservation, build_index
from skillpool.posterior import (SkillSummary, decile_size, export_boxplot_csv, kde_mode, read_boxplot_csv,
                                 read_summary_json, select_groups, silverman_bandwidth, skill_draws,
                                 summarize, write_summary_json)


def index_2x2():
    ds = Dataset(("a", "b"), ("x", "y"), (LogitObservation("a", "x", 0, 0.0),))
    return build_index(ds)


def fake_summary(gamer, map_value):
    return SkillSummary(gamer, 100, map_value, 1.0, map_value, map_value - 2, map_value - 1, map_value,
                        map_value + 1, map_value + 2, 1)


def test_skill_draws_zero_z():
    idx = index_2x2()
    x = np.zeros((4, 100, idx.dim))
    x[:, :, idx.mu] = [1.0, 2.0]
    s = skill_draws(x, idx, "a")
    assert s.shape == (400,) and np.all(s == 3.0)


def test_skill_draws_match_recomputation(rng):
    idx = index_2x2()
    x = rng.normal(size=(3, 50, idx.dim))
    s = skill_draws(x, idx, "b")
    flat = x.reshape(-1, idx.dim)
    expected = [sum(r[idx.mu][j] + math.exp(r[idx.log_sigma][j]) * r[idx.z_offset(1, j)] for j in range(2))
                for r in flat]
    assert np.allclose(s, expected, atol=1e-12)
    with pytest.raises(ValidationError):
        skill_draws(x, idx, "zed")


def test_summarize_symmetric_sample():
    s = summarize(np.tile([1.0, 2, 3, 4, 5], 40), "a")
    assert s.q50 == 3.0 and s.mean == pytest.approx(3.0)
    assert s.n_draws == 200


def test_summarize_needs_100_draws():
    with pytest.raises(ValidationError):
        summarize(np.arange(99.0), "a")


def test_quantiles_are_type7(rng):
    x = rng.normal(size=333)
    s = summarize(x, "a")
    xs = np.sort(x)
    for q, v in zip((0.05, 0.25, 0.5, 0.75, 0.95), (s.q05, s.q25, s.q50, s.q75, s.q95)):
        h = (x.size - 1) * q
        lo = int(math.floor(h))
        assert v == pytest.approx(xs[lo] + (h - lo) * (xs[min(lo + 1, x.size - 1)] - xs[lo]), abs=1e-14)


def test_map_gaussian_sample(rng):
    assert abs(kde_mode(rng.normal(size=40_000))) < 0.1


def test_map_bimodal_sample(rng):
    n = 20_000
    left = rng.uniform(size=n) < 0.7
    x = np.where(left, rng.normal(-2, 0.3, n), rng.normal(2, 0.3, n))
    assert abs(kde_mode(x) - (-2)) < 0.2


def test_map_exact_path_matches_scipy_kde(rng):
    x = rng.gamma(2.0, size=500)
    kde = gaussian_kde(x, bw_method=silverman_bandwidth(x) / np.std(x, ddof=1))
    assert kde_mode(x) == x[np.argmax(kde(x))]


def test_map_binned_path_matches_exact(rng):
    x = rng.gamma(3.0, size=6000)
    h = silverman_bandwidth(x)
    dens = np.array([np.exp(-0.5 * ((v - x) / h) ** 2).sum() for v in x])
    assert kde_mode(x) == pytest.approx(x[np.argmax(dens)], abs=0.05 * h)


@given(seed=st.integers(0, 2**32 - 1))
def test_summary_invariants_and_permutation(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(3, size=int(rng.integers(100, 600)))
    s = summarize(x, "a")
    assert s.q05 <= s.q25 <= s.q50 <= s.q75 <= s.q95
    assert x.min() <= s.map <= x.max()
    assert summarize(rng.permutation(x), "a") == s


def test_decile_sizes():
    assert decile_size(425) == 43
    assert decile_size(425, "floor") == 42
    assert decile_size(10) == 1
    with pytest.raises(ValidationError):
        decile_size(10, "round")


def test_select_groups_examples():
    summaries = [fake_summary(f"a{k}", float(k)) for k in range(1, 6)] + [fake_summary("b", 4.0)]
    ranks = [RankObservation(f"a{k}", 1, "train") for k in range(1, 6)] + [RankObservation("b", 0, "train")]
    groups = select_groups(summaries, ranks)
    assert groups.threshold == 3.0
    assert groups.below_a_high_skill == ["b"]

    ten = [fake_summary(f"g{k}", float(k)) for k in range(10)]
    with pytest.warns(RuntimeWarning):
        g10 = select_groups(ten, [])
    assert g10.top_decile == ["g9"] and g10.bottom_decile == ["g0"]


def test_select_groups_425():
    summaries = [fake_summary(f"g{k:03d}", float(k)) for k in range(425)]
    groups = select_groups(summaries, [RankObservation("g001", 1, "train")])
    assert len(groups.top_decile) == len(groups.bottom_decile) == 43
    assert not set(groups.top_decile) & set(groups.bottom_decile)
    assert len(select_groups(summaries, [RankObservation("g001", 1, "train")], "floor").top_decile) == 42


def test_select_groups_tie_break_by_id():
    summaries = [fake_summary(g, 1.0) for g in ("c", "a", "b")] + [fake_summary(f"z{k}", 0.0) for k in range(7)]
    with pytest.warns(RuntimeWarning):
        assert select_groups(summaries, []).top_decile == ["a"]


def test_no_rank_a_warns():
    with pytest.warns(RuntimeWarning):
        g = select_groups([fake_summary("a", 1.0)], [RankObservation("a", 0, "train")])
    assert g.below_a_high_skill == []


@given(seed=st.integers(0, 2**32 - 1))
def test_select_groups_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    maps = rng.normal(size=n)
    ranks = [RankObservation(f"g{k}", int(rng.integers(0, 2)), "train") for k in range(n)]
    a = select_groups([fake_summary(f"g{k}", m) for k, m in enumerate(maps)], ranks)
    b = select_groups([fake_summary(f"g{k}", math.exp(3 * m) + 7) for k, m in enumerate(maps)], ranks)
    assert (a.top_decile, a.bottom_decile, a.below_a_high_skill) == (b.top_decile, b.bottom_decile,
                                                                     b.below_a_high_skill)


def test_boxplot_csv(tmp_path, rng):
    summaries = [summarize(rng.normal(k, 1, 200), f"g{k}", k) for k in range(3)]
    ranks = [RankObservation("g0", 1, "train"), RankObservation("g1", 0, "validation")]
    path = export_boxplot_csv(summaries, ranks, tmp_path / "box.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "gamer,rank_label,map,mean,sd,q05,q25,q50,q75,q95,n_modalities"
    rows = read_boxplot_csv(path)
    assert [r["gamer"] for r in rows] == ["g2", "g1", "g0"]
    assert [r["rank_label"] for r in rows] == ["", "below_A", "A"]
    by = {s.gamer: s for s in summaries}
    for r in rows:
        s = by[r["gamer"]]
        for key in ("map", "mean", "sd", "q05", "q25", "q50", "q75", "q95"):
            assert abs(r[key] - getattr(s, key)) < 1e-9
    empty = export_boxplot_csv([], [], tmp_path / "empty.csv")
    assert len(empty.read_text().splitlines()) == 1


def test_boxplot_unwritable_path_names_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        export_boxplot_csv([], [], tmp_path / "missing" / "box.csv")


def test_summary_json_round_trip(tmp_path, rng):
    summaries = [summarize(rng.normal(size=150), f"g{k}") for k in range(4)]
    write_summary_json(summaries, tmp_path / "s.json")
    assert read_summary_json(tmp_path / "s.json") == summaries
