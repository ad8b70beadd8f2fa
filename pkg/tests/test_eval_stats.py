import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu

from stereo_diarize.channel_ops import Method
from stereo_diarize.embedding import EmbeddingSet, EmbeddingVector
from stereo_diarize.errors import DegenerateError, EvalError, ExperimentError, SplitError, ZeroVarianceError
from stereo_diarize.eval_stats import (
    SplitPlan,
    error_rate,
    exact_p_value,
    mann_whitney_u,
    midranks,
    pca,
    pca_project,
    run_experiment,
    split_train_test,
    summarize,
    zscore,
)
from stereo_diarize.gmm import FitConfig, train_bank


def brute_force_p(a, b):
    """Two-sided permutation p over every relabelling of the pooled sample."""
    pooled = list(a) + list(b)
    n, m = len(a), len(b)

    def u_of(x, y):
        return sum((xi > yj) + 0.5 * (xi == yj) for xi in x for yj in y)

    centre = n * m / 2
    observed = abs(u_of(a, b) - centre)
    hits = total = 0
    for pos in itertools.combinations(range(n + m), n):
        chosen = set(pos)
        x = [pooled[i] for i in pos]
        y = [pooled[i] for i in range(n + m) if i not in chosen]
        total += 1
        hits += abs(u_of(x, y) - centre) >= observed - 1e-12
    return hits / total


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def test_split_counts():
    split = split_train_test({"a": 10, "b": 2, "c": 30}, SplitPlan(), 0)
    assert [len(x) for x in split["a"]] == [7, 3]
    assert [len(x) for x in split["b"]] == [1, 1]
    assert [len(x) for x in split["c"]] == [21, 9]


def test_split_uses_given_indices():
    split = split_train_test({"a": [11, 12, 13, 14]}, SplitPlan(), 3)
    train, test = split["a"]
    assert sorted(train + test) == [11, 12, 13, 14]


def test_split_deterministic_and_run_dependent():
    plan = SplitPlan(rng_seed=5)
    assert split_train_test({"a": 20}, plan, 1) == split_train_test({"a": 20}, plan, 1)
    assert split_train_test({"a": 20}, plan, 1) != split_train_test({"a": 20}, plan, 2)


def test_split_too_small():
    with pytest.raises(SplitError):
        split_train_test({"a": 1}, SplitPlan(), 0)


def test_kfold_mode_partitions():
    plan = SplitPlan(kfold=5, repeats=1)
    tests = [split_train_test({"a": 12}, plan, r)["a"][1] for r in range(5)]
    assert sorted(i for t in tests for i in t) == list(range(12))


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 100), st.integers(0, 1000), st.integers(0, 60),
       st.sampled_from([0.5, 0.7, 0.9]))
def test_split_partition_property(t, seed, run, fraction):
    train, test = split_train_test({"s": t}, SplitPlan(train_fraction=fraction, rng_seed=seed), run)["s"]
    assert set(train).isdisjoint(test)
    assert sorted(train + test) == list(range(t))
    assert len(test) >= 1 and len(train) >= 1
    expected = min(max(math.floor(round(fraction * 10) * t / 10), 1), t - 1)
    assert len(train) == expected


# ---------------------------------------------------------------------------
# error rate, z-scores
# ---------------------------------------------------------------------------

def test_error_rate_examples():
    assert error_rate("ABA", "ABA") == 0.0
    assert error_rate("AAAA", "ABAA") == 0.25
    with pytest.raises(EvalError):
        error_rate("AB", "A")
    with pytest.raises(EvalError):
        error_rate([], [])


def test_error_rate_recount():
    rng = np.random.default_rng(0)
    p = rng.choice(list("abc"), 1000).tolist()
    t = rng.choice(list("abc"), 1000).tolist()
    mismatches = 0
    for i in range(1000):
        if p[i] != t[i]:
            mismatches += 1
    assert error_rate(p, t) == mismatches / 1000


def test_zscore_examples():
    assert zscore([1, 2, 3]) == [-1.0, 0.0, 1.0]
    with pytest.raises(ZeroVarianceError):
        zscore([0.3] * 5)
    with pytest.raises(EvalError):
        zscore([1.0])


def test_zscore_moments():
    v = np.random.default_rng(1).exponential(size=200)
    z = np.array(zscore(v))
    assert abs(z.mean()) < 1e-12
    assert abs(z.std(ddof=1) - 1) < 1e-12
    np.testing.assert_allclose(z, (v - v.mean()) / v.std(ddof=1), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50), st.floats(0.01, 100), st.floats(-100, 100))
def test_zscore_affine_invariance(values, c, d):
    v = np.array(values)
    if np.ptp(v) < 1e-3:
        return
    np.testing.assert_allclose(zscore(c * v + d), zscore(v), atol=1e-9)


# ---------------------------------------------------------------------------
# Mann-Whitney
# ---------------------------------------------------------------------------

def test_mwu_complete_separation():
    s = mann_whitney_u([1, 2], [3, 4])
    assert s.u_statistic == 0 and s.exact
    assert s.p_value == pytest.approx(2 / 6, abs=1e-15)


def test_mwu_identical_samples():
    s = mann_whitney_u([1, 2, 3, 4], [1, 2, 3, 4])
    assert s.u_statistic == 8
    assert s.p_value == pytest.approx(1.0)


def test_mwu_degenerate():
    with pytest.raises(DegenerateError):
        mann_whitney_u([2, 2], [2, 2, 2])
    with pytest.raises(EvalError):
        mann_whitney_u([], [1])


def test_mwu_exact_vs_brute_force_6_6():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=6), rng.normal(size=6) + 0.8
    s = mann_whitney_u(a, b)
    assert s.exact
    assert s.p_value == pytest.approx(brute_force_p(a, b), abs=1e-12)


def test_mwu_with_ties_uses_midranks():
    assert midranks(np.array([3.0, 1.0, 3.0, 2.0])).tolist() == [3.5, 1.0, 3.5, 2.0]
    a, b = [1, 2, 2, 3, 5, 5, 7, 9, 9, 9], [2, 3, 4, 4, 6, 8, 8, 10, 11, 12]
    s = mann_whitney_u(a, b)
    ref = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert not s.exact
    assert s.u_statistic == ref.statistic
    assert s.p_value == pytest.approx(ref.pvalue, rel=1e-12)


def test_mwu_large_samples_match_scipy():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=40), rng.normal(size=35) + 0.4
    s = mann_whitney_u(a, b)
    ref = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic")
    assert s.p_value == pytest.approx(ref.pvalue, rel=1e-12)


def test_mwu_tiny_p_does_not_underflow():
    s = mann_whitney_u(np.arange(200.0), np.arange(200.0) + 1000)
    assert 0 < s.p_value < 1e-60


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=12), st.lists(st.integers(0, 6), min_size=1, max_size=12))
def test_mwu_u_symmetry(a, b):
    if len(set(a + b)) == 1:
        return
    assert mann_whitney_u(a, b).u_statistic + mann_whitney_u(b, a).u_statistic == len(a) * len(b)


def test_exact_p_symmetric_distribution():
    for n, m in [(3, 5), (4, 4), (2, 8)]:
        for u in range(n * m + 1):
            assert exact_p_value(u, n, m) == exact_p_value(n * m - u, n, m)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def test_pca_collinear():
    t = np.linspace(-3, 5, 20)
    coords = pca_project(np.column_stack([t, 2 * t + 1]))
    assert np.max(np.abs(coords[:, 1])) < 1e-10


def test_pca_rotation_preserves_distances():
    X = np.random.default_rng(4).normal(size=(15, 2))
    X -= X.mean(axis=0)
    Y = pca_project(X)
    d = lambda Z: np.linalg.norm(Z[:, None] - Z[None, :], axis=2)
    np.testing.assert_allclose(d(Y), d(X), atol=1e-10)


def test_pca_variance_against_eigh():
    X = np.random.default_rng(5).normal(size=(30, 10)) @ np.random.default_rng(6).normal(size=(10, 10))
    _, _, var = pca(X, 2)
    evals = np.linalg.eigh(np.cov(X.T))[0][::-1]
    np.testing.assert_allclose(var, evals[:2], rtol=1e-10)


def test_pca_sign_convention_and_row_order():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(25, 6)) * [5, 4, 3, 2, 1, 0.5]
    coords, comps, _ = pca(X, 2)
    for row in comps:
        assert row[np.argmax(np.abs(row))] > 0
    perm = rng.permutation(25)
    np.testing.assert_allclose(pca_project(X[perm]), coords[perm], atol=1e-10)


def test_pca_too_few():
    with pytest.raises(EvalError):
        pca_project(np.zeros((2, 5)))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def synthetic_corpus(separation, n_speakers=4, per_speaker=10, dim=3, seed=0, methods=tuple(Method)):
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_speakers, dim)) * separation
    corpus = {}
    for m in methods:
        s = EmbeddingSet(dim, m)
        for k in range(n_speakers):
            for i in range(per_speaker):
                s.append(EmbeddingVector(centres[k] + rng.normal(size=dim), f"spk{k}", i + 1, m))
        corpus[m] = s
    return corpus


def test_separable_corpus_has_zero_error():
    report = run_experiment(synthetic_corpus(1000.0), SplitPlan(repeats=5), FitConfig())
    assert all(v == 0.0 for v in report.per_method_mean_error.values())
    assert all(math.isnan(p) for p in report.pairwise_p.values())
    assert len(report.pairwise) == 6


def test_single_speaker_bank_predicts_that_speaker():
    corpus = synthetic_corpus(3.0, n_speakers=2, seed=1, methods=(Method.MONO,))
    rng_sets = corpus[Method.MONO].by_speaker()
    bank = train_bank({"spk0": [e.values for e in rng_sets["spk0"]]}, FitConfig())
    test = rng_sets["spk0"][:3] + rng_sets["spk1"][:5]
    preds = bank.predict(test)
    truth = [e.speaker_id for e in test]
    assert set(preds) == {"spk0"}
    assert error_rate(preds, truth) == 5 / 8


def test_experiment_matches_brute_force_scoring():
    corpus = synthetic_corpus(1.5, seed=2, methods=(Method.MONO, Method.SUMDIF))
    plan, fit = SplitPlan(repeats=3, rng_seed=9), FitConfig(rng_seed=1)
    report = run_experiment(corpus, plan, fit)
    from stereo_diarize.eval_stats import _derive_seed
    from test_gmm import oracle_log_density
    import dataclasses

    for result in report.run_results:
        groups = corpus[result.method].by_speaker()
        split = split_train_test({s: [e.index for e in v] for s, v in groups.items()}, plan, result.run_index)
        lookup = {s: {e.index: e for e in v} for s, v in groups.items()}
        cfg = dataclasses.replace(fit, rng_seed=_derive_seed(fit.rng_seed, result.run_index))
        bank = train_bank({s: [lookup[s][i] for i in split[s][0]] for s in split}, cfg)
        expected = []
        for s in sorted(split):
            for i in split[s][1]:
                x = lookup[s][i].values
                scores = [oracle_log_density(m, x) for m in bank]
                expected.append(bank.speaker_ids[int(np.argmax(scores))])
        assert list(result.predictions) == expected
        assert result.error_rate == error_rate(expected, result.truth)


def test_paired_splits_and_report_invariants():
    corpus = synthetic_corpus(1.0, seed=3)
    report = run_experiment(corpus, SplitPlan(repeats=6, rng_seed=2), FitConfig())
    by_run = {}
    for r in report.run_results:
        by_run.setdefault(r.run_index, set()).add(r.truth)
        assert 0 <= r.error_rate <= 1
        assert len(r.predictions) == len(r.truth) > 0
    assert all(len(t) == 1 for t in by_run.values())
    for m in report.methods:
        rates = report.error_rates(m)
        assert report.per_method_mean_error[m] == math.fsum(rates) / len(rates)
    pooled = [z for m in report.methods for z in report.zscores[m]]
    assert abs(np.mean(pooled)) < 1e-12
    again = run_experiment(corpus, SplitPlan(repeats=6, rng_seed=2), FitConfig())
    assert again.to_dict() == report.to_dict()


def test_roster_mismatch():
    corpus = synthetic_corpus(2.0, seed=4, methods=(Method.MONO, Method.SUM))
    corpus[Method.SUM].entries = [e for e in corpus[Method.SUM].entries if e.speaker_id != "spk2"]
    with pytest.raises(ExperimentError, match="spk2"):
        run_experiment(corpus, SplitPlan(repeats=1))


def test_nested_mapping_input():
    corpus = synthetic_corpus(5.0, seed=5, methods=(Method.HSTACK,))
    nested = {Method.HSTACK: corpus[Method.HSTACK].by_speaker()}
    a = run_experiment(nested, SplitPlan(repeats=2))
    b = run_experiment(corpus, SplitPlan(repeats=2))
    assert a.to_dict() == b.to_dict()


def test_summarize_pooled_zscores():
    from stereo_diarize.eval_stats import RunResult
    rates = {Method.MONO: [0.2, 0.3, 0.25], Method.SUM: [0.1, 0.0, 0.05]}
    results = [RunResult(m, i, ("a",), ("a",), r) for m in rates for i, r in enumerate(rates[m])]
    rep = summarize(list(rates), results)
    pooled = np.array(rates[Method.MONO] + rates[Method.SUM])
    z = (pooled - pooled.mean()) / pooled.std(ddof=1)
    np.testing.assert_allclose(rep.zscores[Method.MONO] + rep.zscores[Method.SUM], z, atol=1e-12)
    assert rep.pairwise[(Method.MONO, Method.SUM)].p_value == pytest.approx(0.1)
