import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from statsmodels.stats.multitest import multipletests

from oracles import holm_by_hand
from trustdsem.baselines import AR, ARMA, SARIMA
from trustdsem.evalreport import (
    CURVES_HEADER,
    PM,
    STATS_HEADER,
    SUMMARY_HEADER,
    CompareConfig,
    MetricsSummary,
    accuracy,
    anova_one_way,
    compare_models,
    holm_adjust,
    pairwise_comparisons,
    per_step_proportions,
    precision_recall,
    rmse,
    student_t,
    summarize,
    to_binary,
    write_report,
)

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=15)


class TestMetrics:
    def test_accuracy_and_rmse(self):
        assert accuracy([1, 0, -1], [1, 0, 1]) == pytest.approx(2 / 3)
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))

    @pytest.mark.parametrize("fn", [accuracy, rmse])
    def test_bad_lengths(self, fn):
        with pytest.raises(ValueError):
            fn([1, 2], [1])
        with pytest.raises(ValueError):
            fn([], [])

    def test_precision_recall(self):
        assert tuple(precision_recall([1, 1, 0], [1, 0, 1])) == (0.5, 0.5)
        pr = precision_recall([0, -1, 0], [1, 0, 1])
        assert pr.precision_undefined and pr.recall == 0.0
        pr = precision_recall([1, 0], [0, 0])
        assert pr.precision == 0.0 and pr.recall_undefined
        assert tuple(precision_recall([-1, -1, 1], [-1, 0, -1], positive_class=-1)) == (0.5, 0.5)

    def test_binary_collapse(self):
        assert to_binary([1, 0, -1, 1]).tolist() == [1, 0, 0, 1]

    def test_summary_statistics(self):
        s = summarize("m", ["a", "b"], [[0.9, 0.1], [0.0, 0.0]], [[1, 0], [0, 0]], [[1, 0], [1, -1]],
                      [[1, 0], [1, -1]])
        assert s.accuracies == (1.0, 0.0)
        assert s.acc_mean == 0.5 and s.acc_sd == pytest.approx(np.std([1, 0], ddof=1))
        assert s.precision == 1.0 and s.recall == 0.5
        assert MetricsSummary("x", ("a",), (0.4,), (0.2,)).acc_sd == 0.0

    def test_binary_summary(self):
        s = summarize("m", ["a"], [[0.0, 0.0]], [[-1, 0]], [[0.0, 0.0]], [[0, 0]], binary=True)
        assert s.accuracies == (1.0,)


class TestProportions:
    def test_example(self):
        rows = per_step_proportions([[1, -1], [1, 0]], [[0, 0], [1, 1]], steps=[15, 16])
        assert [(r.step, r.actual_prop, r.predicted_prop) for r in rows] == [(15, 1.0, 0.5), (16, -0.5, 0.5)]

    def test_ragged_refused(self):
        with pytest.raises(ValueError):
            per_step_proportions([[1, 0], [1]], [[1, 0], [1, 0]])
        with pytest.raises(ValueError):
            per_step_proportions([[1, 0]], [[1, 0, 1]])

    @given(st.lists(st.lists(st.integers(-1, 1), min_size=3, max_size=3), min_size=1, max_size=8))
    def test_bounded(self, table):
        for r in per_step_proportions(table, table):
            assert -1 <= r.actual_prop <= 1 and r.actual_prop == r.predicted_prop


class TestStatistics:
    @given(st.lists(samples, min_size=2, max_size=5))
    def test_anova_matches_scipy(self, groups):
        ours = anova_one_way(groups)
        F, p = stats.f_oneway(*groups)
        if ours.F == 0.0 or ours.infinite_f or not np.isfinite(F):
            return
        assert ours.F == pytest.approx(F, rel=1e-8)
        assert ours.p == pytest.approx(p, rel=1e-6, abs=1e-12)

    def test_anova_edge_cases(self):
        r = anova_one_way([[1.0, 2.0], [1.0, 2.0]])
        assert (r.F, r.p) == (0.0, 1.0)
        r = anova_one_way([[1.0, 1.0], [2.0, 2.0]])
        assert r.infinite_f and r.F == math.inf and r.p == 0.0
        assert (r.df_between, r.df_within) == (1, 2)
        with pytest.raises(ValueError):
            anova_one_way([[1.0, 2.0]])
        with pytest.raises(ValueError):
            anova_one_way([[1.0], [2.0, 3.0]])

    @given(st.lists(samples, min_size=2, max_size=4), st.floats(0.1, 10), st.floats(-10, 10))
    def test_anova_affine_invariance(self, groups, a, b):
        r1 = anova_one_way(groups)
        r2 = anova_one_way([[a * x + b for x in g] for g in groups])
        r3 = anova_one_way(groups[::-1])
        if r1.infinite_f or r1.F == 0 or r1.F < 1e-6:
            return
        assert r2.F == pytest.approx(r1.F, rel=1e-6)
        assert r3.F == pytest.approx(r1.F, rel=1e-12)

    @given(samples, samples)
    def test_t_matches_scipy(self, a, b):
        t, p = student_t(a, b)
        ref = stats.ttest_ind(a, b, equal_var=True)
        if not np.isfinite(ref.statistic) or t == 0.0:
            return
        assert t == pytest.approx(ref.statistic, rel=1e-8)
        assert p == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-12)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
    def test_holm_two_oracles(self, p):
        ours = holm_adjust(p)
        np.testing.assert_allclose(ours, multipletests(p, method="holm")[1], atol=1e-12)
        np.testing.assert_allclose(ours, holm_by_hand(p), atol=1e-12)

    def test_pairwise(self):
        rng = np.random.default_rng(0)
        groups = [rng.normal(0, 1, 20), rng.normal(0.1, 1, 20), rng.normal(2, 1, 20)]
        res = pairwise_comparisons(groups, ["a", "b", "c"])
        assert [r.pair for r in res] == [("a", "b"), ("a", "c"), ("b", "c")]
        np.testing.assert_allclose([r.adjusted_p for r in res], holm_by_hand([r.raw_p for r in res]))
        assert res[1].adjusted_p < 0.05 and res[0].adjusted_p > 0.05
        assert res[0].label == "a vs b"
        with pytest.raises(ValueError):
            pairwise_comparisons(groups, method="bonferroni")


@pytest.fixture(scope="module")
def report(small_drone, small_drone_fit):
    specs = [AR(1), ARMA(1, 1), SARIMA(1, 0, 1, 15), SARIMA(1, 0, 1, 40)]
    return compare_models(small_drone, small_drone_fit, specs, CompareConfig(eval_start=15))


class TestCompare:
    def test_default_start_is_longest_history(self, small_drone, small_drone_fit):
        rep = compare_models(small_drone.head(20), small_drone_fit, [AR(1), SARIMA(1, 0, 1, 4)])
        assert rep.eval_start == 4
        with pytest.raises(ValueError):
            compare_models(small_drone.head(20), small_drone_fit, [SARIMA(1, 0, 1, 40)])

    def test_arms(self, report):
        assert report.models == [PM, "AR(1)", "ARMA(1,1)", "SARIMA(1,0,1)[15]", "SARIMA(1,0,1)[40]"]
        assert report.eval_start == 15
        assert report.summary("SARIMA(1,0,1)[40]").failed
        assert any("SARIMA(1,0,1)[40]" in n for n in report.notes)

    def test_failed_arm_left_out_of_tests(self, report):
        assert report.anova.df_between == 3
        assert len(report.pairwise) == 6
        assert all("[40]" not in r.label for r in report.pairwise)

    def test_metrics_in_range(self, report):
        for s in report.summaries[:4]:
            assert len(s.accuracies) == 24
            assert all(0 <= a <= 1 for a in s.accuracies)
            assert all(e >= 0 for e in s.rmses)

    def test_curves_cover_model_range(self, report):
        assert [r.step for r in report.curves] == list(range(1, 30))

    def test_explicit_start(self, small_drone, small_drone_fit):
        rep = compare_models(small_drone, small_drone_fit, [AR(1)], CompareConfig(eval_start=20, binary=True))
        assert rep.eval_start == 20 and rep.binary
        assert all(len(s.accuracies) == 24 for s in rep.summaries)

    def test_written_files(self, report, tmp_path):
        paths = write_report(report, tmp_path)
        assert sorted(p.name for p in paths.values()) == sorted(
            ["summary.csv", "curves.csv", "stats.csv", "participants.csv", "summary.txt"])
        assert (tmp_path / "summary.csv").read_text().splitlines()[0] == ",".join(SUMMARY_HEADER)
        assert (tmp_path / "curves.csv").read_text().splitlines()[0] == ",".join(CURVES_HEADER)
        assert (tmp_path / "stats.csv").read_text().splitlines()[0] == ",".join(STATS_HEADER)
        rows = {r["model"]: r for r in csv.DictReader(open(tmp_path / "summary.csv"))}
        assert rows["SARIMA(1,0,1)[40]"]["acc_mean"] == "NA"
        assert float(rows[PM]["acc_mean"]) == pytest.approx(report.summary(PM).acc_mean)
        assert "ANOVA" in (tmp_path / "summary.txt").read_text()
