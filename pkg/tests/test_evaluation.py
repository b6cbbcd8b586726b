"""Average precision and the comparative analyses, against brute-force oracles."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moodstack.errors import DataError, UndefinedApError
from moodstack.evaluation import (
    ApReport,
    RankedPredictions,
    ap_vs_frequency_regression,
    average_precision,
    load_report,
    macro_ap,
    save_report,
    tagwise_correlation,
    tagwise_delta,
)


def ap_bruteforce(scores, labels):
    """Literal threshold sweep: one threshold per distinct score value."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = labels.sum()
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        mask = scores >= t
        tp = labels[mask].sum()
        precision = tp / mask.sum()
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


# scores on a coarse grid so ties occur often and monotone transforms
# cannot collapse distinct values through rounding
grid_scores = st.lists(
    st.integers(min_value=-64, max_value=64).map(lambda k: k / 64.0),
    min_size=1,
    max_size=12,
)


class TestAveragePrecision:
    def test_worked_example(self):
        ap = average_precision(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 1, 0]))
        assert ap == pytest.approx(5 / 6, abs=1e-12)

    def test_perfect_ranking(self):
        ap = average_precision(np.array([4.0, 3.0, 2.0, 1.0]), np.array([1, 1, 0, 0]))
        assert ap == 1.0

    def test_tied_scores_fixture(self):
        scores = np.array([0.9, 0.5, 0.5, 0.5, 0.2, 0.2])
        labels = np.array([1, 0, 1, 0, 1, 0])
        ap = average_precision(scores, labels)
        assert ap == pytest.approx(ap_bruteforce(scores, labels), abs=1e-12)
        # all three 0.5-items enter at one threshold, so their order is moot
        for perm in itertools.permutations([0, 1, 0]):
            relabeled = np.array([1, *perm, 1, 0])
            assert average_precision(scores, relabeled) == pytest.approx(ap, abs=1e-12)

    def test_no_positives_signaled(self):
        with pytest.raises(UndefinedApError):
            average_precision(np.array([1.0, 2.0]), np.array([0, 0]))

    def test_validation(self):
        with pytest.raises(DataError):
            average_precision(np.array([np.inf, 1.0]), np.array([1, 0]))
        with pytest.raises(DataError):
            average_precision(np.array([1.0, 2.0]), np.array([1, 2]))
        with pytest.raises(DataError):
            average_precision(np.array([[1.0]]), np.array([[1]]))

    @given(grid_scores, st.data())
    @settings(max_examples=300)
    def test_matches_bruteforce_on_small_instances(self, scores, data):
        labels = data.draw(
            st.lists(
                st.integers(0, 1), min_size=len(scores), max_size=len(scores)
            ).filter(lambda ls: any(ls))
        )
        fast = average_precision(np.array(scores), np.array(labels))
        slow = ap_bruteforce(scores, labels)
        assert fast == pytest.approx(slow, abs=1e-12)
        assert 0.0 <= fast <= 1.0

    @given(grid_scores, st.data())
    @settings(max_examples=200)
    def test_invariant_under_monotone_transforms(self, scores, data):
        labels = data.draw(
            st.lists(
                st.integers(0, 1), min_size=len(scores), max_size=len(scores)
            ).filter(lambda ls: any(ls))
        )
        s = np.array(scores)
        y = np.array(labels)
        base = average_precision(s, y)
        assert average_precision(2.0 * s + 1.0, y) == pytest.approx(base, abs=1e-12)
        assert average_precision(np.exp(s), y) == pytest.approx(base, abs=1e-12)

    def test_monte_carlo_mean_matches_exhaustive_expectation(self):
        # exact E[AP] for uniformly random placement of p positives among n
        n, p = 12, 3
        scores = np.arange(n, 0, -1, dtype=float)
        exact = np.mean(
            [
                average_precision(scores, np.isin(np.arange(n), pos).astype(int))
                for pos in itertools.combinations(range(n), p)
            ]
        )
        assert abs(exact - p / n) < 0.15  # random ranking sits near the base rate
        rng = np.random.default_rng(0)
        labels = np.zeros(n, dtype=int)
        labels[:p] = 1
        draws = []
        for _ in range(20000):
            draws.append(average_precision(scores, rng.permutation(labels)))
        draws = np.array(draws)
        sigma_mean = draws.std() / np.sqrt(draws.size)
        assert abs(draws.mean() - exact) <= 3 * sigma_mean


class TestMacroAp:
    def test_mean_of_defined(self):
        scores = np.array([[4.0, 1.0], [3.0, 2.0], [2.0, 3.0], [1.0, 4.0]])
        labels = np.array([[1, 0], [1, 0], [0, 1], [0, 0]])
        report = macro_ap(RankedPredictions(scores, labels), ["a", "b"])
        assert report.ap_for("a") == 1.0
        assert report.macro_ap == pytest.approx((1.0 + report.ap_for("b")) / 2)

    def test_two_tags_arithmetic_mean(self):
        scores = np.array([[2.0, 2.0], [1.0, 1.0]])
        labels = np.array([[1, 0], [0, 1]])
        report = macro_ap(RankedPredictions(scores, labels))
        assert report.per_tag_ap[0] == 1.0
        assert report.per_tag_ap[1] == 0.5
        assert report.macro_ap == 0.75

    def test_undefined_tag_excluded(self):
        scores = np.array([[1.0, 1.0], [2.0, 2.0]])
        labels = np.array([[1, 0], [0, 0]])
        report = macro_ap(RankedPredictions(scores, labels), ["a", "empty"])
        assert report.undefined_tags == ("empty",)
        assert report.n_defined == 1
        assert report.macro_ap == report.ap_for("a")

    def test_all_undefined_rejected(self):
        with pytest.raises(DataError):
            macro_ap(RankedPredictions(np.ones((2, 2)), np.zeros((2, 2))))

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_per_tag_oracle_loop(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=(20, 5))
        labels = (rng.random((20, 5)) < 0.3).astype(int)
        labels[0] = 1  # ensure every tag is defined
        report = macro_ap(RankedPredictions(scores, labels))
        expected = [ap_bruteforce(scores[:, j], labels[:, j]) for j in range(5)]
        np.testing.assert_allclose(report.per_tag_ap, expected, atol=1e-12)
        assert report.macro_ap == pytest.approx(np.mean(expected))
        np.testing.assert_array_equal(report.positives, labels.sum(axis=0))

    def test_invariant_under_tag_permutation(self):
        rng = np.random.default_rng(7)
        scores = rng.normal(size=(15, 4))
        labels = (rng.random((15, 4)) < 0.4).astype(int)
        labels[0] = 1
        perm = [2, 0, 3, 1]
        a = macro_ap(RankedPredictions(scores, labels))
        b = macro_ap(RankedPredictions(scores[:, perm], labels[:, perm]))
        assert a.macro_ap == pytest.approx(b.macro_ap, abs=1e-12)


def report_from(aps, tags=None, positives=None):
    aps = np.asarray(aps, dtype=float)
    tags = tuple(tags or (f"t{i}" for i in range(aps.size)))
    if positives is None:
        positives = np.where(np.isnan(aps), 0, 10).astype(np.int64)
    return ApReport(tags, aps, np.asarray(positives, dtype=np.int64))


class TestTagwiseDelta:
    def test_identical_reports_all_zero(self):
        r = report_from([0.3, 0.5, 0.9])
        d = tagwise_delta(r, r)
        np.testing.assert_array_equal(d.deltas, 0.0)
        assert d.favors_a == () and d.favors_b == ()

    def test_antisymmetry(self):
        rng = np.random.default_rng(1)
        a = report_from(rng.random(6))
        b = report_from(rng.random(6))
        ab = tagwise_delta(a, b).as_dict()
        ba = tagwise_delta(b, a).as_dict()
        assert set(ab) == set(ba)
        for tag in ab:
            assert ab[tag] == pytest.approx(-ba[tag], abs=1e-15)

    def test_sorted_and_sides(self):
        a = report_from([0.9, 0.2, 0.5])
        b = report_from([0.4, 0.6, 0.5])
        d = tagwise_delta(a, b)
        assert list(d.deltas) == sorted(d.deltas)
        assert d.favors_a == ("t0",)
        assert d.favors_b == ("t1",)

    def test_undefined_tags_skipped(self):
        a = report_from([0.9, np.nan])
        b = report_from([0.4, 0.5])
        d = tagwise_delta(a, b)
        assert d.tags == ("t0",)

    def test_vocabulary_mismatch(self):
        with pytest.raises(DataError):
            tagwise_delta(report_from([0.5], ["x"]), report_from([0.5], ["y"]))


class TestRegression:
    def test_exact_line_zero_width_band(self):
        freq = np.array([10.0, 100.0, 1000.0, 10000.0])
        aps = 0.1 * np.log10(freq) + 0.2
        fit = ap_vs_frequency_regression(report_from(aps), freq)
        assert fit.slope == pytest.approx(0.1, abs=1e-12)
        assert fit.intercept == pytest.approx(0.2, abs=1e-12)
        lo, hi = fit.band(np.log10(freq))
        np.testing.assert_allclose(lo, hi, atol=1e-12)
        np.testing.assert_allclose(lo, aps, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_normal_equation_oracle(self, seed):
        rng = np.random.default_rng(seed)
        freq = rng.integers(5, 20000, size=10).astype(float)
        aps = rng.random(10)
        fit = ap_vs_frequency_regression(report_from(aps), freq)
        # independent oracle: solve the 2x2 normal equations directly
        design = np.column_stack([np.ones(10), np.log10(freq)])
        beta = np.linalg.solve(design.T @ design, design.T @ aps)
        assert fit.intercept == pytest.approx(beta[0], rel=1e-9)
        assert fit.slope == pytest.approx(beta[1], rel=1e-9)

    def test_band_widens_away_from_center(self):
        rng = np.random.default_rng(2)
        freq = rng.integers(10, 10000, size=12).astype(float)
        aps = rng.random(12)
        fit = ap_vs_frequency_regression(report_from(aps), freq)
        near, far = fit.x_mean, fit.x_mean + 3.0
        lo_n, hi_n = fit.band(np.array([near]))
        lo_f, hi_f = fit.band(np.array([far]))
        assert (hi_f - lo_f)[0] > (hi_n - lo_n)[0]

    def test_degenerate_frequencies(self):
        with pytest.raises(DataError, match="equal"):
            ap_vs_frequency_regression(
                report_from([0.1, 0.2, 0.3]), np.array([50.0, 50.0, 50.0])
            )

    def test_too_few_points(self):
        with pytest.raises(DataError):
            ap_vs_frequency_regression(
                report_from([0.1, np.nan, 0.3]), np.array([10.0, 20.0, 30.0])
            )

    def test_zero_frequency_excluded(self):
        freq = np.array([0.0, 10.0, 100.0, 1000.0])
        fit = ap_vs_frequency_regression(report_from([0.9, 0.1, 0.2, 0.3]), freq)
        assert fit.n_points == 3


class TestCorrelation:
    def test_self_correlation(self):
        r = report_from([0.1, 0.5, 0.9, 0.4])
        m = tagwise_correlation([r, r])
        np.testing.assert_allclose(m, np.ones((2, 2)), atol=1e-12)

    def test_exact_anticorrelation(self):
        aps = np.array([0.1, 0.5, 0.9, 0.4])
        m = tagwise_correlation([report_from(aps), report_from(1 - aps)])
        assert m[0, 1] == pytest.approx(-1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_covariance_oracle(self, seed):
        rng = np.random.default_rng(seed)
        reports = [report_from(rng.random(8)) for _ in range(3)]
        m = tagwise_correlation(reports)
        for i in range(3):
            for j in range(3):
                a = reports[i].per_tag_ap
                b = reports[j].per_tag_ap
                cov = np.mean((a - a.mean()) * (b - b.mean()))
                expected = cov / (a.std() * b.std())
                assert m[i, j] == pytest.approx(expected, rel=1e-9)

    def test_symmetric_psd(self):
        rng = np.random.default_rng(9)
        reports = [report_from(rng.random(12)) for _ in range(5)]
        m = tagwise_correlation(reports)
        np.testing.assert_array_equal(m, m.T)
        assert np.linalg.eigvalsh(m).min() >= -1e-8

    def test_constant_vector_flagged(self, caplog):
        import logging

        a = report_from([0.5, 0.5, 0.5])
        b = report_from([0.1, 0.2, 0.3])
        with caplog.at_level(logging.WARNING, logger="moodstack.evaluation"):
            m = tagwise_correlation([a, b])
        assert np.isnan(m[0, 1]) and np.isnan(m[1, 0])
        assert m[0, 0] == 1.0
        assert any("constant" in r.message for r in caplog.records)

    def test_common_tag_restriction(self):
        a = report_from([0.1, np.nan, 0.9, 0.3])
        b = report_from([0.2, 0.5, np.nan, 0.7])
        with pytest.raises(DataError):
            # only 2 common defined tags is fine; force fewer
            tagwise_correlation([a, report_from([np.nan, np.nan, np.nan, 0.7])])
        m = tagwise_correlation([a, b])
        assert m.shape == (2, 2)


class TestReportFiles:
    def test_round_trip(self, tmp_path):
        report = report_from([0.25, np.nan, 0.75], positives=[4, 0, 8])
        save_report(report, tmp_path)
        back = load_report(tmp_path)
        assert back.tags == report.tags
        np.testing.assert_array_equal(back.positives, report.positives)
        assert np.isnan(back.per_tag_ap[1])
        np.testing.assert_allclose(
            back.per_tag_ap[[0, 2]], report.per_tag_ap[[0, 2]], atol=0
        )
        assert back.macro_ap == report.macro_ap

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_report(tmp_path)

    def test_summary_consistency_checked(self, tmp_path):
        save_report(report_from([0.5, 0.7]), tmp_path)
        summary = tmp_path / "summary.json"
        summary.write_text('{"macro_ap": 0.99, "n_defined_tags": 2}')
        with pytest.raises(DataError, match="disagrees"):
            load_report(tmp_path)
