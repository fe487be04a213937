"""
Tests for verification statistics
"""

import json
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from src.errors import MetricError, ProtocolError
from src.metrics import (RunSeries, compare_series, decidability, eer, evaluate_scores,
                         far_frr_curve, format_mean_std, paired_t_test, read_report,
                         run_statistics, summarize_runs, write_det_csv, write_report)
from src.verify import ScoreSet


def _eer(genuine, impostor):
    return eer(far_frr_curve(genuine, impostor))[0]


def _brute_force_eer(genuine, impostor):
    """Linear scan of every threshold, interpolating where FAR - FRR changes sign"""
    genuine, impostor = np.asarray(genuine), np.asarray(impostor)
    ts = np.unique(np.concatenate([genuine, impostor]))
    ts = np.concatenate([[ts[0] - 1], ts, [ts[-1] + 1]])
    far = np.array([(impostor <= t).mean() for t in ts])
    frr = np.array([(genuine > t).mean() for t in ts])
    for k in range(1, len(ts)):
        d0, d1 = far[k - 1] - frr[k - 1], far[k] - frr[k]
        if d1 == 0:
            return far[k]
        if d0 < 0 < d1:
            if far[k] != far[k - 1] and frr[k] != frr[k - 1]:
                j = k - 1 if abs(d0) <= abs(d1) else k
                return (far[j] + frr[j]) / 2
            s = -d0 / (d1 - d0)
            return far[k - 1] + s * (far[k] - far[k - 1])
    raise AssertionError("no crossing")


# ----------------------------------------------------------------------------
# Decidability
# ----------------------------------------------------------------------------

def test_decidability_example():
    assert decidability([0, 2], [3, 5]) == 3.0


def test_decidability_equal_distributions():
    assert decidability([1, 2, 4], [1, 2, 4]) == 0.0


def test_decidability_affine_invariance(rng):
    for _ in range(100):
        genuine, impostor = rng.normal(0, 1, 50), rng.normal(1.5, 2, 80)
        alpha, beta = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        assert decidability(alpha * genuine + beta, alpha * impostor + beta) == pytest.approx(
            decidability(genuine, impostor), abs=1e-9)


def test_decidability_errors():
    with pytest.raises(MetricError, match="zero spread"):
        decidability([1, 1], [2, 2])
    with pytest.raises(MetricError, match="at least 2"):
        decidability([1], [2, 3])


# ----------------------------------------------------------------------------
# FAR / FRR / EER
# ----------------------------------------------------------------------------

def test_curve_counting():
    curve = far_frr_curve([0.1, 0.3, 0.4], [0.2, 0.5, 0.6])
    k = int(np.flatnonzero(np.isclose(curve.thresholds, 0.4))[0])
    assert curve.far[k] == pytest.approx(1 / 3)
    assert curve.frr[k] == 0


def test_curve_is_monotone(rng):
    for _ in range(20):
        curve = far_frr_curve(rng.random(30), rng.random(40))
        assert (np.diff(curve.thresholds) > 0).all()
        assert (np.diff(curve.far) >= 0).all()
        assert (np.diff(curve.frr) <= 0).all()
        assert curve.far[0] == 0 and curve.frr[0] == 1
        assert curve.far[-1] == 1 and curve.frr[-1] == 0


def test_curve_all_equal_scores():
    curve = far_frr_curve([0.5, 0.5], [0.5])
    assert curve.far.tolist() == [0, 1, 1]
    assert curve.frr.tolist() == [1, 0, 0]


def test_curve_requires_scores():
    with pytest.raises(MetricError):
        far_frr_curve([], [0.3])


def test_eer_separated():
    rate, threshold = eer(far_frr_curve([0.1, 0.2], [0.8, 0.9]))
    assert rate == 0
    assert 0.2 <= threshold < 0.8


def test_eer_identical_lists(rng):
    scores = rng.random(25)
    assert _eer(scores, scores) == pytest.approx(0.5)


def test_eer_worked_example():
    genuine, impostor = [0.1, 0.3, 0.4], [0.2, 0.5, 0.6]
    rate, threshold = eer(far_frr_curve(genuine, impostor))
    assert rate == pytest.approx(1 / 3)
    assert threshold == pytest.approx(0.3)
    assert rate == pytest.approx(_brute_force_eer(genuine, impostor))


def test_eer_matches_brute_force(rng):
    for _ in range(50):
        genuine = np.round(rng.normal(0, 1, rng.integers(2, 30)), 1)
        impostor = np.round(rng.normal(1, 1, rng.integers(2, 30)), 1)
        assert _eer(genuine, impostor) == pytest.approx(_brute_force_eer(genuine, impostor), abs=1e-12)


def test_eer_bracketed_by_curve(rng):
    for _ in range(50):
        curve = far_frr_curve(rng.random(20), rng.random(20) + 0.3)
        rate, threshold = eer(curve)
        assert 0 <= rate <= 1
        k = np.searchsorted(curve.thresholds, threshold, side="right")
        lo, hi = max(k - 1, 0), min(k, len(curve) - 1)
        low = min(curve.far[lo], curve.frr[lo], curve.far[hi], curve.frr[hi])
        high = max(curve.far[lo], curve.frr[lo], curve.far[hi], curve.frr[hi])
        assert low - 1e-12 <= rate <= high + 1e-12


def test_eer_gaussian_oracle():
    rng = np.random.default_rng(2024)
    genuine = rng.normal(0, 1, 10_000)
    impostor = rng.normal(2, 1, 10_000)
    assert _eer(genuine, impostor) == pytest.approx(stats.norm.cdf(-1), abs=0.01)
    assert decidability(genuine, impostor) == pytest.approx(2.0, abs=0.05)


def test_eer_rank_invariance(rng):
    for _ in range(100):
        genuine, impostor = rng.normal(0, 1, 40), rng.normal(0.8, 1, 60)
        base = _eer(genuine, impostor)
        assert _eer(genuine ** 3, impostor ** 3) == pytest.approx(base, abs=1e-12)
        assert _eer(np.exp(genuine), np.exp(impostor)) == pytest.approx(base, abs=1e-12)


def test_eer_role_swap(rng):
    for _ in range(100):
        genuine, impostor = rng.random(rng.integers(2, 40)), rng.random(rng.integers(2, 40)) + 0.2
        assert _eer(impostor, genuine) == pytest.approx(1 - _eer(genuine, impostor), abs=1e-12)


# ----------------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------------

def test_evaluate_scores_report(tmp_path):
    report = evaluate_scores(ScoreSet.from_lists([0.1, 0.3, 0.4], [0.2, 0.5, 0.6], "euclidean"), scheme="nonorm-seg")
    assert report.eer == pytest.approx(1 / 3)
    assert report.genuine_mean == pytest.approx(0.8 / 3)
    assert report.impostor_std == pytest.approx(np.std([0.2, 0.5, 0.6]))

    write_report(report.to_dict(), tmp_path / "report.json")
    document = json.loads((tmp_path / "report.json").read_text())
    for key in ("eer", "eer_threshold", "decidability", "genuine_mean", "genuine_std",
                "impostor_mean", "impostor_std", "metric", "scheme", "curve"):
        assert key in document
    assert document["metric"] == "euclidean"
    assert document["curve"][0] == [pytest.approx(-0.9), 0.0, 1.0]
    assert read_report(tmp_path / "report.json")["series"]["eer"] == [pytest.approx(1 / 3)]

    write_det_csv(report.curve, tmp_path / "det.csv")
    lines = (tmp_path / "det.csv").read_text().splitlines()
    assert lines[0] == "threshold,far,frr"
    assert len(lines) == len(report.curve) + 1


def test_single_genuine_score_keeps_eer():
    report = evaluate_scores(ScoreSet.from_lists([0.1], [0.5, 0.7], "cosine"))
    assert report.eer == 0
    assert report.eer_threshold == pytest.approx(0.1)
    assert report.decidability is None
    document = report.to_dict()
    assert document["decidability"] is None
    assert document["decidability_defined"] is False
    assert document["series"]["decidability"] == [None]


def test_zero_spread_clusters_keep_eer():
    report = evaluate_scores(ScoreSet.from_lists([0.0] * 6, [math.sqrt(2)] * 9, "euclidean"))
    assert report.eer == 0
    assert not report.decidability_defined
    assert report.genuine_std == 0 and report.impostor_std == 0


def test_evaluate_needs_impostors():
    with pytest.raises(ProtocolError, match="no impostor pairs"):
        evaluate_scores(ScoreSet.from_lists([0.1], []))


def test_read_report_without_series(tmp_path):
    (tmp_path / "r.json").write_text(json.dumps({"eer": 0.1}))
    with pytest.raises(MetricError, match="run-series"):
        read_report(tmp_path / "r.json")


# ----------------------------------------------------------------------------
# Run statistics and t-tests
# ----------------------------------------------------------------------------

def test_run_statistics():
    s = run_statistics(RunSeries("eer", [5, 5, 5]))
    assert (s.mean, s.std) == (5, 0)
    s = run_statistics(RunSeries("eer", [0, 2]))
    assert s.mean == 1 and s.std == pytest.approx(math.sqrt(2))
    single = run_statistics(RunSeries("eer", [0.3]))
    assert single.std == 0 and not single.std_defined


def test_run_series_validation():
    with pytest.raises(MetricError, match="empty"):
        RunSeries("eer", [])
    with pytest.raises(MetricError):
        RunSeries("eer", [0.1, float("nan")])


def test_format_mean_std():
    assert format_mean_std(13.981, 0.547) == "13.98±0.55"
    assert format_mean_std(2.24801, 0.0482, 4) == "2.2480±0.0482"


def test_paired_t_test_example():
    result = paired_t_test(RunSeries("a", [1, 2, 3]), RunSeries("b", [0, 0, 0]))
    assert result.t == pytest.approx(2 * math.sqrt(3), abs=1e-3)
    assert result.df == 2
    assert result.p == pytest.approx(2 * stats.t.sf(2 * math.sqrt(3), 2), abs=1e-9)
    assert result.p == pytest.approx(0.0742, abs=1e-3)
    assert not result.significant


def test_paired_t_test_matches_scipy(rng):
    a, b = rng.normal(0, 1, 30), rng.normal(0.3, 1, 30)
    result = paired_t_test(RunSeries("a", a), RunSeries("b", b))
    reference = stats.ttest_rel(a, b)
    assert result.t == pytest.approx(reference.statistic)
    assert result.p == pytest.approx(reference.pvalue)


def test_paired_t_test_errors():
    with pytest.raises(MetricError, match="zero variance of differences"):
        paired_t_test(RunSeries("a", [1.0, 2.0, 4.0]), RunSeries("b", [0.5, 1.5, 3.5]))
    with pytest.raises(MetricError, match="length mismatch"):
        paired_t_test(RunSeries("a", [1, 2, 3]), RunSeries("b", [1, 2]))


def test_paired_t_test_null_rarely_significant():
    significant = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        values = rng.normal(0, 1, 60)
        significant += paired_t_test(RunSeries("a", values[0::2]), RunSeries("b", values[1::2])).significant
    assert significant / 200 <= 0.10


def _document(eers, ds):
    reports = []
    for e, d in zip(eers, ds):
        report = evaluate_scores(ScoreSet.from_lists([0.1, 0.2, 0.35], [0.3, 0.6, 0.9]), scheme="s")
        reports.append(replace(report, eer=e, decidability=d))
    return summarize_runs(reports, scheme="s", metric="cosine")


def test_summarize_runs():
    document = _document([0.10, 0.12, 0.14], [2.0, 2.1, 2.2])
    assert document["runs"] == 3
    assert document["summary"]["eer_percent"] == "12.00±2.00"
    assert document["summary"]["decidability"] == "2.1000±0.1000"


def test_compare_series_tables():
    a = _document([0.10, 0.12, 0.14, 0.13], [2.0, 2.1, 2.2, 2.1])
    b = _document([0.20, 0.21, 0.25, 0.22], [1.5, 1.4, 1.6, 1.2])
    c = _document([0.15, 0.16, 0.15, 0.19], [1.8, 1.9, 1.7, 1.6])
    summary, tests = compare_series(["a", "b", "c"], [a, b, c])
    assert len(summary) == 3
    assert len(tests[tests["series"] == "eer"]) == 3
    assert set(tests.columns) >= {"t", "df", "p", "significant"}


def test_compare_series_errors():
    a = _document([0.10, 0.12, 0.14], [2.0, 2.1, 2.2])
    with pytest.raises(MetricError, match="zero variance of differences"):
        compare_series(["a", "a2"], [a, a])
    with pytest.raises(MetricError, match="mismatched run counts"):
        compare_series(["a", "b"], [a, _document([0.1, 0.2], [1.0, 1.1])])


def test_summarize_runs_with_undefined_decidability():
    document = _document([0.0, 0.1, 0.2], [None, 2.0, 2.2])
    assert document["series"]["decidability"] == [None, 2.0, 2.2]
    assert document["statistics"]["decidability"]["runs"] == 2
    assert document["decidability"] == pytest.approx(2.1)
    assert document["summary"]["decidability"] == "2.1000±0.1414"

    document = _document([0.0, 0.0], [None, None])
    assert document["decidability"] is None
    assert document["statistics"]["decidability"] == {"mean": None, "std": None, "std_defined": False, "runs": 0}
    assert document["summary"]["decidability"] == "n/a"
    assert document["summary"]["eer_percent"] == "0.00±0.00"


def test_compare_series_skips_undefined_decidability(tmp_path):
    a = _document([0.10, 0.12, 0.14], [None, 2.1, 2.2])
    b = _document([0.20, 0.21, 0.25], [1.5, 1.4, 1.6])
    write_report(a, tmp_path / "a.json")
    summary, tests = compare_series(["a", "b"], [read_report(tmp_path / "a.json"), b])
    assert summary["decidability"].tolist()[0] == "n/a"
    assert tests["series"].tolist() == ["eer"]
