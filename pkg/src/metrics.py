"""
Verification statistics: decidability, FAR/FRR curve, EER, multi-run
summaries and paired t-tests

Scores are dissimilarities throughout: a pair is accepted when its score is
at most the decision threshold.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import betainc

from src.errors import MetricError, ProtocolError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
SERIES_KEYS = ("eer", "decidability")


def _scores(values, name):
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.isfinite(arr).all():
        raise MetricError(f"{name} scores must be finite")
    return arr


def decidability(genuine, impostor) -> float:
    """
    d' = |mu_E - mu_I| / sqrt((sigma_I^2 + sigma_E^2) / 2)

    Standard deviations are population (divide-by-N) values.
    """
    genuine = _scores(genuine, "genuine")
    impostor = _scores(impostor, "impostor")
    if genuine.size < 2 or impostor.size < 2:
        raise MetricError(
            f"decidability needs at least 2 scores per side, got {genuine.size} genuine and {impostor.size} impostor"
        )
    spread = math.sqrt((genuine.var() + impostor.var()) / 2.0)
    if spread == 0:
        raise MetricError("decidability undefined: both score distributions have zero spread")
    return abs(impostor.mean() - genuine.mean()) / spread


def format_decidability(value: Optional[float], decimals: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{decimals}f}"


@dataclass(frozen=True, eq=False)
class DetCurve:
    """FAR and FRR at strictly increasing thresholds"""

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def __len__(self):
        return int(self.thresholds.shape[0])

    def points(self) -> List[List[float]]:
        return [[float(t), float(a), float(r)] for t, a, r in zip(self.thresholds, self.far, self.frr)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "far": self.far, "frr": self.frr})


def far_frr_curve(genuine, impostor) -> DetCurve:
    """
    FAR/FRR at every distinct score plus one threshold below and one above

    FAR(t) is the fraction of impostor scores <= t, FRR(t) the fraction of
    genuine scores > t.
    """
    genuine = np.sort(_scores(genuine, "genuine"))
    impostor = np.sort(_scores(impostor, "impostor"))
    if genuine.size == 0 or impostor.size == 0:
        raise MetricError("FAR/FRR curve needs non-empty genuine and impostor score lists")

    distinct = np.unique(np.concatenate([genuine, impostor]))
    thresholds = np.concatenate([[distinct[0] - 1.0], distinct, [distinct[-1] + 1.0]])
    far = np.searchsorted(impostor, thresholds, side="right") / impostor.size
    frr = 1.0 - np.searchsorted(genuine, thresholds, side="right") / genuine.size
    return DetCurve(thresholds, far, frr)


def eer(curve: DetCurve) -> Tuple[float, float]:
    """
    Equal error rate and its threshold

    Walks to the first threshold where FAR - FRR turns non-negative. An exact
    FAR == FRR point is returned as is. When both rates jump between the two
    bracketing thresholds the midpoint (FAR + FRR) / 2 is taken at the one
    with the smaller |FAR - FRR| (the lower on ties). Otherwise both curves are
    interpolated linearly to their crossing.
    """
    far, frr, thr = curve.far, curve.frr, curve.thresholds
    diff = far - frr
    # rates are count ratios; snap rounding residue so ties compare equal
    diff[np.abs(diff) < 1e-12] = 0.0
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(far[k]), float(thr[k])
    if k == 0:
        # unreachable for curves from far_frr_curve
        return float((far[0] + frr[0]) / 2.0), float(thr[0])

    j = k - 1
    if far[k] != far[j] and frr[k] != frr[j]:
        best = j if abs(diff[j]) <= abs(diff[k]) else k
        return float((far[best] + frr[best]) / 2.0), float(thr[best])

    s = -diff[j] / (diff[k] - diff[j])
    rate = far[j] + s * (far[k] - far[j])
    threshold = thr[j] + s * (thr[k] - thr[j])
    return float(rate), float(threshold)


@dataclass(frozen=True, eq=False)
class VerificationReport:
    eer: float
    eer_threshold: float
    decidability: Optional[float]
    genuine_mean: float
    genuine_std: float
    impostor_mean: float
    impostor_std: float
    curve: DetCurve
    metric: str = ""
    scheme: str = ""
    n_genuine: int = 0
    n_impostor: int = 0

    @property
    def decidability_defined(self) -> bool:
        return self.decidability is not None

    def to_dict(self) -> Dict:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "decidability": self.decidability,
            "decidability_defined": self.decidability_defined,
            "genuine_mean": self.genuine_mean,
            "genuine_std": self.genuine_std,
            "impostor_mean": self.impostor_mean,
            "impostor_std": self.impostor_std,
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
            "metric": self.metric,
            "scheme": self.scheme,
            "runs": 1,
            "series": {"eer": [self.eer], "decidability": [self.decidability]},
            "curve": self.curve.points(),
        }


def evaluate_scores(score_set, scheme: str = "") -> VerificationReport:
    """
    EER, d' and score statistics for one ScoreSet

    d' is reported as None when it is undefined (fewer than 2 scores on a
    side, or no spread at all); EER and the curve are still computed.
    """
    genuine, impostor = score_set.genuine, score_set.impostor
    if impostor.size == 0:
        raise ProtocolError("no impostor pairs: evaluation needs at least 2 classes")
    if genuine.size == 0:
        raise ProtocolError("no genuine pairs: evaluation needs a class with at least 2 images")

    curve = far_frr_curve(genuine, impostor)
    rate, threshold = eer(curve)
    try:
        d_prime = decidability(genuine, impostor)
    except MetricError as e:
        logger.warning("d' not reported: %s", e)
        d_prime = None
    report = VerificationReport(
        eer=rate,
        eer_threshold=threshold,
        decidability=d_prime,
        genuine_mean=float(genuine.mean()),
        genuine_std=float(genuine.std()),
        impostor_mean=float(impostor.mean()),
        impostor_std=float(impostor.std()),
        curve=curve,
        metric=score_set.metric,
        scheme=scheme,
        n_genuine=int(genuine.size),
        n_impostor=int(impostor.size),
    )
    logger.info("EER %.4f at %.6g, d' %s (%d genuine / %d impostor)",
                report.eer, report.eer_threshold, format_decidability(report.decidability),
                genuine.size, impostor.size)
    return report


# ----------------------------------------------------------------------------
# Multi-run statistics
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSeries:
    name: str
    values: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise MetricError(f"run series '{self.name}' is empty")
        if not all(math.isfinite(v) for v in values):
            raise MetricError(f"run series '{self.name}' contains non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class RunStatistics:
    mean: float
    std: float
    n: int
    std_defined: bool = True


def run_statistics(series: RunSeries) -> RunStatistics:
    """Mean and sample (N-1) standard deviation; a single run reports std 0 with std_defined False"""
    values = np.asarray(series.values)
    if values.size == 1:
        return RunStatistics(float(values[0]), 0.0, 1, std_defined=False)
    return RunStatistics(float(values.mean()), float(values.std(ddof=1)), int(values.size))


def format_mean_std(mean: float, std: float, decimals: int = 2) -> str:
    """
    Examples
    --------
    >>> format_mean_std(13.9812, 0.5473)
    '13.98±0.55'
    """
    return f"{mean:.{decimals}f}±{std:.{decimals}f}"


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    significant: bool
    alpha: float = DEFAULT_ALPHA


def paired_t_test(a: RunSeries, b: RunSeries, alpha: float = DEFAULT_ALPHA) -> TTestResult:
    """
    Two-sided paired t-test on run-by-run differences a - b

    The p-value is the regularized incomplete beta I_x(df/2, 1/2) with
    x = df / (df + t^2).
    """
    if not 0 < alpha < 1:
        raise MetricError(f"alpha must lie in (0, 1), got {alpha}")
    if len(a) != len(b):
        raise MetricError(f"length mismatch: {len(a)} vs {len(b)} runs")
    if len(a) < 2:
        raise MetricError("paired t-test needs at least 2 runs")

    d = np.asarray(a.values) - np.asarray(b.values)
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd <= 8 * np.finfo(np.float64).eps * max(1.0, abs(mean)):
        raise MetricError("zero variance of differences")

    t = mean / (sd / math.sqrt(n))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(float(t), df, p, p < alpha, alpha)


# ----------------------------------------------------------------------------
# Report files
# ----------------------------------------------------------------------------

def _statistics_entry(stats: Optional[RunStatistics]) -> Dict:
    if stats is None:
        return {"mean": None, "std": None, "std_defined": False, "runs": 0}
    return {"mean": stats.mean, "std": stats.std, "std_defined": stats.std_defined, "runs": stats.n}


def _format_decidability_stats(stats: Optional[RunStatistics]) -> str:
    return "n/a" if stats is None else format_mean_std(stats.mean, stats.std, 4)


def summarize_runs(reports: Sequence[VerificationReport], scheme: str = "", metric: str = "") -> Dict:
    """
    Aggregate document for a multi-run experiment

    Runs whose d' is undefined stay in the series as null and are left out of
    the d' statistics; ``statistics.decidability.runs`` counts the rest.
    """
    if not reports:
        raise MetricError("no runs to summarize")
    series = {
        "eer": [r.eer for r in reports],
        "decidability": [r.decidability for r in reports],
    }
    eer_stats = run_statistics(RunSeries("eer", series["eer"]))
    defined = [d for d in series["decidability"] if d is not None]
    d_stats = run_statistics(RunSeries("decidability", defined)) if defined else None
    if len(defined) < len(reports):
        logger.warning("d' undefined in %d of %d run(s)", len(reports) - len(defined), len(reports))
    return {
        "scheme": scheme or reports[0].scheme,
        "metric": metric or reports[0].metric,
        "runs": len(reports),
        "eer": eer_stats.mean,
        "decidability": None if d_stats is None else d_stats.mean,
        "series": series,
        "statistics": {
            "eer": _statistics_entry(eer_stats),
            "decidability": _statistics_entry(d_stats),
        },
        "summary": {
            "eer_percent": format_mean_std(eer_stats.mean * 100.0, eer_stats.std * 100.0, 2),
            "decidability": _format_decidability_stats(d_stats),
        },
    }


def write_report(document: Dict, path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise MetricError(f"{path}: cannot write report ({e})") from e


def read_report(path) -> Dict:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise MetricError(f"{path}: cannot read report ({e})") from e
    series = document.get("series") if isinstance(document, dict) else None
    if not isinstance(series, dict) or any(key not in series for key in SERIES_KEYS):
        raise MetricError(f"{path}: report carries no run-series data")
    return document


def report_series(document: Dict) -> Dict[str, Optional[RunSeries]]:
    """Run series per key; a series holding an undefined (null) run maps to None"""
    series = {}
    for key in SERIES_KEYS:
        values = document["series"][key]
        series[key] = None if any(v is None for v in values) else RunSeries(key, values)
    if series["eer"] is None:
        raise MetricError("EER series contains undefined runs")
    return series


def write_det_csv(curve: DetCurve, path) -> None:
    """threshold, far, frr columns for external plotting"""
    try:
        curve.to_frame().to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    except OSError as e:
        raise MetricError(f"{path}: cannot write DET data ({e})") from e


def compare_series(labels: Sequence[str], documents: Sequence[Dict],
                   alpha: float = DEFAULT_ALPHA) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Summary table (one row per report) and pairwise t-test table

    Every pair of reports is tested on both the EER and decidability series.
    A decidability test is skipped when either report has a run without d'.
    """
    if len(documents) < 2:
        raise MetricError("comparison needs at least 2 reports")
    all_series = [report_series(doc) for doc in documents]
    run_counts = {len(s["eer"]) for s in all_series}
    if len(run_counts) != 1:
        raise MetricError(f"mismatched run counts: {sorted(run_counts)}")

    rows = []
    for label, doc, series in zip(labels, documents, all_series):
        e = run_statistics(series["eer"])
        d = run_statistics(series["decidability"]) if series["decidability"] is not None else None
        rows.append({
            "report": label,
            "scheme": doc.get("scheme", ""),
            "metric": doc.get("metric", ""),
            "runs": e.n,
            "eer_percent": format_mean_std(e.mean * 100.0, e.std * 100.0, 2),
            "decidability": _format_decidability_stats(d),
        })

    tests = []
    for i in range(len(documents)):
        for j in range(i + 1, len(documents)):
            for key in SERIES_KEYS:
                a, b = all_series[i][key], all_series[j][key]
                if a is None or b is None:
                    logger.warning("Skipping %s t-test of %s vs %s: undefined runs", key, labels[i], labels[j])
                    continue
                result = paired_t_test(a, b, alpha)
                tests.append({
                    "a": labels[i],
                    "b": labels[j],
                    "series": key,
                    "t": result.t,
                    "df": result.df,
                    "p": result.p,
                    "significant": result.significant,
                })
    return pd.DataFrame(rows), pd.DataFrame(tests)
