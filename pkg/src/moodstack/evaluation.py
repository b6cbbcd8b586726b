"""Ranking-based evaluation: average precision, macro averages, comparisons.

Average precision sums precision at every threshold where recall changes,
weighted by the recall step. Thresholds sit at distinct score values, so all
items tied at a score enter together and the metric does not depend on how
ties are ordered.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.stats

from .errors import DataError, UndefinedApError

_logger = logging.getLogger(__name__)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP = sum_n (R_n - R_{n-1}) P_n over distinct-score thresholds, R_0 = 0."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise DataError("scores and labels must be 1-d arrays of equal length")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    if labels.size and not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be binary")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedApError("no positive labels; average precision is undefined")
    order = np.argsort(-scores, kind="stable")
    cum_tp = np.cumsum(labels[order])
    # indices where each distinct-score group ends, in descending score order
    sorted_scores = scores[order]
    ends = np.append(np.flatnonzero(np.diff(sorted_scores) != 0), scores.size - 1)
    recall = cum_tp[ends] / n_pos
    precision = cum_tp[ends] / (ends + 1.0)
    recall_steps = np.diff(recall, prepend=0.0)
    return float(np.sum(recall_steps * precision))


@dataclass(frozen=True)
class RankedPredictions:
    """Score and binary label matrices, tracks by tags."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        if scores.ndim != 2 or scores.shape != labels.shape:
            raise DataError("scores and labels must be 2-d arrays of equal shape")
        if not np.all(np.isfinite(scores)):
            raise DataError("scores must be finite")
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise DataError("labels must be binary")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n_tags(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class ApReport:
    """Per-tag average precision; NaN marks tags with no positive labels."""

    tags: tuple[str, ...]
    per_tag_ap: np.ndarray
    positives: np.ndarray

    def __post_init__(self):
        if len(self.tags) != self.per_tag_ap.shape[0] or len(self.tags) != self.positives.shape[0]:
            raise DataError("tags, per_tag_ap and positives must align")

    @property
    def defined_mask(self) -> np.ndarray:
        return ~np.isnan(self.per_tag_ap)

    @property
    def n_defined(self) -> int:
        return int(self.defined_mask.sum())

    @property
    def macro_ap(self) -> float:
        return float(np.mean(self.per_tag_ap[self.defined_mask]))

    @property
    def undefined_tags(self) -> tuple[str, ...]:
        return tuple(t for t, d in zip(self.tags, self.defined_mask) if not d)

    def ap_for(self, tag: str) -> float:
        return float(self.per_tag_ap[self.tags.index(tag)])


def macro_ap(preds: RankedPredictions, tags: Sequence[str] | None = None) -> ApReport:
    """Per-tag AP plus their mean over the tags where AP is defined."""
    if tags is None:
        tags = [f"tag{j}" for j in range(preds.n_tags)]
    if len(tags) != preds.n_tags:
        raise DataError(f"{len(tags)} tag names for {preds.n_tags} columns")
    per_tag = np.empty(preds.n_tags)
    for j in range(preds.n_tags):
        try:
            per_tag[j] = average_precision(preds.scores[:, j], preds.labels[:, j])
        except UndefinedApError:
            per_tag[j] = np.nan
    if np.all(np.isnan(per_tag)):
        raise DataError("no tag has a positive label; macro AP is undefined")
    positives = preds.labels.sum(axis=0).astype(np.int64)
    return ApReport(tuple(tags), per_tag, positives)


@dataclass(frozen=True)
class TagwiseDelta:
    """Per-tag AP differences between two reports, sorted ascending."""

    tags: tuple[str, ...]
    deltas: np.ndarray
    favors_a: tuple[str, ...]
    favors_b: tuple[str, ...]

    def as_dict(self) -> dict[str, float]:
        return {t: float(d) for t, d in zip(self.tags, self.deltas)}


def tagwise_delta(report_a: ApReport, report_b: ApReport) -> TagwiseDelta:
    """delta = AP_a - AP_b per tag defined in both reports, sorted ascending."""
    if report_a.tags != report_b.tags:
        raise DataError("reports cover different tag vocabularies")
    both = report_a.defined_mask & report_b.defined_mask
    if not both.any():
        raise DataError("no tag is defined in both reports")
    tags = [t for t, d in zip(report_a.tags, both) if d]
    deltas = report_a.per_tag_ap[both] - report_b.per_tag_ap[both]
    order = np.argsort(deltas, kind="stable")
    tags = tuple(tags[i] for i in order)
    deltas = deltas[order]
    return TagwiseDelta(
        tags=tags,
        deltas=deltas,
        favors_a=tuple(t for t, d in zip(tags, deltas) if d > 0),
        favors_b=tuple(t for t, d in zip(tags, deltas) if d < 0),
    )


@dataclass(frozen=True)
class RegressionFit:
    """OLS fit of per-tag AP on log10 tag frequency, with a confidence band."""

    slope: float
    intercept: float
    n_points: int
    x_mean: float
    x_sum_squares: float
    residual_std: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)

    def band(self, x: np.ndarray, confidence: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        """Confidence band for the mean response at each x."""
        x = np.asarray(x, dtype=np.float64)
        t = scipy.stats.t.ppf(0.5 + confidence / 2, self.n_points - 2)
        half = (
            t
            * self.residual_std
            * np.sqrt(1.0 / self.n_points + (x - self.x_mean) ** 2 / self.x_sum_squares)
        )
        center = self.predict(x)
        return center - half, center + half


def ap_vs_frequency_regression(
    report: ApReport, tag_frequencies: np.ndarray
) -> RegressionFit:
    """Least squares of defined per-tag AP on log10 of training-set frequency.

    Tags with undefined AP or zero frequency are excluded; at least 3 points
    must remain and the frequencies must not all coincide.
    """
    freq = np.asarray(tag_frequencies, dtype=np.float64)
    if freq.shape[0] != len(report.tags):
        raise DataError("frequency vector does not match the report's tags")
    keep = report.defined_mask & (freq > 0)
    if keep.sum() < 3:
        raise DataError(f"need at least 3 usable tags, got {int(keep.sum())}")
    x = np.log10(freq[keep])
    y = report.per_tag_ap[keep]
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0.0:
        raise DataError("all tag frequencies are equal; regression is degenerate")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    residuals = y - (intercept + slope * x)
    n = int(keep.sum())
    residual_std = math.sqrt(float(np.sum(residuals**2)) / (n - 2)) if n > 2 else 0.0
    return RegressionFit(
        slope=slope,
        intercept=intercept,
        n_points=n,
        x_mean=float(x.mean()),
        x_sum_squares=sxx,
        residual_std=residual_std,
    )


def tagwise_correlation(reports: Sequence[ApReport]) -> np.ndarray:
    """Pearson correlation of per-tag AP vectors over tags defined everywhere.

    The diagonal is 1 by definition. An entry involving a constant AP vector
    is undefined; it is returned as NaN and reported via the module logger.
    """
    if len(reports) < 2:
        raise DataError("need at least 2 reports to correlate")
    tags = reports[0].tags
    for r in reports[1:]:
        if r.tags != tags:
            raise DataError("reports cover different tag vocabularies")
    common = np.logical_and.reduce([r.defined_mask for r in reports])
    if common.sum() < 2:
        raise DataError(f"only {int(common.sum())} tags defined in all reports")
    vectors = np.stack([r.per_tag_ap[common] for r in reports])
    centered = vectors - vectors.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered**2, axis=1))
    k = len(reports)
    out = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            if norms[i] == 0.0 or norms[j] == 0.0:
                out[i, j] = out[j, i] = np.nan
                _logger.warning(
                    "correlation (%d, %d) undefined: constant AP vector", i, j
                )
            else:
                out[i, j] = out[j, i] = float(
                    np.dot(centered[i], centered[j]) / (norms[i] * norms[j])
                )
    return out


# ---------------------------------------------------------------------------
# report files

REPORT_CSV = "report.csv"
REPORT_SUMMARY = "summary.json"


def save_report(report: ApReport, directory: str | os.PathLike) -> None:
    """Write ``report.csv`` (tag,ap,positives; blank ap = undefined) and a summary."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, REPORT_CSV), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tag", "ap", "positives"])
        for tag, ap, pos in zip(report.tags, report.per_tag_ap, report.positives):
            writer.writerow([tag, "" if np.isnan(ap) else repr(float(ap)), int(pos)])
    summary = {"macro_ap": report.macro_ap, "n_defined_tags": report.n_defined}
    with open(os.path.join(directory, REPORT_SUMMARY), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(directory: str | os.PathLike) -> ApReport:
    """Read a report directory written by :func:`save_report`."""
    path = os.path.join(directory, REPORT_CSV)
    if not os.path.exists(path):
        raise DataError(f"missing report file {path}")
    tags: list[str] = []
    aps: list[float] = []
    positives: list[int] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tag", "ap", "positives"]:
            raise DataError(f"unexpected report header {header!r}")
        for row in reader:
            if len(row) != 3:
                raise DataError(f"bad report row {row!r}")
            tags.append(row[0])
            aps.append(float("nan") if row[1] == "" else float(row[1]))
            positives.append(int(row[2]))
    report = ApReport(tuple(tags), np.array(aps), np.array(positives, dtype=np.int64))
    summary_path = os.path.join(directory, REPORT_SUMMARY)
    if os.path.exists(summary_path):
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        if abs(summary["macro_ap"] - report.macro_ap) > 1e-9:
            raise DataError("summary macro_ap disagrees with the per-tag rows")
    return report
