"""Per-timestamp RMSE, Alert-positive precision/recall/F1 and summary tables."""

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from sklearn.metrics import precision_recall_fscore_support

from errors import EmptyDataError, InvalidArgumentError, ShapeMismatchError

SUMMARY_COLUMNS = ["mean", "std", "min", "max", "q1", "median", "q3"]
TABLE_COLUMNS = ["model", "scenario"] + SUMMARY_COLUMNS


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    min: float
    max: float
    q1: float
    median: float
    q3: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MetricsTable:
    """Ordered per-timestamp scores plus their summary."""

    scores: tuple
    summary: Summary

    @classmethod
    def from_scores(cls, scores):
        scores = tuple(float(s) for s in scores)
        return cls(scores=scores, summary=summarize(scores))


def rmse_per_timestamp(predictions, targets):
    """sqrt(mean squared error) over nodes and horizon steps, one value per timestamp.

    Both arrays are (timestamps, N) or (timestamps, N, F) in natural units.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeMismatchError(f"predictions {predictions.shape} vs targets {targets.shape}")
    if predictions.ndim < 2:
        raise ShapeMismatchError("expected at least (timestamps, nodes)")
    squared = (predictions - targets) ** 2
    return np.sqrt(squared.reshape(squared.shape[0], -1).mean(axis=1))


def summarize(scores):
    """Mean, population std, extremes and type-7 quartiles."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise EmptyDataError("cannot summarize an empty score list")
    q1, median, q3 = np.quantile(scores, [0.25, 0.5, 0.75], method="linear")
    return Summary(
        mean=float(scores.mean()),
        std=float(scores.std()),
        min=float(scores.min()),
        max=float(scores.max()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
    )


def classification_scores(predicted, truth):
    """(precision, recall, f1) with Alert (1) positive; zero denominators give 0."""
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.shape != truth.shape:
        raise ShapeMismatchError(f"{predicted.size} predictions for {truth.size} labels")
    for name, labels in (("predicted", predicted), ("true", truth)):
        if not np.isin(labels, (0, 1)).all():
            raise InvalidArgumentError(f"{name} labels must be 0 (Stable) or 1 (Alert)")
    precision, recall, f1, _ = precision_recall_fscore_support(
        truth, predicted, labels=[1], average=None, zero_division=0
    )
    return float(precision[0]), float(recall[0]), float(f1[0])


def classification_per_timestamp(predicted, truth):
    """Precision, recall and F1 lists, one entry per timestamp (row)."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ShapeMismatchError(f"predictions {predicted.shape} vs labels {truth.shape}")
    rows = [classification_scores(p, t) for p, t in zip(predicted, truth)]
    if not rows:
        return {"precision": [], "recall": [], "f1": []}
    precision, recall, f1 = (list(col) for col in zip(*rows))
    return {"precision": precision, "recall": recall, "f1": f1}


def summary_frame(rows):
    """Table rows (model, scenario, Summary) as a frame with the CSV column layout."""
    records = [{"model": model, "scenario": scenario, **summary.to_dict()} for model, scenario, summary in rows]
    return pd.DataFrame.from_records(records, columns=TABLE_COLUMNS)
