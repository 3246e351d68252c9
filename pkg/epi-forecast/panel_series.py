"""Per-node daily case panels: z-scores, snapshots, splits and Stable/Alert targets."""

import datetime as dt
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from errors import (
    ConfigurationError,
    EmptyDataError,
    InvalidArgumentError,
    ShapeMismatchError,
)

log = logging.getLogger(__name__)

MODES = ("sliding", "segmented")
STABLE, ALERT = 0, 1
PER_INHABITANTS = 100_000
TREND_DAYS = 7


class PanelSeries:
    """N x T matrix of daily new cases, rows in node order."""

    def __init__(self, values, node_ids, start_day=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidArgumentError(f"panel values must be a non-empty N x T matrix, got {values.shape}")
        node_ids = tuple(str(n) for n in node_ids)
        if len(node_ids) != values.shape[0]:
            raise ShapeMismatchError(
                f"{len(node_ids)} node identifiers for a panel with {values.shape[0]} rows"
            )
        values.setflags(write=False)
        self.values = values
        self.node_ids = node_ids
        self.start_day = start_day if start_day is not None else dt.date(2020, 1, 1)

    @property
    def num_nodes(self):
        return self.values.shape[0]

    @property
    def num_days(self):
        return self.values.shape[1]

    def dates(self):
        return pd.date_range(self.start_day, periods=self.num_days, freq="D")

    def with_values(self, values):
        """Same nodes and calendar, new values (shape must match)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ShapeMismatchError(f"expected shape {self.values.shape}, got {values.shape}")
        return PanelSeries(values, self.node_ids, self.start_day)

    def reorder(self, node_ids):
        """Rows re-arranged to node_ids; every identifier must be present."""
        index = {node: i for i, node in enumerate(self.node_ids)}
        missing = [n for n in node_ids if str(n) not in index]
        if missing:
            raise ConfigurationError(f"panel has no series for {len(missing)} node(s): {missing[:5]}")
        rows = [index[str(n)] for n in node_ids]
        return PanelSeries(self.values[rows], node_ids, self.start_day)

    def truncate(self, last_day):
        """Keep days [0, last_day)."""
        if not 1 <= last_day <= self.num_days:
            raise InvalidArgumentError(f"last_day must lie in [1, {self.num_days}], got {last_day}")
        return PanelSeries(self.values[:, :last_day], self.node_ids, self.start_day)

    def to_frame(self):
        frame = pd.DataFrame(
            self.values,
            index=pd.Index(self.node_ids, name="node"),
            columns=[d.strftime("%Y-%m-%d") for d in self.dates()],
        )
        return frame

    def __repr__(self):
        return f"PanelSeries(N={self.num_nodes}, T={self.num_days}, start={self.start_day})"


class PopulationTable:
    """Population per location identifier."""

    def __init__(self, populations):
        self.populations = {str(k): float(v) for k, v in dict(populations).items()}
        bad = {k: v for k, v in self.populations.items() if not v > 0}
        if bad:
            raise InvalidArgumentError(f"populations must be positive: {list(bad.items())[:5]}")

    def __len__(self):
        return len(self.populations)

    def __contains__(self, node_id):
        return str(node_id) in self.populations

    def missing(self, node_ids):
        return [n for n in node_ids if str(n) not in self.populations]

    def for_nodes(self, node_ids):
        """Population vector aligned with node_ids."""
        missing = self.missing(node_ids)
        if missing:
            raise ConfigurationError(
                f"no population for {len(missing)} node(s): {missing[:5]}"
            )
        return np.array([self.populations[str(n)] for n in node_ids], dtype=np.float64)


@dataclass(frozen=True)
class StandardizationParams:
    mu: np.ndarray
    sigma: np.ndarray
    fit_range: tuple


@dataclass(frozen=True)
class Snapshot:
    """One supervised example anchored at day t.

    window covers days [t - l + 1, t]. target is the N x F slice of days
    [t + 1, t + F] for regression or the N labels of day t + F for
    classification.
    """

    window: np.ndarray
    target: np.ndarray
    anchor_day: int

    @property
    def window_size(self):
        return self.window.shape[1]


def fit_zscore(panel, fit_range=None):
    """Per-node mean and population std over the half-open day range [start, stop)."""
    start, stop = fit_range if fit_range is not None else (0, panel.num_days)
    if not (0 <= start < stop <= panel.num_days):
        raise InvalidArgumentError(f"fit range {(start, stop)} outside [0, {panel.num_days})")
    if stop - start < 2:
        raise InvalidArgumentError("z-score fitting needs at least 2 days")
    block = panel.values[:, start:stop]
    mu = block.mean(axis=1)
    sigma = block.std(axis=1)
    flat = sigma == 0
    if flat.any():
        log.debug("%d constant series, sigma set to 1", int(flat.sum()))
    sigma = np.where(flat, 1.0, sigma)
    return StandardizationParams(mu=mu, sigma=sigma, fit_range=(start, stop))


def _check_params(panel_rows, params):
    if len(params.mu) != panel_rows or len(params.sigma) != panel_rows:
        raise ShapeMismatchError(
            f"standardization fitted on {len(params.mu)} nodes, panel has {panel_rows}"
        )


def apply_zscore(panel, params):
    """Panel in standard units, (x - mu) / sigma per node."""
    _check_params(panel.num_nodes, params)
    return panel.with_values((panel.values - params.mu[:, None]) / params.sigma[:, None])


def invert_zscore(panel, params):
    """Back to case counts from standard units."""
    _check_params(panel.num_nodes, params)
    return panel.with_values(panel.values * params.sigma[:, None] + params.mu[:, None])


def destandardize(values, params):
    """Invert the z-score on any array whose node axis is -2 (..., N, F)."""
    values = np.asarray(values, dtype=np.float64)
    _check_params(values.shape[-2], params)
    return values * params.sigma[:, None] + params.mu[:, None]


def snapshot_anchors(num_days, window, horizon, mode="sliding"):
    """Anchor days t of every snapshot, in chronological order."""
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    if window < 1 or horizon < 1:
        raise InvalidArgumentError(f"window and horizon must be >= 1, got l={window}, F={horizon}")
    if num_days < window + horizon:
        raise EmptyDataError(
            f"{num_days} days cannot hold a window of {window} plus a horizon of {horizon}"
        )
    if mode == "sliding":
        return list(range(window - 1, num_days - horizon))
    span = window + horizon
    return [k * span + window - 1 for k in range(num_days // span)]


def make_snapshots(panel, window, horizon, mode="sliding", labels=None):
    """Cut the panel into snapshots; pass a label matrix for classification targets."""
    anchors = snapshot_anchors(panel.num_days, window, horizon, mode)
    values = panel.values
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != values.shape:
            raise ShapeMismatchError(f"labels {labels.shape} do not match panel {values.shape}")
    snapshots = []
    for t in anchors:
        if labels is None:
            target = values[:, t + 1:t + 1 + horizon]
        else:
            target = labels[:, t + horizon]
        snapshots.append(Snapshot(window=values[:, t - window + 1:t + 1], target=target, anchor_day=t))
    return snapshots


def _train_count(count, train_fraction):
    # round first so 0.8 * 10 does not ceil to 9
    return min(count, math.ceil(round(train_fraction * count, 9)))


def split_chronological(snapshots, train_fraction=0.8):
    """First ceil(fraction * count) snapshots train, the rest test, order kept."""
    if not 0 < train_fraction < 1:
        raise InvalidArgumentError(f"train fraction must lie in (0, 1), got {train_fraction}")
    snapshots = list(snapshots)
    if not snapshots:
        raise EmptyDataError("no snapshots to split")
    n_train = _train_count(len(snapshots), train_fraction)
    return snapshots[:n_train], snapshots[n_train:]


def split_days(num_days, train_fraction=0.8):
    """Day-level counterpart of the snapshot split: (train days, test days)."""
    if not 0 < train_fraction < 1:
        raise InvalidArgumentError(f"train fraction must lie in (0, 1), got {train_fraction}")
    train = int(round(num_days * train_fraction))
    return train, num_days - train


def training_days(train_snapshots, horizon):
    """Half-open day range touched by the training snapshots."""
    if not train_snapshots:
        raise EmptyDataError("no training snapshots")
    last = max(s.anchor_day for s in train_snapshots)
    return 0, last + horizon + 1


def moving_average(panel, width=TREND_DAYS):
    """Trailing mean over [t - width + 1, t]; the first days average what is available."""
    frame = pd.DataFrame(panel.values.T)
    smoothed = frame.rolling(window=width, min_periods=1).mean().to_numpy().T
    return panel.with_values(smoothed)


def _slope_weights(n):
    # applied to series shifted by their first value, so flat series give exactly 0
    x = np.arange(n, dtype=np.float64)
    centred = x - x.mean()
    denom = (centred ** 2).sum()
    if denom == 0:
        return np.zeros(n)
    return centred / denom


def trend_slope(series):
    """Ordinary least squares slope of series against days 0..n-1."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size < 1:
        raise InvalidArgumentError("trend slope needs a non-empty 1-d series")
    return float(_slope_weights(series.size) @ (series - series[0]))


def trailing_slopes(values, width=TREND_DAYS):
    """OLS slope of the trailing width days for every (node, day) of an N x T matrix."""
    values = np.asarray(values, dtype=np.float64)
    n_nodes, n_days = values.shape
    slopes = np.zeros_like(values)
    for t in range(min(width - 1, n_days)):
        slopes[:, t] = (values[:, :t + 1] - values[:, :1]) @ _slope_weights(t + 1)
    if n_days >= width:
        windows = np.lib.stride_tricks.sliding_window_view(values, width, axis=1)
        slopes[:, width - 1:] = (windows - windows[..., :1]) @ _slope_weights(width)
    return slopes


def alert_metric(panel, populations, width=TREND_DAYS):
    """Per-100k moving average times the trend of that same series."""
    pop = populations.for_nodes(panel.node_ids)
    per_100k = moving_average(panel, width).values / (pop[:, None] / PER_INHABITANTS)
    return per_100k * trailing_slopes(per_100k, width)


def classification_targets(panel, populations, threshold=10.0):
    """N x T labels, ALERT where the combined metric exceeds threshold."""
    if panel.num_days < TREND_DAYS:
        raise EmptyDataError(f"classification targets need at least {TREND_DAYS} days")
    metric = alert_metric(panel, populations)
    return np.where(metric > threshold, ALERT, STABLE).astype(np.int64)


def class_balance(labels):
    """Alert share overall and per node."""
    labels = np.asarray(labels)
    return {
        "alert_share": float(labels.mean()),
        "stable_share": float(1.0 - labels.mean()),
        "per_node": labels.mean(axis=1),
    }
