"""CSV loaders and writers for mobility graphs, case panels, populations and inflow archives."""

import datetime as dt
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from errors import DataFormatError, EmptyDataError, InvalidArgumentError
from mobility_graph import MobilityGraph
from panel_series import PanelSeries, PopulationTable

log = logging.getLogger(__name__)

EDGE_COLUMNS = ["source", "target", "weight"]
POPULATION_COLUMNS = ["node", "population"]
MAX_INFLOW_NEIGHBOURS = 100


def _read_csv(path, **kwargs):
    # the default fast parser can be an ulp off on %.17g output
    kwargs.setdefault("float_precision", "round_trip")
    try:
        return pd.read_csv(path, **kwargs)
    except FileNotFoundError as e:
        raise DataFormatError(path, 0, "file not found") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataFormatError(path, 0, f"unreadable CSV: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise DataFormatError(path, 1, "file is empty") from e


def _require_columns(frame, columns, path):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataFormatError(path, 1, f"missing column(s) {missing}, header is {list(frame.columns)}")


def _numeric(frame, column, path):
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # +2: header line and 1-based numbering
        raise DataFormatError(path, row + 2, f"{column} {frame[column].iloc[row]!r} is not a number")
    return values.to_numpy(dtype=np.float64)


def atomic_write(path, writer):
    """Call writer(tmp_path) then move the result over path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def load_edge_list(path, directed=True):
    """Graph from a `source,target,weight` CSV; nodes indexed by first appearance."""
    frame = _read_csv(path, dtype={"source": str, "target": str})
    _require_columns(frame, EDGE_COLUMNS, path)
    for column in ("source", "target"):
        blank = frame[column].isna()
        if blank.any():
            raise DataFormatError(path, int(np.flatnonzero(blank.to_numpy())[0]) + 2, f"empty {column}")
    weights = _numeric(frame, "weight", path)

    negative = np.flatnonzero(weights < 0)
    if negative.size:
        raise DataFormatError(path, int(negative[0]) + 2, f"negative weight {weights[negative[0]]}")

    sources = frame["source"].str.strip().to_numpy()
    targets = frame["target"].str.strip().to_numpy()
    loops = np.flatnonzero(sources == targets)
    if loops.size:
        raise DataFormatError(path, int(loops[0]) + 2, f"self-loop on {sources[loops[0]]!r}")
    pairs = pd.Series(list(zip(sources, targets)))
    dup = pairs.duplicated()
    if not directed:
        dup |= pd.Series([tuple(sorted(p)) for p in pairs]).duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise DataFormatError(path, row + 2, f"duplicate edge {sources[row]} -> {targets[row]}")

    interleaved = np.empty(2 * len(sources), dtype=object)
    interleaved[0::2] = sources
    interleaved[1::2] = targets
    node_ids = list(pd.unique(interleaved))
    index = {node: i for i, node in enumerate(node_ids)}
    graph = MobilityGraph.from_arrays(
        node_ids,
        [index[s] for s in sources],
        [index[t] for t in targets],
        weights,
        directed=directed,
    )
    log.info("loaded %s from %s", graph, path)
    return graph


def write_edge_list(graph, path):
    """Write `source,target,weight` rows with full float precision."""
    frame = pd.DataFrame(
        {
            "source": [graph.node_ids[i] for i in graph.sources],
            "target": [graph.node_ids[i] for i in graph.targets],
            "weight": graph.weights,
        },
        columns=EDGE_COLUMNS,
    )
    atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g"))
    return path


def load_panel(path, node_ids=None):
    """Panel from a CSV with node identifiers first and one ISO-date column per day.

    With node_ids the rows are reordered to that order (every identifier
    must have a series).
    """
    header = _read_csv(path, nrows=0)
    frame = _read_csv(path, dtype={header.columns[0]: str}, index_col=0)
    if frame.shape[1] < 1:
        raise DataFormatError(path, 1, "no day columns")
    try:
        days = pd.to_datetime(list(frame.columns), format="%Y-%m-%d")
    except ValueError as e:
        raise DataFormatError(path, 1, f"day columns must be ISO dates: {e}") from e
    if len(days) > 1 and not (np.diff(days.values).astype("timedelta64[D]") == np.timedelta64(1, "D")).all():
        raise DataFormatError(path, 1, "day columns must be consecutive calendar days")

    frame.index = frame.index.astype(str).str.strip()
    dup = frame.index.duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup)[0])
        raise DataFormatError(path, row + 2, f"duplicate node {frame.index[row]!r}")
    # day columns parse as float64; a column holding any text stays object and is coerced
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = bad[0]
        raise DataFormatError(path, int(row) + 2, f"non-numeric cell in column {frame.columns[col]}")

    panel = PanelSeries(values, frame.index.tolist(), days[0].date())
    if node_ids is not None:
        panel = panel.reorder(node_ids)
    log.info("loaded %s from %s", panel, path)
    return panel


def write_panel(panel, path):
    """Write the panel in the layout load_panel reads back exactly."""
    frame = panel.to_frame()
    atomic_write(path, lambda tmp: frame.to_csv(tmp, float_format="%.17g"))
    return path


def load_population(path):
    """PopulationTable from a `node,population` CSV; counts must be positive."""
    frame = _read_csv(path, dtype={"node": str})
    _require_columns(frame, POPULATION_COLUMNS, path)
    counts = _numeric(frame, "population", path)
    nonpositive = np.flatnonzero(counts <= 0)
    if nonpositive.size:
        raise DataFormatError(path, int(nonpositive[0]) + 2, "population must be positive")
    nodes = frame["node"].astype(str).str.strip()
    dup = nodes.duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise DataFormatError(path, row + 2, f"duplicate node {nodes.iloc[row]!r}")
    return PopulationTable(dict(zip(nodes, counts)))


def write_population(populations, path):
    """Write `node,population` rows."""
    frame = pd.DataFrame(
        list(populations.populations.items()), columns=POPULATION_COLUMNS
    )
    atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g"))
    return path


def reconcile(graph, panel, populations=None):
    """Align graph, panel and populations on the panel's node universe.

    Nodes with a series but no edges stay (isolated), nodes with edges but no
    series are dropped with a warning. The node order follows the graph,
    with series-only nodes appended in panel order.
    """
    in_panel = set(panel.node_ids)
    dropped = [n for n in graph.node_ids if n not in in_panel]
    if dropped:
        log.warning("dropping %d graph node(s) without a case series, e.g. %s", len(dropped), dropped[:5])
    order = [n for n in graph.node_ids if n in in_panel]
    in_graph = set(order)
    isolated = [n for n in panel.node_ids if n not in in_graph]
    if isolated:
        log.info("%d node(s) have a series but no mobility edges", len(isolated))
    order += isolated

    graph = graph.with_nodes(order)
    panel = panel.reorder(order)
    if populations is not None:
        missing = populations.missing(order)
        if missing:
            log.warning("%d node(s) have no population, e.g. %s", len(missing), missing[:5])
    return graph, panel, populations


@dataclass(frozen=True)
class RawInflowSeries:
    """Daily inflow rates, rates[d, destination, origin], rows summing to at most 1."""

    days: tuple
    node_ids: tuple
    rates: np.ndarray

    def __post_init__(self):
        d, n, m = self.rates.shape
        if d != len(self.days) or n != m or n != len(self.node_ids):
            raise InvalidArgumentError(
                f"inflow rates {self.rates.shape} do not match {len(self.days)} days x {len(self.node_ids)} nodes"
            )
        if (self.rates < 0).any() or (self.rates > 1).any():
            raise InvalidArgumentError("inflow rates must lie in [0, 1]")
        if (self.rates.sum(axis=2) > 1 + 1e-9).any():
            raise InvalidArgumentError("inflow rates of a destination sum to more than 1")
        if ((self.rates > 0).sum(axis=2) > MAX_INFLOW_NEIGHBOURS).any():
            raise InvalidArgumentError(f"a destination has more than {MAX_INFLOW_NEIGHBOURS} origins")


def load_inflow_archive(directory):
    """Per-day matrices `YYYY-MM-DD.csv` (rows destinations, columns origins)."""
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise EmptyDataError(f"no inflow CSV files in {directory}")
    days, matrices, node_ids = [], [], None
    for file in files:
        try:
            day = dt.date.fromisoformat(file.stem)
        except ValueError:
            log.warning("skipping %s, file name is not an ISO date", file.name)
            continue
        frame = _read_csv(file, index_col=0)
        frame.index = frame.index.astype(str)
        frame.columns = frame.columns.astype(str)
        if node_ids is None:
            node_ids = tuple(frame.index)
        frame = frame.reindex(index=list(node_ids), columns=list(node_ids))
        if frame.isna().to_numpy().any():
            raise DataFormatError(file, 1, "matrix does not cover the node set of the archive")
        days.append(day)
        matrices.append(frame.to_numpy(dtype=np.float64))
    if not days:
        raise EmptyDataError(f"no ISO-dated inflow files in {directory}")
    return RawInflowSeries(days=tuple(days), node_ids=node_ids, rates=np.stack(matrices))


def _as_date(value):
    if value is None or isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


def aggregate_inflows(daily, start=None, end=None, keep_nodes=None):
    """Static graph of mean inflow rates over [start, end] (inclusive dates).

    Edges run origin -> destination; zero-mean edges and self flows are
    dropped. keep_nodes restricts the graph to the nodes with case series.
    """
    days = np.array(daily.days)
    lo = _as_date(start) or days[0]
    hi = _as_date(end) or days[-1]
    chosen = (days >= lo) & (days <= hi)
    if not chosen.any():
        raise EmptyDataError(f"no inflow data between {lo} and {hi}")
    mean = daily.rates[chosen].mean(axis=0)
    np.fill_diagonal(mean, 0.0)
    destination, origin = np.nonzero(mean)
    graph = MobilityGraph.from_arrays(
        daily.node_ids, origin, destination, mean[destination, origin]
    )
    if keep_nodes is not None:
        wanted = set(str(n) for n in keep_nodes)
        graph = graph.with_nodes([n for n in graph.node_ids if n in wanted])
    log.info("aggregated %d day(s) of inflows into %s", int(chosen.sum()), graph)
    return graph
