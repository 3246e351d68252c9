"""Experiment configuration, the train/evaluate pipeline, grid sweeps and result files."""

import hashlib
import json
import logging
import os
import platform
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor, as_completed
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
import sklearn
import torch

import datasets
import gc_models
import metrics
import panel_series
from errors import ConfigurationError, EmptyDataError, ForecastError, StageError
from gc_models import TrainConfig
from mobility_graph import CRITERIA, extract_backbone, propagation_matrix
from synthetic import SynthSpec, generate_synthetic

log = logging.getLogger(__name__)

GRID_LIMIT = 14
REGRESSION_METRICS = ("rmse",)
CLASSIFICATION_METRICS = ("f1", "precision", "recall")
SCENARIOS = {
    "reference": dict(mode="segmented", backbone=False, truncate=True),
    "segmented": dict(mode="segmented", backbone=False, truncate=False),
    "sliding": dict(mode="sliding", backbone=False, truncate=False),
    "sliding+backbone": dict(mode="sliding", backbone=True, truncate=False),
}


@dataclass
class DataPaths:
    edges: str = None
    panel: str = None
    population: str = None
    inflows: str = None
    inflow_start: str = None
    inflow_end: str = None
    directed: bool = True
    last_day: int = None

    def is_empty(self):
        return self.panel is None and self.edges is None and self.inflows is None


@dataclass
class BackboneConfig:
    enabled: bool = False
    alpha: float = 0.01
    min_keep: int = 5
    criterion: str = "smallest"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"backbone alpha must lie in (0, 1), got {self.alpha}")
        if self.min_keep < 0:
            raise ConfigurationError(f"backbone min_keep must be >= 0, got {self.min_keep}")
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"backbone criterion must be one of {CRITERIA}, got {self.criterion!r}")


@dataclass
class GridConfig:
    windows: tuple = (1, GRID_LIMIT)
    horizons: tuple = (1, GRID_LIMIT)
    workers: int = 1
    render: bool = False

    def __post_init__(self):
        self.windows = _as_range(self.windows, "windows")
        self.horizons = _as_range(self.horizons, "horizons")
        if self.workers < 1:
            raise ConfigurationError(f"grid workers must be >= 1, got {self.workers}")


@dataclass
class ExperimentConfig:
    model: str = "gcrn"
    task: str = "regression"
    window: int = 14
    horizon: int = 1
    mode: str = "sliding"
    train_fraction: float = 0.8
    alert_threshold: float = 10.0
    scenario: str = "custom"
    output_dir: str = "runs/experiment"
    data: DataPaths = field(default_factory=DataPaths)
    synthetic: SynthSpec = None
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        if self.model not in gc_models.MODELS:
            raise ConfigurationError(f"model must be one of {gc_models.MODELS}, got {self.model!r}")
        if self.task not in gc_models.TASKS:
            raise ConfigurationError(f"task must be one of {gc_models.TASKS}, got {self.task!r}")
        if self.mode not in panel_series.MODES:
            raise ConfigurationError(f"mode must be one of {panel_series.MODES}, got {self.mode!r}")
        if self.window < 1 or self.horizon < 1:
            raise ConfigurationError(f"window and horizon must be >= 1, got {self.window}, {self.horizon}")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError(f"train fraction must lie in (0, 1), got {self.train_fraction}")
        if self.train.task != self.task:
            self.train = replace(self.train, task=self.task)

    @property
    def seed(self):
        return self.train.seed

    @property
    def metric_names(self):
        return REGRESSION_METRICS if self.task == "regression" else CLASSIFICATION_METRICS

    def with_seed(self, seed):
        return replace(self, train=replace(self.train, seed=seed))

    def to_dict(self, relative_to=None):
        """Plain dict; data paths relative to relative_to when given."""
        out = asdict(self)
        if relative_to is not None:
            for key in ("edges", "panel", "population", "inflows"):
                value = out["data"][key]
                if value is not None:
                    out["data"][key] = os.path.relpath(value, relative_to)
        out.pop("output_dir")
        out["grid"]["windows"] = list(self.grid.windows)
        out["grid"]["horizons"] = list(self.grid.horizons)
        return out


def _as_range(value, name):
    if isinstance(value, str):
        lo, _, hi = value.partition("-")
        value = (int(lo), int(hi or lo))
    lo, hi = (int(v) for v in value)
    if not 1 <= lo <= hi:
        raise ConfigurationError(f"{name} range must satisfy 1 <= lo <= hi, got {lo}-{hi}")
    return lo, hi


def _section(cls, values, name):
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{name}]: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(raw, base_dir="."):
    """ExperimentConfig from the TOML table layout (or a manifest's config)."""
    raw = dict(raw)
    known = {"data", "synthetic", "experiment", "backbone", "train", "grid"}
    # manifests store the experiment keys at top level
    flat = {k: raw.pop(k) for k in list(raw) if k not in known}
    experiment = {**raw.pop("experiment", {}), **flat}
    try:
        data = _section(DataPaths, raw.get("data", {}), "data")
        for key in ("edges", "panel", "population", "inflows"):
            value = getattr(data, key)
            if value is not None and not os.path.isabs(value):
                setattr(data, key, os.path.normpath(os.path.join(base_dir, value)))
        synthetic = raw.get("synthetic")
        config = _section(
            ExperimentConfig,
            {
                **experiment,
                "data": data,
                "synthetic": _section(SynthSpec, synthetic, "synthetic") if synthetic else None,
                "backbone": _section(BackboneConfig, raw.get("backbone", {}), "backbone"),
                "train": _section(TrainConfig, {"task": experiment.get("task", "regression"), **raw.get("train", {})}, "train"),
                "grid": _section(GridConfig, raw.get("grid", {}), "grid"),
            },
            "experiment",
        )
    except TypeError as e:
        raise ConfigurationError(str(e)) from e
    if "output_dir" in experiment and not os.path.isabs(config.output_dir):
        config.output_dir = os.path.normpath(os.path.join(base_dir, config.output_dir))
    return config


def load_config(path):
    """Config from a TOML file or a run manifest (JSON)."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    if path.suffix == ".json":
        manifest = json.loads(path.read_text())
        config = config_from_dict(manifest["config"], base_dir=path.parent)
        config.output_dir = str(path.parent)
        return config
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: {e}") from e
    return config_from_dict(raw, base_dir=path.parent)


def validate(config, grid=False):
    """Paths exist, a data source is declared, grid ranges stay within 1..14."""
    if config.data.is_empty() and config.synthetic is None:
        raise ConfigurationError("declare [data] paths or a [synthetic] spec")
    if not config.data.is_empty():
        if config.data.panel is None:
            raise ConfigurationError("[data] needs a panel CSV")
        if config.data.edges is None and config.data.inflows is None:
            raise ConfigurationError("[data] needs an edge list or an inflow archive")
        for key in ("edges", "panel", "population", "inflows"):
            value = getattr(config.data, key)
            if value is not None and not os.path.exists(value):
                raise ConfigurationError(f"[data] {key} path {value} does not exist")
    if config.task == "classification" and config.data.population is None and config.synthetic is None:
        raise ConfigurationError("classification needs a population CSV")
    if grid:
        for name, (lo, hi) in (("windows", config.grid.windows), ("horizons", config.grid.horizons)):
            if hi > GRID_LIMIT:
                raise ConfigurationError(f"grid {name} must stay within 1..{GRID_LIMIT}, got {lo}-{hi}")
    return config


@dataclass
class Dataset:
    graph: object
    panel: object
    populations: object = None


def load_dataset(config):
    """Graph, panel and populations reconciled to one node order."""
    if config.data.is_empty():
        if config.synthetic is None:
            raise ConfigurationError("declare [data] paths or a [synthetic] spec")
        graph, panel, populations = generate_synthetic(config.synthetic)
        return Dataset(graph, panel, populations)
    paths = config.data
    panel = datasets.load_panel(paths.panel)
    if paths.edges is not None:
        graph = datasets.load_edge_list(paths.edges, directed=paths.directed)
    else:
        raw = datasets.load_inflow_archive(paths.inflows)
        graph = datasets.aggregate_inflows(
            raw, paths.inflow_start, paths.inflow_end, keep_nodes=panel.node_ids
        )
    populations = datasets.load_population(paths.population) if paths.population else None
    graph, panel, populations = datasets.reconcile(graph, panel, populations)
    return Dataset(graph, panel, populations)


@contextmanager
def stage(name):
    """Re-raise failures inside as a StageError naming the pipeline stage."""
    log.debug("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


@dataclass
class Evaluation:
    tables: dict
    baseline: object
    predictions: np.ndarray
    targets: np.ndarray
    anchors: list


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    evaluation: Evaluation
    history: list
    edges_used: int
    output_dir: Path = None

    def summary(self, metric):
        return self.evaluation.tables[metric].summary


def prepare_snapshots(panel, config, labels=None):
    """Raw and standardized train/test snapshots plus the z-score fitted on training days."""
    raw = panel_series.make_snapshots(panel, config.window, config.horizon, config.mode, labels)
    train_raw, test_raw = panel_series.split_chronological(raw, config.train_fraction)
    params = panel_series.fit_zscore(panel, panel_series.training_days(train_raw, config.horizon))
    scaled = panel_series.make_snapshots(
        panel_series.apply_zscore(panel, params), config.window, config.horizon, config.mode, labels
    )
    train, test = panel_series.split_chronological(scaled, config.train_fraction)
    if not test:
        raise EmptyDataError(f"only {len(raw)} snapshot(s), nothing left for testing")
    return train, test, test_raw, params


def evaluate(model, test, test_raw, P, params, config):
    """Per-timestamp scores of a trained model on the test snapshots."""
    anchors = [s.anchor_day for s in test]
    if config.task == "regression":
        predictions = gc_models.predict_batch(model, test, P, params, "regression")
        targets = np.stack([s.target for s in test_raw])
        tables = {"rmse": metrics.MetricsTable.from_scores(metrics.rmse_per_timestamp(predictions, targets))}
        baseline = metrics.MetricsTable.from_scores(
            metrics.rmse_per_timestamp(gc_models.persistence_forecast(test_raw, config.horizon), targets)
        )
    else:
        predictions = gc_models.predict_batch(model, test, P, task="classification")
        targets = np.stack([s.target for s in test_raw])
        per_ts = metrics.classification_per_timestamp(predictions, targets)
        tables = {name: metrics.MetricsTable.from_scores(per_ts[name]) for name in CLASSIFICATION_METRICS}
        baseline = None
    return Evaluation(tables, baseline, predictions, targets, anchors)


def _prepare_inputs(config, dataset):
    """Truncation, labels, optional backbone and propagation matrix."""
    with stage("preprocess"):
        panel = dataset.panel
        if config.data.last_day is not None:
            panel = panel.truncate(config.data.last_day)
        labels = None
        if config.task == "classification":
            if dataset.populations is None:
                raise ConfigurationError("classification needs populations")
            labels = panel_series.classification_targets(panel, dataset.populations, config.alert_threshold)
            balance = panel_series.class_balance(labels)
            log.info("alert share %.1f%%", 100 * balance["alert_share"])

    with stage("backbone"):
        graph = dataset.graph
        if config.backbone.enabled:
            b = config.backbone
            graph = extract_backbone(graph, b.alpha, b.min_keep, b.criterion)
        P = gc_models.to_torch_propagation(propagation_matrix(graph), config.train.dtype)
    return panel, labels, graph, P


def run_experiment(config, dataset=None, write=True):
    """preprocess -> (backbone) -> snapshots -> split -> train -> evaluate -> files."""
    with stage("load"):
        dataset = dataset or load_dataset(config)
    panel, labels, graph, P = _prepare_inputs(config, dataset)

    with stage("snapshots"):
        train, test, test_raw, params = prepare_snapshots(panel, config, labels)
        log.info("%d training / %d test snapshots (%s, l=%d, F=%d)",
                 len(train), len(test), config.mode, config.window, config.horizon)

    with stage("train"):
        model = gc_models.build_model(config.model, config.task, config.horizon, config.train)
        model, history = gc_models.train(model, train, P, config.train)

    with stage("evaluate"):
        evaluation = evaluate(model, test, test_raw, P, params, config)
        for name, table in evaluation.tables.items():
            log.info("%s %s mean %.6g", config.model, name, table.summary.mean)

    result = ExperimentResult(config, evaluation, history, graph.num_edges)
    if write:
        with stage("write"):
            result.output_dir = write_run(result, model, params, panel)
    return result


def library_versions():
    """Versions recorded in run manifests."""
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "torch": torch.__version__,
    }


def config_hash(config_dict):
    """sha256 of the canonical JSON form of a config dict."""
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_frame(frame, path, **kwargs):
    datasets.atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g", **kwargs))


def write_metrics(result, out, prefix="metrics"):
    """Summary CSV per metric plus the per-timestamp scores."""
    config = result.config
    for name, table in result.evaluation.tables.items():
        rows = [(config.model, config.scenario, table.summary)]
        if name == "rmse" and result.evaluation.baseline is not None:
            rows.append(("persistence", config.scenario, result.evaluation.baseline.summary))
        _write_frame(metrics.summary_frame(rows), out / f"{prefix}_{name}.csv")
    scores = pd.DataFrame({"anchor_day": result.evaluation.anchors})
    for name, table in result.evaluation.tables.items():
        scores[name] = table.scores
    _write_frame(scores, out / f"{prefix}_per_timestamp.csv")


def write_predictions(result, node_ids, path):
    """Long-format CSV of test predictions next to their targets."""
    ev = result.evaluation
    preds, targets = ev.predictions, ev.targets
    if preds.ndim == 2:
        preds, targets = preds[..., None], targets[..., None]
        steps = [result.config.horizon]
    else:
        steps = list(range(1, preds.shape[-1] + 1))
    b, n, f = preds.shape
    frame = pd.DataFrame(
        {
            "anchor_day": np.repeat(ev.anchors, n * f),
            "node": np.tile(np.repeat(np.asarray(node_ids, dtype=object), f), b),
            "step": np.tile(steps, b * n),
            "prediction": preds.ravel(),
            "target": targets.ravel(),
        }
    )
    _write_frame(frame, path)


def write_run(result, model, params, panel):
    """metrics, per-timestamp scores, predictions, loss history, checkpoint and manifest."""
    config = result.config
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    write_metrics(result, out)
    write_predictions(result, panel.node_ids, out / "predictions.csv")
    _write_frame(
        pd.DataFrame({"epoch": range(1, len(result.history) + 1), "loss": result.history}),
        out / "loss_history.csv",
    )
    datasets.atomic_write(
        out / "checkpoint.pt",
        lambda tmp: gc_models.save_checkpoint(
            model, tmp, config.train,
            extra={"mu": torch.from_numpy(params.mu), "sigma": torch.from_numpy(params.sigma)},
        ),
    )

    config_dict = config.to_dict(relative_to=out)
    manifest = {
        "config": config_dict,
        "config_hash": config_hash(config_dict),
        "seed": config.seed,
        "train_budget": {"epochs": config.train.epochs, "learning_rate": config.train.learning_rate,
                         "optimizer": config.train.optimizer, "hidden_size": config.train.hidden_size},
        "standardization_fit_days": list(params.fit_range),
        "edges_used": result.edges_used,
        "versions": library_versions(),
        "outputs": sorted(p.name for p in out.iterdir() if not p.name.startswith(".")),
    }
    datasets.atomic_write(out / "manifest.json", lambda tmp: Path(tmp).write_text(json.dumps(manifest, indent=2, sort_keys=True)))
    log.info("wrote run to %s", out)
    return out


def evaluate_run(run_dir):
    """Re-score a finished run from its manifest and checkpoint, without training."""
    run_dir = Path(run_dir)
    config = load_config(run_dir / "manifest.json")
    with stage("load"):
        dataset = load_dataset(config)
        model, _, extra = gc_models.load_checkpoint(run_dir / "checkpoint.pt")
    panel, labels, graph, P = _prepare_inputs(config, dataset)
    with stage("snapshots"):
        _, test, test_raw, params = prepare_snapshots(panel, config, labels)
        if not np.array_equal(params.mu, extra["mu"].numpy()) or not np.array_equal(params.sigma, extra["sigma"].numpy()):
            raise ConfigurationError("standardization differs from the checkpoint; data changed since training")
    with stage("evaluate"):
        evaluation = evaluate(model, test, test_raw, P, params, config)
    result = ExperimentResult(config, evaluation, [], graph.num_edges, run_dir)
    with stage("write"):
        write_metrics(result, run_dir / "evaluation")
    return result


def cell_seed(seed, window, horizon):
    """Independent, reproducible seed per grid cell."""
    digest = hashlib.sha256(f"{seed}:{window}:{horizon}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def cell_config(config, window, horizon):
    """Config of one grid cell, with its own derived seed."""
    return replace(config.with_seed(cell_seed(config.seed, window, horizon)), window=window, horizon=horizon)


_worker_dataset = None


def _init_worker(dataset):
    global _worker_dataset
    _worker_dataset = dataset
    torch.set_num_threads(1)


def _run_cell(config):
    """Cell record: metric means and summaries, or the failing stage."""
    record = {"model": config.model, "task": config.task, "window": config.window,
              "horizon": config.horizon, "seed": config.seed}
    try:
        result = run_experiment(config, dataset=_worker_dataset, write=False)
    except ForecastError as e:
        record.update(status="failed", stage=getattr(e, "stage", None), error=str(e))
        return record
    record.update(
        status="ok",
        summaries={name: result.summary(name).to_dict() for name in config.metric_names},
    )
    if result.evaluation.baseline is not None:
        record["baseline"] = result.evaluation.baseline.summary.to_dict()
    return record


def _cell_dir(out, config):
    return Path(out) / "cells" / f"{config.model}_{config.task}"


def _cell_path(out, config, window, horizon):
    return _cell_dir(out, config) / f"l{window:02d}_f{horizon:02d}.json"


def _write_cell(out, config, record):
    """Persist one finished cell, so a sweep stopped midway keeps its completed cells."""
    if record["status"] != "ok":
        log.warning("cell l=%d F=%d failed: %s", record["window"], record["horizon"], record["error"])
    path = _cell_path(out, config, record["window"], record["horizon"])
    datasets.atomic_write(path, lambda tmp: Path(tmp).write_text(json.dumps(record, indent=2, sort_keys=True)))


def grid_sweep(config, windows=None, horizons=None, workers=None, dataset=None, resume=True):
    """Train and score every (window, horizon) cell; returns the heatmap frames.

    Each cell is written to its own JSON file, so interrupted or partial
    sweeps merge into the same heatmaps.
    """
    validate(config, grid=True)
    lo_l, hi_l = _as_range(windows or config.grid.windows, "windows")
    lo_f, hi_f = _as_range(horizons or config.grid.horizons, "horizons")
    if hi_l > GRID_LIMIT or hi_f > GRID_LIMIT:
        raise ConfigurationError(f"grid ranges must stay within 1..{GRID_LIMIT}")
    workers = workers or config.grid.workers
    out = Path(config.output_dir)

    pending = []
    for window in range(lo_l, hi_l + 1):
        for horizon in range(lo_f, hi_f + 1):
            path = _cell_path(out, config, window, horizon)
            if resume and path.exists() and json.loads(path.read_text()).get("status") == "ok":
                continue
            pending.append(cell_config(config, window, horizon))
    log.info("grid %s/%s: %d cell(s) to run with %d worker(s)", config.model, config.task, len(pending), workers)

    if dataset is None and pending:
        dataset = load_dataset(config)
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(dataset,)) as pool:
            futures = [pool.submit(_run_cell, c) for c in pending]
            for future in as_completed(futures):
                _write_cell(out, config, future.result())
    else:
        global _worker_dataset
        _worker_dataset = dataset
        try:
            for cell in pending:
                _write_cell(out, config, _run_cell(cell))
        finally:
            _worker_dataset = None

    return write_heatmaps(config, out)


def read_cells(out, config):
    """Every cell record written so far for this model and task."""
    cells = []
    for path in sorted(_cell_dir(out, config).glob("l*_f*.json")):
        cells.append(json.loads(path.read_text()))
    return cells


def heatmap_frame(cells, metric, statistic="mean"):
    """Rows = window sizes, columns horizon_F, cells = the statistic (NaN when missing)."""
    windows = sorted({c["window"] for c in cells})
    horizons = sorted({c["horizon"] for c in cells})
    frame = pd.DataFrame(
        np.nan, index=pd.Index(windows, name="window"), columns=[f"horizon_{f}" for f in horizons]
    )
    for c in cells:
        if c.get("status") == "ok":
            frame.loc[c["window"], f"horizon_{c['horizon']}"] = c["summaries"][metric][statistic]
    return frame


def write_heatmaps(config, out):
    """Heatmap CSV per metric, optional PNG, and the grid summary table."""
    out = Path(out)
    cells = read_cells(out, config)
    frames = {}
    for metric in config.metric_names:
        frame = heatmap_frame(cells, metric)
        frames[metric] = frame
        path = out / f"heatmap_{config.model}_{config.task}_{metric}.csv"
        datasets.atomic_write(path, lambda tmp, f=frame: f.to_csv(tmp, float_format="%.17g"))
        if config.grid.render:
            import heatmap_render

            heatmap_render.render_heatmap(
                frame, out / f"heatmap_{config.model}_{config.task}_{metric}.png",
                title=f"{config.model.upper()} mean {metric}",
            )
    write_grid_summary(out, config.task)
    return frames


def write_grid_summary(out, task):
    """Summary statistics over populated cells for every model swept so far."""
    out = Path(out)
    names = REGRESSION_METRICS if task == "regression" else CLASSIFICATION_METRICS
    rows, means = [], {}
    for model in gc_models.MODELS:
        probe = ExperimentConfig(model=model, task=task)
        cells = [c for c in read_cells(out, probe) if c.get("status") == "ok"]
        for metric in names:
            values = [c["summaries"][metric]["mean"] for c in cells]
            if values:
                rows.append((model, metric, metrics.summarize(values)))
            for c in cells:
                means.setdefault((c["window"], c["horizon"], metric), {})[model] = c["summaries"][metric]["mean"]
    if rows:
        _write_frame(metrics.summary_frame(rows), out / f"grid_summary_{task}.csv")

    # cells swept by every model, side by side
    paired = [
        {"window": l, "horizon": f, "metric": metric, **by_model}
        for (l, f, metric), by_model in sorted(means.items())
        if len(by_model) == len(gc_models.MODELS)
    ]
    if paired:
        comparison = pd.DataFrame.from_records(paired, columns=["window", "horizon", "metric", *gc_models.MODELS])
        comparison["difference"] = comparison["gclstm"] - comparison["gcrn"]
        _write_frame(comparison, out / f"model_comparison_{task}.csv")
    return rows


def scenario_config(config, name, reference_days=None):
    """Config of a named preprocessing scenario."""
    preset = SCENARIOS[name]
    data = config.data
    if preset["truncate"]:
        if reference_days is None:
            raise ConfigurationError("the reference scenario needs reference_days")
        data = replace(data, last_day=reference_days)
    return replace(
        config,
        scenario=name,
        mode=preset["mode"],
        data=data,
        backbone=replace(config.backbone, enabled=preset["backbone"]),
        output_dir=str(Path(config.output_dir) / f"{config.model}_{name}"),
    )


def pipeline_table(config, scenarios=("segmented", "sliding", "sliding+backbone"), models=gc_models.MODELS,
                   reference_days=None, dataset=None, write=True):
    """Mean-RMSE summary of every preprocessing scenario for each model."""
    config = replace(config, task="regression")
    dataset = dataset or load_dataset(config)
    rows, results = [], {}
    for model in models:
        for name in scenarios:
            run = scenario_config(replace(config, model=model), name, reference_days)
            result = run_experiment(run, dataset=dataset, write=write)
            results[(model, name)] = result
            rows.append((model, name, result.summary("rmse")))
    table = metrics.summary_frame(rows)
    if write:
        _write_frame(table, Path(config.output_dir) / "pipeline_table.csv")
    return table, results


def preprocess(config):
    """Reconciled (and optionally backboned) graph, standardized panel, z-score and labels on disk."""
    out = Path(config.output_dir)
    with stage("load"):
        dataset = load_dataset(config)
    panel, labels, graph, _ = _prepare_inputs(config, dataset)
    if labels is None and dataset.populations is not None:
        with stage("preprocess"):
            labels = panel_series.classification_targets(panel, dataset.populations, config.alert_threshold)
    with stage("snapshots"):
        raw = panel_series.make_snapshots(panel, config.window, config.horizon, config.mode)
        train_raw, _ = panel_series.split_chronological(raw, config.train_fraction)
        params = panel_series.fit_zscore(panel, panel_series.training_days(train_raw, config.horizon))
    with stage("write"):
        datasets.write_edge_list(graph, out / "edges.csv")
        datasets.write_panel(panel_series.apply_zscore(panel, params), out / "panel_standardized.csv")
        _write_frame(
            pd.DataFrame({"node": panel.node_ids, "mu": params.mu, "sigma": params.sigma}),
            out / "zscore.csv",
        )
        balance = None
        if labels is not None:
            datasets.write_panel(panel.with_values(labels), out / "labels.csv")
            balance = panel_series.class_balance(labels)
    return {
        "nodes": panel.num_nodes,
        "days": panel.num_days,
        "edges": graph.num_edges,
        "fit_days": params.fit_range,
        "balance": balance,
    }
