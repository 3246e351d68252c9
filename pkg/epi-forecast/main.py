import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import datasets
import experiments
from errors import ForecastError, StageError
from mobility_graph import CRITERIA, extract_backbone
from panel_series import MODES
from synthetic import GRAPH_STYLES, SERIES_STYLES, SynthSpec, generate_synthetic

log = logging.getLogger(__name__)


class ForecastApp:
    """Command-line front end for backbones, training runs and grid sweeps."""

    def __init__(self, args):
        self.args = args

    def run(self):
        """Dispatch to the cmd_ method of the chosen subcommand."""
        handler = getattr(self, "cmd_" + self.args.command.replace("-", "_"))
        return handler()

    def config(self):
        """Config file (if any) with the command-line flags applied on top."""
        a = self.args
        config = experiments.load_config(a.config) if a.config else experiments.ExperimentConfig()

        data = config.data
        for key in ("edges", "panel", "population", "inflows", "last_day"):
            value = getattr(a, key, None)
            if value is not None:
                data = replace(data, **{key: value})
        if getattr(a, "undirected", False):
            data = replace(data, directed=False)

        synthetic = config.synthetic
        if getattr(a, "synthetic", None):
            synthetic = SynthSpec(series_style=a.synthetic, seed=a.seed if a.seed is not None else 0)
        if data.is_empty() and synthetic is None:
            synthetic = SynthSpec()

        backbone = config.backbone
        if getattr(a, "backbone", None) is not None:
            backbone = replace(backbone, enabled=a.backbone)
        for key in ("alpha", "min_keep", "criterion"):
            value = getattr(a, key, None)
            if value is not None:
                backbone = replace(backbone, **{key: value})

        train = config.train
        for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("seed", "seed"), ("hidden", "hidden_size")):
            value = getattr(a, flag, None)
            if value is not None:
                train = replace(train, **{key: value})

        grid = config.grid
        for key in ("windows", "horizons", "workers"):
            value = getattr(a, key, None)
            if value is not None:
                grid = replace(grid, **{key: value})
        if getattr(a, "render", False):
            grid = replace(grid, render=True)

        overrides = {
            key: getattr(a, key)
            for key in ("model", "task", "window", "horizon", "mode", "scenario")
            if getattr(a, key, None) is not None
        }
        if a.out is not None:
            overrides["output_dir"] = a.out
        config = replace(
            config, data=data, synthetic=synthetic, backbone=backbone, train=train, grid=grid, **overrides
        )
        return experiments.validate(config)

    def cmd_backbone(self):
        """Disparity-filter an edge list and report the edge counts."""
        a = self.args
        graph = datasets.load_edge_list(a.edges, directed=not a.undirected)
        backbone = extract_backbone(graph, a.alpha, a.min_keep, a.criterion)
        datasets.write_edge_list(backbone, a.out)
        print(f"edges_in={graph.num_edges},edges_out={backbone.num_edges},alpha={a.alpha},min_keep={a.min_keep}")

    def cmd_synth(self):
        """Write a synthetic edge list, panel and population table."""
        a = self.args
        spec = SynthSpec(
            nodes=a.nodes, days=a.days, seed=a.seed, graph_style=a.graph_style,
            series_style=a.series_style, noise=a.noise, period=a.period,
        )
        graph, panel, populations = generate_synthetic(spec)
        out = Path(a.out)
        datasets.write_edge_list(graph, out / "edges.csv")
        datasets.write_panel(panel, out / "panel.csv")
        datasets.write_population(populations, out / "population.csv")
        print(f"Wrote {graph.num_nodes} nodes, {graph.num_edges} edges, {panel.num_days} days to {out}")

    def cmd_preprocess(self):
        report = experiments.preprocess(self.config())
        print(f"Nodes: {report['nodes']}  Days: {report['days']}  Edges: {report['edges']}")
        print(f"Standardization fitted on days {report['fit_days'][0]}..{report['fit_days'][1] - 1}")
        if report["balance"] is not None:
            alert = report["balance"]["alert_share"]
            print(f"Alert: {100 * alert:.1f}%  Stable: {100 * (1 - alert):.1f}%")

    def cmd_train(self):
        """Run one experiment and print its metric summaries."""
        result = experiments.run_experiment(self.config())
        for name, table in result.evaluation.tables.items():
            s = table.summary
            print(f"{result.config.model} {name}: mean {s.mean:.6g} std {s.std:.6g} median {s.median:.6g}")
        if result.evaluation.baseline is not None:
            print(f"persistence rmse: mean {result.evaluation.baseline.summary.mean:.6g}")
        print(f"Results in {result.output_dir}")

    def cmd_evaluate(self):
        """Re-score a finished run directory."""
        result = experiments.evaluate_run(self.args.run_dir)
        for name, table in result.evaluation.tables.items():
            print(f"{result.config.model} {name}: mean {table.summary.mean:.6g}")

    def cmd_grid(self):
        """Sweep windows and horizons, write the heatmaps."""
        config = self.config()
        frames = experiments.grid_sweep(config)
        for metric, frame in frames.items():
            populated = int(frame.notna().to_numpy().sum())
            print(f"{config.model} {metric}: {populated} populated cell(s) of {frame.size}")

    def cmd_pipeline(self):
        a = self.args
        scenarios = list(a.scenarios)
        if a.reference_days is not None and "reference" not in scenarios:
            scenarios.insert(0, "reference")
        table, _ = experiments.pipeline_table(
            self.config(), scenarios=scenarios, reference_days=a.reference_days
        )
        print(table.to_string(index=False))


def _range(text):
    lo, _, hi = text.partition("-")
    return int(lo), int(hi or lo)


def _experiment_flags(parser):
    parser.add_argument("--config", type=str, help="TOML config or run manifest.json")
    parser.add_argument("--edges", type=str, help="Edge-list CSV (source,target,weight)")
    parser.add_argument("--panel", type=str, help="Case panel CSV (node, one column per day)")
    parser.add_argument("--population", type=str, help="Population CSV (node,population)")
    parser.add_argument("--inflows", type=str, help="Directory of per-day inflow matrices")
    parser.add_argument("--undirected", action="store_true", help="Treat the edge list as undirected")
    parser.add_argument("--last-day", type=int, help="Keep only days before this index")
    parser.add_argument("--synthetic", choices=SERIES_STYLES, help="Use a synthetic fixture of this style")
    parser.add_argument("--model", choices=("gcrn", "gclstm"))
    parser.add_argument("--task", choices=("regression", "classification"))
    parser.add_argument("--window", type=int, help="Window size l (days)")
    parser.add_argument("--horizon", type=int, help="Horizon F (days)")
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--scenario", type=str, help="Scenario label in the metrics tables")
    parser.add_argument("--backbone", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--min-keep", type=int)
    parser.add_argument("--criterion", choices=CRITERIA)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--out", type=str, help="Output directory")


def build_parser():
    parser = argparse.ArgumentParser(description="Graph-convolutional recurrent epidemic forecasting")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backbone", help="Disparity-filter backbone of an edge list")
    p.add_argument("edges", type=str)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--min-keep", type=int, default=5)
    p.add_argument("--criterion", choices=CRITERIA, default="smallest")
    p.add_argument("--undirected", action="store_true")

    p = sub.add_parser("synth", help="Write a synthetic fixture (edges, panel, population)")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--days", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--graph-style", choices=GRAPH_STYLES, default="community")
    p.add_argument("--series-style", choices=SERIES_STYLES, default="seasonal")
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--period", type=int, default=28)

    for name, text in (
        ("preprocess", "Standardize, label and (optionally) backbone a dataset"),
        ("train", "Train and evaluate one configuration"),
        ("grid", "Sweep window x horizon cells"),
        ("pipeline", "Compare preprocessing scenarios for both models"),
    ):
        p = sub.add_parser(name, help=text)
        _experiment_flags(p)
        if name == "grid":
            p.add_argument("--windows", type=_range, help="Window range, e.g. 1-14")
            p.add_argument("--horizons", type=_range, help="Horizon range, e.g. 1-14")
            p.add_argument("--workers", type=int)
            p.add_argument("--render", action="store_true", help="Also write heatmap PNGs")
        if name == "pipeline":
            p.add_argument("--scenarios", nargs="+", choices=tuple(experiments.SCENARIOS),
                           default=["segmented", "sliding", "sliding+backbone"])
            p.add_argument("--reference-days", type=int, help="Also run the truncated reference scenario")

    p = sub.add_parser("evaluate", help="Re-score a finished run directory")
    p.add_argument("run_dir", type=str)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("PIL").setLevel(logging.WARNING)

    try:
        ForecastApp(args).run()
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ForecastError as e:
        print(f"error: [{args.command}] {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("Stopped by user", file=sys.stderr)
        return 130
    except Exception as e:
        log.debug("unexpected failure", exc_info=True)
        print(f"error: [{args.command}] {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
