import contextlib
import io
import json
import os
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

import experiments
import main
from errors import ConfigurationError, EmptyDataError, StageError
from experiments import ExperimentConfig, cell_config, grid_sweep, run_experiment
from gc_models import TrainConfig
from synthetic import SynthSpec

SLOW = os.environ.get("EPI_FORECAST_SLOW") == "1"


def tiny_config(out, **overrides):
    values = dict(
        synthetic=SynthSpec(nodes=6, days=60, seed=1),
        train=TrainConfig(epochs=5, hidden_size=4, log_every=0),
        window=5,
        horizon=2,
        output_dir=str(out),
    )
    values.update(overrides)
    return ExperimentConfig(**values)


class TempDirTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()


class TestConfig(TempDirTestCase):
    def test_toml_tables(self):
        (self.dir / "data").mkdir()
        for name in ("edges.csv", "panel.csv"):
            (self.dir / "data" / name).write_text("")
        path = self.dir / "exp.toml"
        path.write_text(
            "[data]\nedges = \"data/edges.csv\"\npanel = \"data/panel.csv\"\n"
            "[experiment]\nmodel = \"gclstm\"\nwindow = 7\noutput_dir = \"runs\"\n"
            "[backbone]\nenabled = true\nalpha = 0.05\n"
            "[train]\nepochs = 10\n"
            "[grid]\nwindows = \"2-4\"\n"
        )
        config = experiments.load_config(path)
        self.assertEqual(config.model, "gclstm")
        self.assertEqual(config.window, 7)
        self.assertEqual(config.train.epochs, 10)
        self.assertEqual(config.train.learning_rate, 0.01)
        self.assertTrue(config.backbone.enabled)
        self.assertEqual(config.backbone.min_keep, 5)
        self.assertEqual(config.grid.windows, (2, 4))
        self.assertEqual(Path(config.data.edges), self.dir / "data" / "edges.csv")
        self.assertEqual(Path(config.output_dir), self.dir / "runs")
        experiments.validate(config)

    def test_unknown_key(self):
        path = self.dir / "exp.toml"
        path.write_text("[train]\nepochs = 10\nmomentum = 0.9\n")
        with self.assertRaises(ConfigurationError):
            experiments.load_config(path)

    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            experiments.validate(ExperimentConfig())
        config = ExperimentConfig(data=experiments.DataPaths(panel="missing.csv", edges="missing.csv"))
        with self.assertRaises(ConfigurationError):
            experiments.validate(config)
        config = tiny_config(self.dir, grid=experiments.GridConfig(windows=(1, 15)))
        with self.assertRaises(ConfigurationError):
            experiments.validate(config, grid=True)
        with self.assertRaises(ConfigurationError):
            ExperimentConfig(model="transformer")

    def test_cell_seeds_are_stable_and_distinct(self):
        seeds = {experiments.cell_seed(0, l, f) for l in range(1, 15) for f in range(1, 15)}
        self.assertEqual(len(seeds), 196)
        self.assertEqual(experiments.cell_seed(0, 3, 4), experiments.cell_seed(0, 3, 4))


class TestRunExperiment(TempDirTestCase):
    def test_outputs_and_manifest(self):
        result = run_experiment(tiny_config(self.dir / "run"))
        out = result.output_dir
        for name in ("metrics_rmse.csv", "metrics_per_timestamp.csv", "predictions.csv",
                     "loss_history.csv", "checkpoint.pt", "manifest.json"):
            self.assertTrue((out / name).exists(), name)
        table = pd.read_csv(out / "metrics_rmse.csv")
        self.assertEqual(list(table["model"]), ["gcrn", "persistence"])
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["seed"], 0)
        self.assertIn("torch", manifest["versions"])
        self.assertEqual(manifest["train_budget"]["epochs"], 5)
        self.assertNotIn(str(self.dir), json.dumps(manifest))
        self.assertEqual(len(result.history), 5)

    def test_rerun_from_manifest_is_bit_identical(self):
        first = run_experiment(tiny_config(self.dir / "a"))
        config = experiments.load_config(first.output_dir / "manifest.json")
        second = run_experiment(replace(config, output_dir=str(self.dir / "b")))
        for name in ("metrics_rmse.csv", "metrics_per_timestamp.csv", "predictions.csv"):
            self.assertEqual((first.output_dir / name).read_bytes(), (second.output_dir / name).read_bytes())

    def test_evaluate_run_matches(self):
        result = run_experiment(tiny_config(self.dir / "run"))
        experiments.evaluate_run(result.output_dir)
        self.assertEqual(
            (result.output_dir / "metrics_rmse.csv").read_bytes(),
            (result.output_dir / "evaluation" / "metrics_rmse.csv").read_bytes(),
        )

    def test_window_longer_than_panel(self):
        with self.assertRaises(StageError) as ctx:
            run_experiment(tiny_config(self.dir, window=50, horizon=14), write=False)
        self.assertEqual(ctx.exception.stage, "snapshots")
        self.assertIsInstance(ctx.exception.cause, EmptyDataError)
        self.assertTrue(str(ctx.exception).startswith("[snapshots]"))

    def test_classification_run(self):
        config = tiny_config(
            self.dir, task="classification",
            synthetic=SynthSpec(nodes=5, days=80, series_style="separable-two-class"),
        )
        result = run_experiment(config, write=False)
        self.assertEqual(set(result.evaluation.tables), {"f1", "precision", "recall"})
        self.assertIsNone(result.evaluation.baseline)
        self.assertTrue(set(np.unique(result.evaluation.predictions)) <= {0, 1})

    def test_backbone_and_truncation(self):
        config = tiny_config(self.dir, backbone=experiments.BackboneConfig(enabled=True, alpha=0.05, min_keep=1),
                             data=experiments.DataPaths(last_day=40))
        result = run_experiment(config, write=False)
        full = experiments.load_dataset(config).graph.num_edges
        self.assertLessEqual(result.edges_used, full)
        self.assertEqual(result.evaluation.anchors[-1], 40 - 2 - 1)


class TestGrid(TempDirTestCase):
    def test_single_cell_matches_lone_run(self):
        config = tiny_config(self.dir)
        frames = grid_sweep(config, windows=(3, 3), horizons=(2, 2))
        lone = run_experiment(cell_config(config, 3, 2), write=False)
        self.assertEqual(frames["rmse"].loc[3, "horizon_2"], lone.summary("rmse").mean)

    def test_heatmap_layout(self):
        config = tiny_config(self.dir)
        grid_sweep(config, windows=(1, 2), horizons=(1, 3))
        frame = pd.read_csv(self.dir / "heatmap_gcrn_regression_rmse.csv")
        self.assertEqual(list(frame.columns), ["window", "horizon_1", "horizon_2", "horizon_3"])
        self.assertEqual(list(frame["window"]), [1, 2])
        self.assertFalse(frame.isna().to_numpy().any())
        summary = pd.read_csv(self.dir / "grid_summary_regression.csv")
        self.assertEqual(list(summary["model"]), ["gcrn"])

    def test_png_rendering(self):
        config = tiny_config(self.dir, grid=experiments.GridConfig(render=True))
        grid_sweep(config, windows=(1, 2), horizons=(1, 1))
        png = self.dir / "heatmap_gcrn_regression_rmse.png"
        self.assertEqual(png.read_bytes()[:8], b"\x89PNG\r\n\x1a\n")

    def test_order_independent_and_mergeable(self):
        a = tiny_config(self.dir / "a")
        b = tiny_config(self.dir / "b")
        full = grid_sweep(a, windows=(1, 2), horizons=(1, 2))["rmse"]
        for window, horizon in [(2, 2), (1, 2), (2, 1), (1, 1)]:
            partial = grid_sweep(b, windows=(window, window), horizons=(horizon, horizon))["rmse"]
        pd.testing.assert_frame_equal(full, partial)

    def test_interrupted_sweep_keeps_finished_cells(self):
        config = tiny_config(self.dir)
        real = experiments.run_experiment
        calls = []

        def stop_on_third(cell, **kwargs):
            calls.append(cell)
            if len(calls) == 3:
                raise KeyboardInterrupt
            return real(cell, **kwargs)

        with mock.patch.object(experiments, "run_experiment", side_effect=stop_on_third):
            with self.assertRaises(KeyboardInterrupt):
                grid_sweep(config, windows=(1, 1), horizons=(1, 3), workers=1)
        cells = sorted(p.name for p in (self.dir / "cells" / "gcrn_regression").glob("*.json"))
        self.assertEqual(cells, ["l01_f01.json", "l01_f02.json"])

        with mock.patch.object(experiments, "run_experiment", side_effect=real) as resumed:
            frame = grid_sweep(config, windows=(1, 1), horizons=(1, 3), workers=1)["rmse"]
        self.assertEqual(resumed.call_count, 1)
        self.assertFalse(frame.isna().to_numpy().any())

    def test_parallel_matches_sequential(self):
        a = tiny_config(self.dir / "a")
        b = tiny_config(self.dir / "b")
        sequential = grid_sweep(a, windows=(1, 2), horizons=(1, 1), workers=1)["rmse"]
        parallel = grid_sweep(b, windows=(1, 2), horizons=(1, 1), workers=2)["rmse"]
        pd.testing.assert_frame_equal(sequential, parallel)

    def test_failed_cells_are_recorded(self):
        config = tiny_config(self.dir, synthetic=SynthSpec(nodes=4, days=30, seed=2))
        with self.assertLogs("experiments", level="WARNING"):
            frame = grid_sweep(config, windows=(12, 14), horizons=(14, 14))["rmse"]
        self.assertFalse(np.isnan(frame.loc[12, "horizon_14"]))
        self.assertTrue(np.isnan(frame.loc[13, "horizon_14"]))
        cell = json.loads((self.dir / "cells" / "gcrn_regression" / "l14_f14.json").read_text())
        self.assertEqual(cell["status"], "failed")
        self.assertEqual(cell["stage"], "snapshots")

    def test_model_comparison(self):
        for model in ("gcrn", "gclstm"):
            grid_sweep(tiny_config(self.dir, model=model), windows=(2, 2), horizons=(1, 1))
        comparison = pd.read_csv(self.dir / "model_comparison_regression.csv")
        self.assertEqual(len(comparison), 1)
        self.assertAlmostEqual(comparison.loc[0, "difference"], comparison.loc[0, "gclstm"] - comparison.loc[0, "gcrn"])


class TestPipeline(TempDirTestCase):
    def test_table_rows(self):
        table, _ = experiments.pipeline_table(
            tiny_config(self.dir), models=("gcrn",), scenarios=("reference", "segmented", "sliding"),
            reference_days=45,
        )
        self.assertEqual(list(table["scenario"]), ["reference", "segmented", "sliding"])
        self.assertTrue((self.dir / "pipeline_table.csv").exists())
        self.assertTrue((self.dir / "gcrn_sliding" / "manifest.json").exists())


class TestCommandLine(TempDirTestCase):
    def run_main(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main.main(list(argv))
        return code, stdout.getvalue(), stderr.getvalue()

    def test_synth_then_backbone(self):
        code, _, _ = self.run_main("synth", "--out", str(self.dir), "--nodes", "8", "--days", "40")
        self.assertEqual(code, 0)
        for name in ("edges.csv", "panel.csv", "population.csv"):
            self.assertTrue((self.dir / name).exists())
        code, out, _ = self.run_main("backbone", str(self.dir / "edges.csv"), "--out", str(self.dir / "bb.csv"),
                                     "--min-keep", "1")
        self.assertEqual(code, 0)
        self.assertRegex(out.strip(), r"^edges_in=\d+,edges_out=\d+,alpha=0.01,min_keep=1$")

    def test_train_on_files(self):
        self.run_main("synth", "--out", str(self.dir), "--nodes", "5", "--days", "50")
        code, out, _ = self.run_main(
            "train", "--edges", str(self.dir / "edges.csv"), "--panel", str(self.dir / "panel.csv"),
            "--epochs", "3", "--hidden", "4", "--window", "4", "--out", str(self.dir / "run"),
        )
        self.assertEqual(code, 0)
        self.assertIn("gcrn rmse", out)
        code, out, _ = self.run_main("evaluate", str(self.dir / "run"))
        self.assertEqual(code, 0)

    def test_error_exit_codes(self):
        code, _, err = self.run_main("backbone", str(self.dir / "nope.csv"), "--out", str(self.dir / "x.csv"))
        self.assertEqual(code, 2)
        self.assertIn("[backbone]", err)
        code, _, err = self.run_main("train", "--synthetic", "seasonal", "--window", "400", "--epochs", "1",
                                     "--out", str(self.dir))
        self.assertEqual(code, 2)
        self.assertIn("[snapshots]", err)


@unittest.skipUnless(SLOW, "set EPI_FORECAST_SLOW=1 for the acceptance runs")
class TestAcceptance(TempDirTestCase):
    def test_forecast_beats_persistence(self):
        for model in ("gcrn", "gclstm"):
            ratios = []
            for seed in range(5):
                config = ExperimentConfig(
                    model=model, window=14, horizon=1, synthetic=SynthSpec(seed=seed),
                    train=TrainConfig(seed=seed, epochs=400), output_dir=str(self.dir),
                )
                result = run_experiment(config, write=False)
                ratios.append(result.summary("rmse").mean / result.evaluation.baseline.summary.mean)
            self.assertLessEqual(float(np.median(ratios)), 0.9, msg=f"{model}: {ratios}")

    def test_pipeline_ordering(self):
        for model in ("gcrn", "gclstm"):
            ordered = 0
            for seed in range(5):
                config = ExperimentConfig(
                    model=model, window=14, horizon=1, synthetic=SynthSpec(seed=seed),
                    train=TrainConfig(seed=seed), output_dir=str(self.dir / model / str(seed)),
                )
                table, _ = experiments.pipeline_table(config, models=(model,), write=False)
                means = list(table["mean"])
                ordered += means[0] > means[1] > means[2]
            self.assertGreaterEqual(ordered, 4, msg=model)

    def test_classification_horizon_degradation(self):
        config = ExperimentConfig(
            task="classification", synthetic=SynthSpec(series_style="separable-two-class"),
            train=TrainConfig(hidden_size=16, epochs=150, log_every=0), output_dir=str(self.dir),
        )
        at_8 = run_experiment(replace(config, window=8, horizon=1), write=False)
        self.assertGreaterEqual(at_8.summary("f1").mean, 0.95)
        near = grid_sweep(config, windows=(6, 10), horizons=(1, 1))["f1"]
        far = grid_sweep(config, windows=(6, 10), horizons=(14, 14))["f1"]
        self.assertGreater(near["horizon_1"].mean(), far["horizon_14"].mean())


if __name__ == "__main__":
    unittest.main()
