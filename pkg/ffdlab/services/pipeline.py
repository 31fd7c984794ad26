"""End-to-end run: bars to fracdiff, labels, features, model, report and backtest.

Each stage reads the previous stage's in-memory result and writes its
artifacts into the run directory. A failing stage is re-raised as
``StageError`` after a manifest marking the failure has been written, so the
artifacts of the stages that finished stay usable.
"""

import os
from contextlib import contextmanager
from dataclasses import asdict, replace

import numpy as np
import pandas as pd
from loguru import logger

from ffdlab.config import (
    PipelineConfig,
    config_hash,
    reproducible_dict,
    stage_seeds,
)
from ffdlab.errors import ConfigError, FfdlabError, StageError
from ffdlab.modules.backtest import (
    backtest_objective,
    params_from_vector,
    run_backtest,
)
from ffdlab.modules.features import (
    assemble_dataset,
    compute_indicators,
    dataset_frame,
    dataset_metadata,
)
from ffdlab.modules.fracdiff import fracdiff_prices
from ffdlab.modules.labeling import (
    TripleBarrierConfig,
    VolatilityEstimate,
    ema_volatility,
    events_to_frame,
    fixed_horizon_events,
    label_distribution,
    triple_barrier_report,
)
from ffdlab.modules.market_data import ColumnSchema, load_csv, resample
from ffdlab.modules.model import (
    CLASS_NAMES,
    argmax_classes,
    classification_report,
    forward,
    predict,
    save_model,
    train,
)
from ffdlab.modules.optimizer import ga_optimize, parse_bounds
from ffdlab.modules.stationarity import minimal_d
from ffdlab.services.artifacts import RunDirectory

STAGES = (
    "resample",
    "fracdiff",
    "label",
    "featurize",
    "train",
    "predict",
    "report",
    "optimize",
    "backtest",
)


def span_labels(
    n_bars: int, start: int, entries: np.ndarray, classes: np.ndarray
) -> np.ndarray:
    """Per-bar labels for bars ``start..n_bars-1``.

    Entries carry their predicted class, every other bar is flat.
    """
    labels = np.ones(n_bars - start, dtype=np.int64)
    labels[entries - start] = classes
    return labels


class Pipeline:
    def __init__(self, cfg: PipelineConfig, run_dir: str | None = None):
        if cfg.data.input_path is None:
            raise ConfigError("data.input_path is required to run the pipeline")
        self.cfg = cfg
        self.config_hash = config_hash(cfg)
        self.seeds = stage_seeds(cfg.seed)
        self.run_dir = run_dir or os.path.join(
            cfg.output_dir, f"run-{self.config_hash[:12]}"
        )
        self.run = RunDirectory(self.run_dir, self.config_hash)
        self.chosen_d = None
        self.strategy = cfg.backtest.params

    @contextmanager
    def _stage(self, name: str):
        logger.info(f"Stage {name} started")
        try:
            yield
        except (FfdlabError, ValueError, OSError) as e:
            logger.error(f"Stage {name} failed: {e}")
            self._manifest(status="failed", failed_stage=name)
            raise StageError(name, e) from e
        logger.info(f"Stage {name} finished")

    def _manifest(self, **fields) -> str:
        return self.run.write_manifest(
            config=reproducible_dict(self.cfg),
            seed=self.cfg.seed,
            stage_seeds=self.seeds,
            chosen_d=self.chosen_d,
            **fields,
        )

    def execute(self) -> str:
        sink = logger.add(self.run.file("run.log"), level="DEBUG")
        try:
            for name in STAGES:
                if name == "optimize" and not self.cfg.optimizer.enabled:
                    continue
                with self._stage(name):
                    getattr(self, f"_{name}")()
            self._manifest(status="complete")
        finally:
            logger.remove(sink)
        return self.run_dir

    # stages

    def _resample(self):
        data = self.cfg.data
        raw = load_csv(
            data.input_path,
            ColumnSchema.from_mapping(data.schema),
            period_minutes=data.source_period_minutes,
            symbol=data.symbol,
        )
        self.bars = resample(raw, data.period_minutes)
        self.run.write_csv("resample", "bars.csv", self.bars.to_frame())

    def _fracdiff(self):
        fc = self.cfg.fracdiff
        prices = getattr(self.bars, fc.column)
        if fc.d == "auto":
            # choose d on the training share of the bars only
            fit_len = int(np.floor(self.cfg.features.split_fraction * len(prices)))
            self.chosen_d = minimal_d(
                prices[:fit_len],
                tau=fc.tau,
                grid_step=fc.grid_step,
                log=fc.log_prices,
                max_lags=fc.max_lags,
                start=fc.grid_start,
                stop=fc.grid_stop,
            )
        else:
            self.chosen_d = float(fc.d)
        self.ffd = fracdiff_prices(prices, self.chosen_d, fc.tau, log=fc.log_prices)
        frame = pd.DataFrame(
            {
                "timestamp": self.bars.timestamp[self.ffd.start_index :],
                "value": self.ffd.values,
            }
        )
        self.run.write_csv("fracdiff", "fracdiff.csv", frame)
        self.run.write_json(
            "fracdiff",
            "fracdiff.json",
            {
                "d": self.chosen_d,
                "tau": fc.tau,
                "column": fc.column,
                "log_prices": fc.log_prices,
                "window": self.ffd.start_index + 1,
                "auto": fc.d == "auto",
            },
        )

    def _label(self):
        lc = self.cfg.labeling
        self.vol = ema_volatility(self.bars, lc.vol_span)
        stats = {"method": lc.method}
        if lc.method == "triple_barrier":
            tb = TripleBarrierConfig(
                h=lc.h,
                upfactor=lc.upfactor,
                lowerfactor=lc.lowerfactor,
                vol_span=lc.vol_span,
            )
            report = triple_barrier_report(self.bars, tb, self.vol)
            self.events = report.events
            stats.update(skipped_zero_vol=report.skipped_zero_vol, ties=report.ties)
            stats["volatility"] = (
                f"ewm of squared log returns, span {lc.vol_span}, adjust=False"
            )
            stats["tie_break"] = "barrier nearer the bar open; equidistant labels 0"
        else:
            self.events = fixed_horizon_events(self.bars, lc.h, lc.threshold)
        dist = label_distribution(self.events)
        stats["distribution"] = {str(k): v for k, v in dist.items()}
        stats["events"] = len(self.events)
        frame = events_to_frame(self.events, self.bars.timestamp)
        self.run.write_csv("label", "labels.csv", frame)
        self.run.write_json("label", "labels.json", stats)

    def _featurize(self):
        fc = self.cfg.features
        matrix = compute_indicators(self.bars, self.ffd, fc.indicator_set)
        self.dataset = assemble_dataset(
            matrix,
            self.events,
            split_fraction=fc.split_fraction,
            n_components=fc.n_components,
            split=fc.split,
            seed=self.seeds["split"],
        )
        self.run.write_csv("featurize", "dataset.csv", dataset_frame(self.dataset))
        self.run.write_json("featurize", "dataset.json", dataset_metadata(self.dataset))

    def _train(self):
        mcfg = replace(self.cfg.model, seed=self.seeds["model"])
        self.model = train(self.dataset, mcfg)
        path = self.run.register("train", "model.npz")
        save_model(self.model, path, config_hash=self.config_hash)
        history = pd.DataFrame(
            {
                "epoch": np.arange(len(self.model.loss_history)),
                "loss": self.model.loss_history,
            }
        )
        self.run.write_csv("train", "loss_history.csv", history)

    def _predict(self):
        ds = self.dataset
        logits, probs = forward(self.model, ds.X_test)
        self.predicted = argmax_classes(logits)
        entries = ds.entry_index[ds.test_rows]
        frame = pd.DataFrame(
            {
                "bar_index": entries,
                "timestamp": self.bars.timestamp[entries],
                "label": ds.y_test,
                "predicted": self.predicted,
            }
        )
        for k, name in enumerate(CLASS_NAMES):
            frame[f"p_{name}"] = probs[:, k]
        self.run.write_csv("predict", "predictions.csv", frame)

    def _report(self):
        report = classification_report(self.dataset.y_test, self.predicted)
        self.run.write_json("report", "classification_report.json", report.to_dict())
        self.run.write_text("report", "classification_report.txt", report.to_text())
        logger.info(f"Test accuracy {report.accuracy:.4f}")

    def _span(self, rows: np.ndarray, classes: np.ndarray):
        entries = self.dataset.entry_index[rows]
        start = int(entries.min())
        series = self.bars.slice(start)
        vol = VolatilityEstimate(span=self.vol.span, values=self.vol.values[start:])
        return series, span_labels(len(self.bars), start, entries, classes), vol

    def _optimize(self):
        oc = self.cfg.optimizer
        ds = self.dataset
        in_sample = predict(self.model, ds.X_train)
        series, labels, vol = self._span(ds.train_rows, in_sample)
        objective = backtest_objective(
            series, labels, vol, self.cfg.backtest.costs, oc.objective
        )
        base = self.cfg.backtest.params
        result = ga_optimize(
            objective,
            parse_bounds(oc.bounds),
            oc.ga_config(self.seeds["optimizer"]),
            decode=lambda v: params_from_vector(v, base),
            workers=self.cfg.workers,
        )
        self.strategy = result.best_params
        self.run.write_json(
            "optimize",
            "optimize.json",
            {
                "objective": oc.objective,
                "best_params": asdict(result.best_params),
                "best_fitness": result.best_fitness,
            },
        )
        history = pd.DataFrame(
            {
                "generation": np.arange(len(result.history)),
                "best_fitness": result.history,
            }
        )
        self.run.write_csv("optimize", "ga_history.csv", history)

    def _backtest(self):
        series, labels, vol = self._span(self.dataset.test_rows, self.predicted)
        report = run_backtest(
            series, labels, vol, self.strategy, self.cfg.backtest.costs
        )
        self.run.write_json(
            "backtest",
            "backtest.json",
            {**report.summary(), "params": asdict(self.strategy)},
        )
        self.run.write_csv("backtest", "trades.csv", report.ledger_frame())
        self.run.write_csv("backtest", "equity.csv", report.equity_frame())


def run_pipeline(config: PipelineConfig, run_dir: str | None = None) -> str:
    """Run every stage; returns the run directory."""
    return Pipeline(config, run_dir).execute()
