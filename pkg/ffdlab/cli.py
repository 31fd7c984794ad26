"""Command-line entry point: one verb per pipeline stage plus ``run``."""

import argparse
import os
import sys
from dataclasses import asdict

import numpy as np
import pandas as pd
from loguru import logger

from ffdlab.config import config_hash, load_config, override
from ffdlab.errors import FfdlabError
from ffdlab.modules.backtest import (
    backtest_objective,
    params_from_vector,
    run_backtest,
)
from ffdlab.modules.features import (
    INDICATOR_SETS,
    SPLIT_MODES,
    assemble_dataset,
    compute_indicators,
    load_dataset,
    save_dataset,
)
from ffdlab.modules.fracdiff import export_weights, fracdiff_prices, generate_weights
from ffdlab.modules.labeling import (
    TripleBarrierConfig,
    VolatilityEstimate,
    ema_volatility,
    events_from_frame,
    events_to_frame,
    fixed_horizon_events,
    triple_barrier_report,
)
from ffdlab.modules.market_data import (
    PRICE_FIELDS,
    ColumnSchema,
    load_csv,
    resample,
    write_csv,
)
from ffdlab.modules.model import (
    CLASS_NAMES,
    argmax_classes,
    classification_report,
    forward,
    load_model,
    save_model,
    train,
)
from ffdlab.modules.optimizer import ga_optimize, parse_bounds
from ffdlab.modules.stationarity import (
    acf_pacf,
    confidence_band,
    d_grid,
    d_sweep,
    sweep_table_row,
)
from ffdlab.services import artifacts
from ffdlab.services.pipeline import run_pipeline, span_labels
from ffdlab.services.synthetic import generate_synthetic


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = "DEBUG" if verbose else "WARNING" if quiet else "INFO"
    logger.remove()
    logger.add(sys.stderr, level=level, format="<level>{level: <8}</level> {message}")


def _parse_floats(text: str, count: int) -> list[float]:
    values = [float(x) for x in text.split(",")]
    if len(values) != count:
        raise ValueError(f"expected {count} comma-separated numbers, got '{text}'")
    return values


def _parse_d(text: str):
    return text if text == "auto" else float(text)


def _parse_grid(text: str) -> tuple[float, float, float]:
    # "0:1:0.1"
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected START:STOP:STEP, got '{text}'"
        ) from None
    return start, stop, step


def _parse_split(text: str):
    return text if text in SPLIT_MODES else float(text)


def _bars(args, cfg):
    """Input bars, resampled if asked, and ``cfg`` with the data flags folded in."""
    if args.schema:
        schema = ColumnSchema.parse(args.schema)
    else:
        schema = ColumnSchema.from_mapping(cfg.data.schema)
    raw = load_csv(args.input, schema, period_minutes=args.source_period)
    period = getattr(args, "period", None)
    series = resample(raw, period) if period else raw
    cfg = override(
        cfg,
        {
            "data.input_path": args.input,
            "data.schema": {k: v for k, v in asdict(schema).items() if k != v},
            "data.source_period_minutes": raw.period_minutes,
            "data.period_minutes": series.period_minutes,
        },
    )
    return series, cfg


def _stamp(cfg, *inputs: str, options: dict | None = None) -> str:
    """Hash written into a verb's outputs: resolved config plus its input files."""
    return artifacts.chained_hash(config_hash(cfg), list(inputs), options)


def _read_predictions(path: str):
    frame = pd.read_csv(path, comment="#")
    return (
        frame["bar_index"].to_numpy(dtype=np.int64),
        frame["predicted"].to_numpy(dtype=np.int64),
    )


# verbs


def cmd_resample(args, cfg):
    series, cfg = _bars(args, cfg)
    artifacts.write_csv(args.output, series.to_frame(), _stamp(cfg, args.input))


def cmd_fracdiff(args, cfg):
    cfg = override(
        cfg,
        {
            "fracdiff.d": args.d,
            "fracdiff.tau": args.tau,
            "fracdiff.column": args.column,
            "fracdiff.log_prices": args.log,
        },
    )
    fc = cfg.fracdiff
    if fc.d == "auto":
        raise ValueError("fracdiff needs an explicit --d; use adf-sweep to choose one")
    series, cfg = _bars(args, cfg)
    ffd = fracdiff_prices(getattr(series, fc.column), fc.d, fc.tau, log=fc.log_prices)
    frame = pd.DataFrame(
        {"timestamp": series.timestamp[ffd.start_index :], "value": ffd.values}
    )
    artifacts.write_csv(args.output, frame, _stamp(cfg, args.input))
    if args.weights:
        export_weights(generate_weights(fc.d, fc.tau), args.weights)
    logger.info(f"Wrote {len(frame)} fracdiff values (window {ffd.start_index + 1})")


def cmd_adf_sweep(args, cfg):
    start, stop, step = args.grid or (None, None, None)
    cfg = override(
        cfg,
        {
            "fracdiff.tau": args.tau,
            "fracdiff.column": args.column,
            "fracdiff.log_prices": args.log,
            "fracdiff.max_lags": args.max_lags,
            "fracdiff.grid_start": start,
            "fracdiff.grid_stop": stop,
            "fracdiff.grid_step": step,
        },
    )
    fc = cfg.fracdiff
    series, cfg = _bars(args, cfg)
    rows = d_sweep(
        getattr(series, fc.column),
        grid=d_grid(fc.grid_step, fc.grid_start, fc.grid_stop),
        tau=fc.tau,
        log=fc.log_prices,
        max_lags=fc.max_lags,
        workers=args.workers,
    )
    digest = _stamp(cfg, args.input)
    table = pd.DataFrame([sweep_table_row(rows, series.symbol)])
    artifacts.write_csv(args.output, table, digest)
    if args.plot:
        plot = pd.DataFrame(
            {
                "d": [r.d for r in rows],
                "adf": [r.adf_statistic for r in rows],
                "corr": [r.correlation for r in rows],
            }
        )
        artifacts.write_csv(args.plot, plot, digest)
    if args.rows:
        artifacts.write_csv(args.rows, pd.DataFrame([asdict(r) for r in rows]), digest)
    for r in rows:
        verdict = "pass" if r.passes else ""
        print(
            f"{r.d:5.2f}  adf={r.adf_statistic:10.4f}  "
            f"corr={r.correlation:7.4f}  {verdict}"
        )


def cmd_acf(args, cfg):
    series, cfg = _bars(args, cfg)
    x = np.log(series.close) if args.log else series.close
    if args.returns:
        x = np.diff(x)
    acf, pacf = acf_pacf(x, args.lags)
    band = confidence_band(len(x))
    frame = pd.DataFrame(
        {"lag": np.arange(args.lags + 1), "acf": acf, "pacf": pacf, "band": band}
    )
    options = {"lags": args.lags, "log": args.log, "returns": args.returns}
    artifacts.write_csv(args.output, frame, _stamp(cfg, args.input, options=options))


def cmd_label(args, cfg):
    cfg = override(
        cfg,
        {
            "labeling.method": args.method.replace("-", "_") if args.method else None,
            "labeling.h": args.h,
            "labeling.upfactor": args.up,
            "labeling.lowerfactor": -args.down if args.down is not None else None,
            "labeling.vol_span": args.vol_span,
            "labeling.threshold": args.threshold,
        },
    )
    lc = cfg.labeling
    series, cfg = _bars(args, cfg)
    if lc.method == "triple_barrier":
        tb = TripleBarrierConfig(lc.h, lc.upfactor, lc.lowerfactor, lc.vol_span)
        events = triple_barrier_report(series, tb).events
    else:
        events = fixed_horizon_events(series, lc.h, lc.threshold)
    artifacts.write_csv(
        args.output,
        events_to_frame(events, series.timestamp),
        _stamp(cfg, args.input),
    )


def cmd_featurize(args, cfg):
    # --split takes a mode or a train fraction
    mode = args.split if isinstance(args.split, str) else None
    fraction = args.split if isinstance(args.split, float) else args.split_fraction
    cfg = override(
        cfg,
        {
            "fracdiff.d": args.d,
            "fracdiff.tau": args.tau,
            "features.indicator_set": args.indicators,
            "features.n_components": args.pca,
            "features.split": mode,
            "features.split_fraction": fraction,
            "seed": args.seed,
        },
    )
    frac, fc = cfg.fracdiff, cfg.features
    if frac.d == "auto":
        raise ValueError("featurize needs an explicit --d")
    series, cfg = _bars(args, cfg)
    prices = getattr(series, frac.column)
    ffd = fracdiff_prices(prices, frac.d, frac.tau, log=frac.log_prices)
    events = events_from_frame(pd.read_csv(args.labels, comment="#"), cfg.labeling.h)
    dataset = assemble_dataset(
        compute_indicators(series, ffd, fc.indicator_set),
        events,
        split_fraction=fc.split_fraction,
        n_components=fc.n_components,
        split=fc.split,
        seed=cfg.seed,
    )
    digest = _stamp(cfg, args.input, args.labels)
    save_dataset(dataset, args.output, extra={"config_hash": digest})


def cmd_train(args, cfg):
    cfg = override(
        cfg,
        {
            "model.epochs": args.epochs,
            "model.hidden_dim": args.hidden,
            "model.n_residual_blocks": args.blocks,
            "model.learning_rate": args.lr,
            "model.batch_size": args.batch,
            "model.seed": args.seed,
        },
    )
    model = train(load_dataset(args.dataset), cfg.model)
    save_model(model, args.output, config_hash=_stamp(cfg, args.dataset))


def cmd_predict(args, cfg):
    dataset = load_dataset(args.dataset)
    logits, probs = forward(load_model(args.model), dataset.X_test)
    predicted = argmax_classes(logits)
    entries = dataset.entry_index[dataset.test_rows]
    frame = pd.DataFrame(
        {"bar_index": entries, "label": dataset.y_test, "predicted": predicted}
    )
    for k, name in enumerate(CLASS_NAMES):
        frame[f"p_{name}"] = probs[:, k]
    digest = _stamp(cfg, args.model, args.dataset)
    artifacts.write_csv(args.output, frame, digest)
    report = classification_report(dataset.y_test, predicted)
    if args.report:
        artifacts.write_json(args.report, report.to_dict(), digest)
    print(report.to_text(), end="")


def _strategy_inputs(args, cfg):
    cfg = override(cfg, {"labeling.vol_span": args.vol_span})
    series, cfg = _bars(args, cfg)
    entries, predicted = _read_predictions(args.predictions)
    start = int(entries.min())
    vol = ema_volatility(series, cfg.labeling.vol_span)
    span = series.slice(start)
    span_vol = VolatilityEstimate(span=vol.span, values=vol.values[start:])
    labels = span_labels(len(series), start, entries, predicted)
    return cfg, span, labels, span_vol


def cmd_backtest(args, cfg):
    params = cfg.backtest.params
    if args.params:
        params = params_from_vector(_parse_floats(args.params, 4), params)
    cfg = override(
        cfg,
        {
            "backtest.params": params,
            "backtest.costs.initial_capital": args.capital,
            "backtest.costs.commission_rate": args.commission,
            "backtest.costs.slippage": args.slippage,
        },
    )
    cfg, series, labels, vol = _strategy_inputs(args, cfg)
    bc = cfg.backtest
    report = run_backtest(series, labels, vol, bc.params, bc.costs)
    os.makedirs(args.output, exist_ok=True)
    digest = _stamp(cfg, args.input, args.predictions)
    artifacts.write_json(
        os.path.join(args.output, "backtest.json"),
        {**report.summary(), "params": asdict(bc.params)},
        digest,
    )
    artifacts.write_csv(
        os.path.join(args.output, "trades.csv"), report.ledger_frame(), digest
    )
    artifacts.write_csv(
        os.path.join(args.output, "equity.csv"), report.equity_frame(), digest
    )
    for key, value in report.summary().items():
        print(f"{key:>18}: {value}")


def cmd_optimize(args, cfg):
    cfg = override(
        cfg,
        {
            "optimizer.bounds": args.bounds,
            "optimizer.population": args.pop,
            "optimizer.generations": args.gens,
            "optimizer.objective": args.objective,
            "seed": args.seed,
        },
    )
    cfg, series, labels, vol = _strategy_inputs(args, cfg)
    oc = cfg.optimizer
    objective = backtest_objective(
        series, labels, vol, cfg.backtest.costs, oc.objective
    )
    base = cfg.backtest.params
    result = ga_optimize(
        objective,
        parse_bounds(oc.bounds),
        oc.ga_config(cfg.seed),
        decode=lambda v: params_from_vector(v, base),
        workers=args.workers,
    )
    artifacts.write_json(
        args.output,
        {
            "objective": oc.objective,
            "best_params": asdict(result.best_params),
            "best_fitness": result.best_fitness,
            "history": result.history,
        },
        _stamp(cfg, args.input, args.predictions),
    )
    p = result.best_params
    print(
        f"best pa={p.pa:.4f} pb={p.pb:.4f} pc={p.pc:.4f} pd={p.pd:.4f} "
        f"fitness={result.best_fitness:.6g}"
    )


def cmd_run(args, cfg):
    cfg = override(
        cfg,
        {
            "data.input_path": args.input,
            "data.period_minutes": args.period,
            "data.source_period_minutes": args.source_period,
            "fracdiff.d": args.d,
            "fracdiff.tau": args.tau,
            "model.epochs": args.epochs,
            "optimizer.enabled": True if args.optimize else None,
            "seed": args.seed,
            "output_dir": args.output,
            "workers": args.workers,
        },
    )
    run_dir = run_pipeline(cfg, args.run_dir)
    print(run_dir)


def cmd_synth(args, cfg):
    params = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        params[key.strip()] = float(value)
    if args.period:
        params["period_minutes"] = args.period
    series = generate_synthetic(args.kind, args.length, args.seed, params)
    write_csv(series, args.output)


# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ffdlab",
        description="Fracdiff, triple-barrier labels, residual MLP and backtests",
    )
    parser.add_argument(
        "--config",
        help="JSON config file (default: $XDG_CONFIG_HOME/ffdlab/config.json)",
    )
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    noise.add_argument(
        "-q", "--quiet", action="store_true", help="warnings and errors only"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def bars_args(p, output=True):
        p.add_argument("--input", required=True, help="OHLCV CSV file")
        p.add_argument(
            "--schema", help="column overrides, e.g. timestamp=datetime,volume=vol"
        )
        p.add_argument(
            "--source-period",
            type=int,
            help="input bar period in minutes (default: inferred)",
        )
        p.add_argument("--period", type=int, help="resample to this many minutes first")
        if output:
            p.add_argument("--output", required=True)

    p = sub.add_parser("resample", help="aggregate bars to a coarser period")
    p.add_argument("--input", required=True)
    p.add_argument("--schema")
    p.add_argument("--source-period", type=int)
    p.add_argument("--period", type=int, default=10)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("fracdiff", help="fixed-window fractional differentiation")
    bars_args(p)
    p.add_argument("--d", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--column", choices=PRICE_FIELDS)
    p.add_argument("--log", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--weights", help="also write the weight vector CSV here")
    p.set_defaults(func=cmd_fracdiff)

    p = sub.add_parser(
        "adf-sweep", help="ADF statistic and memory correlation over a d grid"
    )
    bars_args(p)
    p.add_argument(
        "--grid", type=_parse_grid, help="d grid as START:STOP:STEP (default 0:1:0.1)"
    )
    p.add_argument("--column", choices=PRICE_FIELDS)
    p.add_argument("--tau", type=float)
    p.add_argument("--log", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--max-lags", type=int)
    p.add_argument("--plot", help="also write (d, adf, corr) CSV here")
    p.add_argument("--rows", help="also write every sweep row CSV here")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_adf_sweep)

    p = sub.add_parser("acf", help="autocorrelation and partial autocorrelation")
    bars_args(p)
    p.add_argument("--lags", type=int, default=40)
    p.add_argument("--log", action="store_true")
    p.add_argument("--returns", action="store_true", help="use first differences")
    p.set_defaults(func=cmd_acf)

    p = sub.add_parser("label", help="triple-barrier or fixed-horizon labels")
    bars_args(p)
    p.add_argument("--method", choices=["triple-barrier", "fixed-horizon"])
    p.add_argument("--h", type=int)
    p.add_argument("--up", type=float)
    p.add_argument("--down", type=float, help="lower factor magnitude (3 means -3)")
    p.add_argument("--vol-span", type=int)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("featurize", help="indicators, normalisation, PCA and split")
    bars_args(p)
    p.add_argument("--labels", required=True, help="labels CSV from the label verb")
    p.add_argument("--d", type=_parse_d)
    p.add_argument("--tau", type=float)
    p.add_argument("--indicators", choices=sorted(INDICATOR_SETS))
    p.add_argument("--pca", "--components", dest="pca", type=int)
    p.add_argument(
        "--split",
        type=_parse_split,
        help="chronological, random, or the train fraction",
    )
    p.add_argument("--split-fraction", type=float)
    p.add_argument("--seed", type=int, help="random split seed")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train the residual MLP")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True, help="model .npz")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict the test rows and print the report")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", help="classification report JSON")
    p.set_defaults(func=cmd_predict)

    for name, func, text in (
        ("backtest", cmd_backtest, "simulate the label-driven strategy"),
        ("optimize", cmd_optimize, "GA search over the TP/SL multipliers"),
    ):
        p = sub.add_parser(name, help=text)
        bars_args(p)
        p.add_argument(
            "--predictions",
            required=True,
            help="predictions CSV from the predict verb",
        )
        p.add_argument("--vol-span", type=int)
        p.set_defaults(func=func)
        if name == "backtest":
            p.add_argument("--params", help="pa,pb,pc,pd")
            p.add_argument("--capital", type=float)
            p.add_argument("--commission", type=float)
            p.add_argument("--slippage", type=float)
        else:
            p.add_argument("--bounds")
            p.add_argument("--pop", type=int)
            p.add_argument("--gens", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--objective", choices=["sharpe", "total_return"])
            p.add_argument("--workers", type=int)

    p = sub.add_parser("run", help="the whole pipeline into one run directory")
    p.add_argument("--input")
    p.add_argument("--source-period", type=int)
    p.add_argument("--period", type=int)
    p.add_argument("--d", type=_parse_d)
    p.add_argument("--tau", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument(
        "--optimize",
        action="store_true",
        help="tune pa..pd on the training span first",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="parent directory for run directories")
    p.add_argument("--run-dir", help="exact run directory")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write seeded synthetic bars")
    p.add_argument("--kind", choices=["random_walk", "gbm", "ar1"], default="gbm")
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument(
        "--param", action="append", help="process parameter, e.g. sigma=0.002"
    )
    p.add_argument("--period", type=int, help="bar period in minutes")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (FfdlabError, ValueError, OSError) as e:
        logger.error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
