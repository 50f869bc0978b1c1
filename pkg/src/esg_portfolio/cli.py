"""Command-line entry point.

    esg-portfolio ingest     --prices P --esg E --out DATASET
    esg-portfolio forecast   --dataset DATASET --ticker all --out DIR
    esg-portfolio optimize   --dataset DATASET --market-size 100 --seed 0 --out DIR
    esg-portfolio experiment --dataset DATASET --runs 12 --market-size 100 --seed 0 --out DIR
    esg-portfolio report     --results DIR

Every command writes a ``manifest_<command>.json`` next to its outputs.  Exit
status is 0 on success, 1 on error and 3 when a batch finished with some
per-ETF or per-run failures (listed in the manifest).
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiment import (
    DEFAULT_MARKET_SIZE,
    DEFAULT_RUNS,
    ExperimentError,
    aggregate_deltas,
    extend_with_forecasts,
    market_inputs,
    run_experiment,
    sample_market,
)
from .forecast import (
    ForecastError,
    ForestConfig,
    LagConfig,
    NaiveForecaster,
    RandomForestForecaster,
    split_train_test,
)
from .market_data import (
    DEFAULT_MIN_COVERAGE,
    DEFAULT_WINDOW,
    EsgTable,
    MarketDataError,
    PriceTable,
    join_universe,
    load_esg,
    load_prices,
    parse_window,
    write_esg,
    write_prices,
)
from .metrics import UndefinedScaledError, scaled_error_report
from .optimizer import OptimizerError, SolverConfig, optimize_esg_mv, optimize_mv
from . import reporting

logger = logging.getLogger("esg_portfolio")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 3


class CliError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Run record written beside the outputs: flags, seeds, file digests, failures."""

    def __init__(self, command: str, args: argparse.Namespace):
        config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
                  if k not in ("func", "command")}
        self.data = {
            "tool": "esg-portfolio",
            "version": __version__,
            "command": command,
            "config": config,
            "seeds": {k: v for k, v in config.items() if k == "seed"},
            "inputs": {},
            "outputs": {},
            "failures": [],
            "skipped": [],
            "started": _now(),
        }

    def add_input(self, path: Path) -> None:
        self.data["inputs"][str(path)] = _sha256(path)

    def add_output(self, path: Path) -> None:
        self.data["outputs"][str(path)] = _sha256(path)

    def fail(self, what: str, reason: str) -> None:
        self.data["failures"].append({"item": what, "reason": reason})

    def skip(self, what: str, reason: str) -> None:
        self.data["skipped"].append({"item": what, "reason": reason})

    def write(self, out_dir: Path) -> Path:
        self.data["finished"] = _now()
        path = out_dir / f"manifest_{self.data['command']}.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.data["failures"] else EXIT_OK


# ---------------------------------------------------------------------------
# dataset helpers
# ---------------------------------------------------------------------------


def _dataset_paths(dataset: Path) -> tuple[Path, Path]:
    prices, esg = dataset / "prices.csv", dataset / "esg.csv"
    for p in (prices, esg):
        if not p.exists():
            raise CliError(f"dataset file not found: {p} (run `ingest` first)")
    return prices, esg


def _load_dataset(dataset: Path, manifest: Manifest) -> tuple[PriceTable, EsgTable]:
    prices_path, esg_path = _dataset_paths(dataset)
    manifest.add_input(prices_path)
    manifest.add_input(esg_path)
    prices = load_prices(prices_path, window=None, min_coverage=0.0)
    esg = load_esg(esg_path)
    return join_universe(prices, esg)


def _with_forecasts(prices: PriceTable, args, manifest: Manifest) -> PriceTable:
    if args.no_forecast:
        return prices
    path = Path(args.forecasts) if args.forecasts else args.dataset / "forecast.csv"
    if not path.exists():
        if args.forecasts:
            raise CliError(f"forecast file not found: {path}")
        logger.info("no forecast file at %s; using historical prices only", path)
        return prices
    manifest.add_input(path)
    extended = extend_with_forecasts(prices, reporting.read_forecasts(path))
    for s in sorted(set(prices.symbols) - set(extended.symbols)):
        manifest.skip(s, "no forecast")
    return extended


def future_trading_days(last: np.datetime64, horizon: int) -> np.ndarray:
    """Weekdays after ``last``; exchange holidays are not modelled."""
    return np.busday_offset(np.datetime64(last, "D"), np.arange(1, horizon + 1), roll="backward")


def _solver_config(args) -> SolverConfig:
    return SolverConfig(max_iterations=args.max_iterations, multistarts=args.multistarts, seed=args.seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("ingest", args)
    esg_path, prices_path = Path(args.esg), Path(args.prices)
    for p in (prices_path, esg_path):
        if not p.exists():
            raise CliError(f"input file not found: {p}")
        manifest.add_input(p)
    window = None if args.window in ("", ":", "all") else parse_window(args.window)
    prices = load_prices(prices_path, window=window, min_coverage=args.min_coverage)
    esg = load_esg(esg_path)
    joined_prices, joined_esg = join_universe(prices, esg)
    for path, writer, table in (
        (out / "prices.csv", write_prices, joined_prices),
        (out / "esg.csv", write_esg, joined_esg),
    ):
        writer(table, path)
        manifest.add_output(path)
    manifest.data["counts"] = {
        "priced": len(prices.symbols),
        "esg_records": len(esg),
        "retained": len(joined_prices.symbols),
        "trading_days": int(joined_prices.dates.size),
    }
    manifest.write(out)
    print(f"{len(joined_prices.symbols)} retained of {len(prices.symbols)} priced ETFs "
          f"({len(esg)} ESG records, {joined_prices.dates.size} trading days)")
    return manifest.exit_code


def cmd_forecast(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("forecast", args)
    prices, _ = _load_dataset(args.dataset, manifest)
    if args.ticker == "all":
        tickers = list(prices.symbols)
    else:
        tickers = [t.strip() for t in args.ticker.split(",") if t.strip()]
        unknown = [t for t in tickers if t not in prices.symbols]
        if unknown:
            raise CliError(f"unknown ticker(s): {', '.join(unknown)}")

    lag_config = LagConfig(lags=args.lags, horizon=args.horizon)
    forest_config = ForestConfig(
        n_trees=args.trees,
        max_depth=args.max_depth,
        min_leaf=args.min_leaf,
        feature_fraction=args.feature_fraction,
        bootstrap=not args.no_bootstrap,
        seed=args.seed,
    )
    horizon_dates = [str(d) for d in future_trading_days(prices.dates[-1], args.horizon)]
    forecast_rows, metric_rows, test_rows = [], [], []
    n_ok = 0
    for ticker in tickers:
        series = prices.series(ticker)
        try:
            train, test = split_train_test(series)
            rf = RandomForestForecaster(lag_config, forest_config, n_jobs=args.jobs)
            rf.fit(train)
            rf_test = rf.predict_test(train, test)
            naive_test = NaiveForecaster().predict_test(train, test)
            for name, result in (("RF", rf_test), ("naive", naive_test)):
                try:
                    rep = scaled_error_report(test, result.point, train)
                except UndefinedScaledError as exc:
                    manifest.skip(f"{ticker}/{name}", str(exc))
                    continue
                metric_rows.append([ticker, name, rep.mase, rep.rmsse,
                                    float(np.mean(result.low)), float(np.mean(result.high))])
            test_dates = prices.date_strings()[train.size:]
            for j, day in enumerate(test_dates):
                test_rows.append([ticker, day, test[j], rf_test.point[j], rf_test.low[j],
                                  rf_test.high[j], naive_test.point[j]])
            rf.fit(series)
            fc = rf.forecast(series, args.horizon)
        except (ForecastError, ValueError) as exc:
            logger.error("%s: %s", ticker, exc)
            manifest.fail(ticker, str(exc))
            continue
        n_ok += 1
        for j, day in enumerate(horizon_dates):
            forecast_rows.append([ticker, day, fc.point[j], fc.low[j], fc.high[j]])

    for name, header, rows in (
        ("forecast.csv", reporting.FORECAST_HEADER, forecast_rows),
        ("metrics.csv", reporting.METRICS_HEADER, metric_rows),
        ("test_predictions.csv", reporting.TEST_PRED_HEADER, test_rows),
    ):
        reporting.write_rows(out / name, header, rows)
        manifest.add_output(out / name)
    manifest.write(out)
    print(f"forecast {n_ok}/{len(tickers)} ETFs, {args.horizon} steps each")
    if n_ok == 0:
        return EXIT_ERROR
    return manifest.exit_code


def cmd_optimize(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("optimize", args)
    prices, esg = _load_dataset(args.dataset, manifest)
    prices = _with_forecasts(prices, args, manifest)
    if args.symbols:
        symbols = sorted({s.strip() for s in args.symbols.split(",") if s.strip()})
        unknown = [s for s in symbols if s not in prices.symbols]
        if unknown:
            raise CliError(f"unknown symbol(s): {', '.join(unknown)}")
    elif args.market_size is not None:
        symbols = sample_market(prices.symbols, args.market_size, args.seed)
    else:
        symbols = sorted(prices.symbols)
    market = market_inputs(prices, esg, symbols, args.risk_free)
    config = _solver_config(args)
    mv = optimize_mv(market, config)
    esg_mv = optimize_esg_mv(market, config, extra_starts=[mv.weights])
    reporting.write_rows(out / "results.csv", reporting.RESULTS_HEADER,
                         [reporting.portfolio_row(1, mv), reporting.portfolio_row(1, esg_mv)])
    reporting.write_weights(out / "weights.csv", mv, esg_mv, list(market.esg))
    for name in ("results.csv", "weights.csv"):
        manifest.add_output(out / name)
    manifest.write(out)
    print(reporting.format_results_table(reporting.read_rows(out / "results.csv")))
    return manifest.exit_code


def cmd_experiment(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("experiment", args)
    prices, esg = _load_dataset(args.dataset, manifest)
    prices = _with_forecasts(prices, args, manifest)
    if args.market_size > len(prices.symbols):
        raise CliError(f"market size {args.market_size} exceeds the {len(prices.symbols)}-ETF universe")
    records = run_experiment(prices, esg, runs=args.runs, n=args.market_size, seed_base=args.seed,
                             solver_config=_solver_config(args), risk_free=args.risk_free,
                             workers=args.workers)
    weights_dir = out / "weights"
    weights_dir.mkdir(exist_ok=True)
    width = max(2, len(str(args.runs)))
    for r in records:
        if not r.ok:
            manifest.fail(f"run {r.run_index}", r.error)
            continue
        path = weights_dir / f"run_{r.run_index:0{width}d}.csv"
        reporting.write_weights(path, r.mv, r.esg_mv, list(esg.scores(r.market_symbols)))
        manifest.add_output(path)
    reporting.write_results(out / "results.csv", records)
    manifest.add_output(out / "results.csv")
    if any(r.ok for r in records):
        reporting.write_summary(out / "summary.csv", aggregate_deltas(records))
        manifest.add_output(out / "summary.csv")
    else:
        manifest.write(out)
        raise CliError("every run failed; see the manifest")
    manifest.data["markets"] = {str(r.run_index): list(r.market_symbols) for r in records}
    manifest.write(out)
    print(reporting.format_results_table(reporting.read_rows(out / "results.csv")))
    print(reporting.format_summary(reporting.read_rows(out / "summary.csv")[0]))
    return manifest.exit_code


def cmd_report(args) -> int:
    results = args.results
    shown = False
    if (results / "metrics.csv").exists():
        print(reporting.format_metrics_table(reporting.read_rows(results / "metrics.csv")))
        shown = True
    if (results / "results.csv").exists():
        print(reporting.format_results_table(reporting.read_rows(results / "results.csv")))
        shown = True
    if (results / "summary.csv").exists():
        print(reporting.format_summary(reporting.read_rows(results / "summary.csv")[0]))
        shown = True
    if not shown:
        raise CliError(f"no metrics.csv, results.csv or summary.csv under {results}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_market_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", type=Path, required=True, help="directory written by `ingest`")
    p.add_argument("--forecasts", help="forecast CSV to append (default: DATASET/forecast.csv if present)")
    p.add_argument("--no-forecast", action="store_true", help="optimise on historical prices only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--risk-free", type=float, default=0.0, help="annual risk-free return as a fraction")
    p.add_argument("--multistarts", type=int, default=8)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esg-portfolio", description="ETF forecasting and ESG-aware allocation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    default_window = f"{DEFAULT_WINDOW[0]}:{DEFAULT_WINDOW[1]}"
    p = sub.add_parser("ingest", help="join price and ESG files into a canonical dataset")
    p.add_argument("--prices", required=True)
    p.add_argument("--esg", required=True)
    p.add_argument("--window", default=default_window, help="START:END in ISO dates, or 'all'")
    p.add_argument("--min-coverage", type=float, default=DEFAULT_MIN_COVERAGE)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("forecast", help="random-forest forecasts and scaled errors")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--ticker", default="all", help="ticker, comma-separated tickers, or 'all'")
    p.add_argument("--horizon", type=int, default=42)
    p.add_argument("--lags", type=int, default=20)
    p.add_argument("--trees", type=int, default=10000)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=2)
    p.add_argument("--feature-fraction", type=float, default=1.0 / 3.0)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="threads used to grow trees")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("optimize", help="MV and ESG-MV weights for one market")
    _add_market_flags(p)
    p.add_argument("--symbols", help="comma-separated tickers (default: whole universe)")
    p.add_argument("--market-size", type=int, default=None, help="sample this many ETFs with --seed")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("experiment", help="repeat MV vs ESG-MV over random markets")
    _add_market_flags(p)
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    p.add_argument("--market-size", type=int, default=DEFAULT_MARKET_SIZE)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="print tables from command outputs")
    p.add_argument("--results", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, MarketDataError, ForecastError, OptimizerError, ExperimentError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
