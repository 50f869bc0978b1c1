"""CSV layouts written and read by the command-line tools.

Floats are written with ``repr`` so files round-trip exactly and repeated runs
are byte-identical.  Percent columns are converted from fractions only here.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from .experiment import DeltaSummary, RunRecord
from .optimizer import Portfolio

RESULTS_HEADER = ["run", "model", "sharpe", "risk_pct", "return_pct", "mean_esg", "objective", "converged"]
SUMMARY_HEADER = ["runs", "sharpe_delta_pct", "risk_delta_pct", "return_delta_pct", "esg_delta_pct"]
WEIGHTS_HEADER = ["ticker", "esg_score", "mv_weight_pct", "esg_mv_weight_pct"]
FORECAST_HEADER = ["ticker", "date", "point", "low", "high"]
METRICS_HEADER = ["ticker", "model", "mase", "rmsse", "ci_low", "ci_high"]
TEST_PRED_HEADER = ["ticker", "date", "actual", "rf", "rf_low", "rf_high", "naive"]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_rows(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(header)
        for row in rows:
            w.writerow([cell if isinstance(cell, str) else fmt(cell) for cell in row])


def portfolio_row(run: int, p: Portfolio) -> list:
    return [
        run,
        p.model,
        p.sharpe,
        100.0 * p.risk_annual,
        100.0 * p.return_annual,
        p.esg_mean,
        p.objective_value,
        p.converged,
    ]


def write_results(path, records: Sequence[RunRecord]) -> None:
    rows = []
    for r in records:
        if r.ok:
            rows.append(portfolio_row(r.run_index, r.mv))
            rows.append(portfolio_row(r.run_index, r.esg_mv))
    write_rows(path, RESULTS_HEADER, rows)


def write_summary(path, summary: DeltaSummary) -> None:
    write_rows(path, SUMMARY_HEADER, [[
        summary.n_runs,
        summary.sharpe_delta_pct,
        summary.risk_delta_pct,
        summary.return_delta_pct,
        summary.esg_delta_pct,
    ]])


def write_weights(path, mv: Portfolio, esg_mv: Portfolio, esg_scores: Sequence[float]) -> None:
    if mv.symbols != esg_mv.symbols:
        raise ValueError("portfolios cover different symbols")
    order = sorted(range(len(mv.symbols)), key=lambda i: (esg_scores[i], mv.symbols[i]))
    write_rows(path, WEIGHTS_HEADER, (
        [mv.symbols[i], esg_scores[i], 100.0 * mv.weights[i], 100.0 * esg_mv.weights[i]] for i in order
    ))


def read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_forecasts(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Ticker to ``(dates, point forecasts)`` from a forecast CSV."""
    grouped: dict[str, list] = defaultdict(list)
    for row in read_rows(path):
        grouped[row["ticker"]].append((np.datetime64(row["date"], "D"), float(row["point"])))
    out = {}
    for ticker, items in grouped.items():
        items.sort()
        out[ticker] = (
            np.array([d for d, _ in items], dtype="datetime64[D]"),
            np.array([v for _, v in items], dtype=np.float64),
        )
    return out


def format_results_table(rows: Sequence[dict[str, str]]) -> str:
    """Plain-text table in the run / model / Sharpe / risk / return / ESG layout."""
    lines = [f"{'Run':>4}  {'Model':<7} {'Sharpe':>8} {'Risk %':>8} {'Return %':>9} {'Mean ESG':>9}"]
    last_run = None
    for row in rows:
        run = row["run"] if row["run"] != last_run else ""
        last_run = row["run"]
        lines.append(
            f"{run:>4}  {row['model']:<7} {float(row['sharpe']):8.3f} {float(row['risk_pct']):8.3f} "
            f"{float(row['return_pct']):9.3f} {float(row['mean_esg']):9.3f}"
        )
    return "\n".join(lines)


def format_summary(row: dict[str, str]) -> str:
    def pct(key):
        return "undefined" if row[key] == "" else f"{float(row[key]):+.2f}%"

    return (
        f"ESG-MV vs MV over {row['runs']} runs: Sharpe {pct('sharpe_delta_pct')}, "
        f"risk {pct('risk_delta_pct')}, return {pct('return_delta_pct')}, "
        f"mean ESG {pct('esg_delta_pct')}"
    )


def format_metrics_table(rows: Sequence[dict[str, str]]) -> str:
    lines = [f"{'Ticker':<8} {'Model':<6} {'MASE':>10} {'RMSSE':>10}  Confidence interval"]
    for row in rows:
        beats = " *" if float(row["mase"]) < 1.0 else ""
        lines.append(
            f"{row['ticker']:<8} {row['model']:<6} {float(row['mase']):10.4f} {float(row['rmsse']):10.4f}  "
            f"({float(row['ci_low']):.4f}, {float(row['ci_high']):.4f}){beats}"
        )
    lines.append("* scaled error below one: beats the in-sample one-step naive forecast")
    return "\n".join(lines)

