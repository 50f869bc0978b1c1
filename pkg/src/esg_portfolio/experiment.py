"""Randomised-market comparison of the plain and ESG-weighted Sharpe optimisers."""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .market_data import EsgTable, PriceTable, compute_returns
from .optimizer import (
    MarketInputs,
    Portfolio,
    SolverConfig,
    annualize,
    optimize_esg_mv,
    optimize_mv,
)

logger = logging.getLogger(__name__)

DEFAULT_RUNS = 12
DEFAULT_MARKET_SIZE = 100


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RunRecord:
    run_index: int
    market_symbols: tuple[str, ...]
    mv: Portfolio | None
    esg_mv: Portfolio | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class DeltaSummary:
    """Mean percentage change from the MV to the ESG-MV portfolio.

    A field is ``None`` when some run has a zero MV value for that metric.
    """

    sharpe_delta_pct: float | None
    risk_delta_pct: float | None
    return_delta_pct: float | None
    esg_delta_pct: float | None
    n_runs: int


def _sort_key(seed: int, symbol: str) -> bytes:
    return hashlib.blake2b(f"{seed}\x1f{symbol}".encode("utf-8"), digest_size=16).digest()


def sample_market(universe: Sequence[str], n: int, seed: int) -> list[str]:
    """Uniform ``n``-subset of ``universe`` without replacement, sorted.

    Each symbol gets a pseudo-random key derived from ``(seed, symbol)`` and the
    ``n`` smallest keys win, so adding a symbol that does not make the cut
    leaves the draw unchanged.
    """
    universe = list(dict.fromkeys(universe))
    if n < 0:
        raise ExperimentError("market size must be non-negative")
    if n > len(universe):
        raise ExperimentError(f"market size {n} exceeds universe of {len(universe)} ETFs")
    ranked = sorted(universe, key=lambda s: (_sort_key(seed, s), s))
    return sorted(ranked[:n])


def extend_with_forecasts(prices: PriceTable, forecasts: Mapping[str, tuple]) -> PriceTable:
    """Append forecast closes to the historical ones.

    ``forecasts`` maps ticker to ``(dates, values)``.  ETFs without a forecast
    are dropped; every forecast must cover the same dates, all after the last
    historical day.
    """
    keep = [s for s in prices.symbols if s in forecasts]
    if not keep:
        raise ExperimentError("no ETF in the dataset has a forecast")
    dropped = len(prices.symbols) - len(keep)
    if dropped:
        logger.warning("%d ETFs without forecasts left out of the universe", dropped)
    dates = np.asarray(forecasts[keep[0]][0], dtype="datetime64[D]")
    if dates.size and dates[0] <= prices.dates[-1]:
        raise ExperimentError("forecast dates must follow the historical window")
    rows = []
    for s in keep:
        f_dates, values = forecasts[s]
        if not np.array_equal(np.asarray(f_dates, dtype="datetime64[D]"), dates):
            raise ExperimentError(f"forecast dates for {s} differ from those of {keep[0]}")
        rows.append(np.concatenate([prices.series(s), np.asarray(values, dtype=np.float64)]))
    return PriceTable(tuple(keep), np.concatenate([prices.dates, dates]), np.vstack(rows))


def market_inputs(prices: PriceTable, esg: EsgTable, symbols: Sequence[str],
                  risk_free: float = 0.0) -> MarketInputs:
    panel = compute_returns(prices.select(symbols))
    return annualize(panel, esg, risk_free)


def run_single(run_index: int, prices: PriceTable, esg: EsgTable, n: int, seed: int,
               solver_config: SolverConfig, risk_free: float = 0.0) -> RunRecord:
    symbols = tuple(sample_market(prices.symbols, n, seed))
    try:
        market = market_inputs(prices, esg, symbols, risk_free)
        mv = optimize_mv(market, solver_config)
        # the MV optimum is a feasible start for the ESG objective as well
        esg_mv = optimize_esg_mv(market, solver_config, extra_starts=[mv.weights])
    except ValueError as exc:
        logger.error("run %d failed: %s", run_index, exc)
        return RunRecord(run_index, symbols, None, None, error=str(exc))
    return RunRecord(run_index, symbols, mv, esg_mv)


def run_experiment(prices: PriceTable, esg: EsgTable, runs: int = DEFAULT_RUNS,
                   n: int = DEFAULT_MARKET_SIZE, seed_base: int = 0,
                   solver_config: SolverConfig = SolverConfig(), risk_free: float = 0.0,
                   workers: int = 1) -> list[RunRecord]:
    """Optimise ``runs`` random markets; run ``k`` (1-based) samples with ``seed_base + k``."""
    if runs < 1:
        raise ExperimentError("runs must be >= 1")
    if n > len(prices.symbols):
        raise ExperimentError(f"market size {n} exceeds universe of {len(prices.symbols)} ETFs")
    missing = [s for s in prices.symbols if s not in esg]
    if missing:
        raise ExperimentError(f"ETFs without ESG score: {missing[:5]}")

    def one(k):
        return run_single(k, prices, esg, n, seed_base + k, solver_config, risk_free)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(1, runs + 1)))
    else:
        records = [one(k) for k in range(1, runs + 1)]
    return sorted(records, key=lambda r: r.run_index)


def _mean_pct_change(pairs) -> float | None:
    changes = []
    for before, after in pairs:
        if before == 0 or not math.isfinite(before) or not math.isfinite(after):
            return None
        changes.append(100.0 * (after - before) / before)
    return float(np.mean(changes)) if changes else None


def aggregate_deltas(records: Sequence[RunRecord]) -> DeltaSummary:
    good = [r for r in records if r.ok]
    if not good:
        raise ExperimentError("no successful runs to aggregate")

    def delta(attr):
        return _mean_pct_change((getattr(r.mv, attr), getattr(r.esg_mv, attr)) for r in good)

    return DeltaSummary(
        sharpe_delta_pct=delta("sharpe"),
        risk_delta_pct=delta("risk_annual"),
        return_delta_pct=delta("return_annual"),
        esg_delta_pct=delta("esg_mean"),
        n_runs=len(good),
    )

