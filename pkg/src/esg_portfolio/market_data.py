"""Price and ESG ingestion, universe filtering and daily return statistics.

Price files come in two layouts, detected from the header:

* wide: ``date,<TICKER1>,<TICKER2>,...`` with one row per trading day,
* long: one row per (date, ticker) with an adjusted-close column, e.g. the
  Yahoo Finance ETF dump (``price_date,fund_symbol,open,...,adj_close,...``).

Empty cells are missing observations.  Within the date window an ETF needs a
minimum share of native observations to survive; the remaining gaps are
forward-filled and then back-filled.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import os
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = (dt.date(2011, 11, 30), dt.date(2021, 11, 30))
DEFAULT_MIN_COVERAGE = 0.95

ESG_MIN, ESG_MAX = 0.0, 10.0

_DATE_ALIASES = ("date", "price_date", "trading_date")
_TICKER_ALIASES = ("ticker", "fund_symbol", "symbol")
_ADJ_CLOSE_ALIASES = ("adj_close", "adjusted_close", "adj_close_price", "adjclose")
_ESG_SCORE_ALIASES = ("esg_score", "esg")


class MarketDataError(ValueError):
    """Base class for ingestion failures."""


class MissingFileError(MarketDataError, FileNotFoundError):
    pass


class EmptyInputError(MarketDataError):
    pass


class DateParseError(MarketDataError):
    pass


class PriceParseError(MarketDataError):
    pass


class EmptyResultError(MarketDataError):
    pass


class DuplicateTickerError(MarketDataError):
    pass


class ScoreRangeError(MarketDataError):
    pass


class MissingColumnError(MarketDataError):
    pass


class EmptyIntersectionError(MarketDataError):
    pass


class InsufficientDataError(MarketDataError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PriceTable:
    """Adjusted closes, one row per ETF and one column per trading day."""

    symbols: tuple[str, ...]
    dates: np.ndarray  # datetime64[D], strictly increasing
    prices: np.ndarray  # float64, shape (len(symbols), len(dates))

    def __post_init__(self):
        symbols = tuple(str(s) for s in self.symbols)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        prices = np.asarray(self.prices, dtype=np.float64)
        if len(set(symbols)) != len(symbols):
            raise DuplicateTickerError("duplicate symbols in price table")
        if dates.ndim != 1 or (dates.size > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D"))):
            raise DateParseError("dates must be strictly increasing")
        if prices.shape != (len(symbols), dates.size):
            raise PriceParseError(
                f"price matrix has shape {prices.shape}, expected {(len(symbols), dates.size)}"
            )
        if prices.size and not (np.all(np.isfinite(prices)) and np.all(prices > 0)):
            raise PriceParseError("prices must be finite and strictly positive")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "prices", _frozen(prices))

    @property
    def shape(self) -> tuple[int, int]:
        return self.prices.shape

    def series(self, symbol: str) -> np.ndarray:
        return self.prices[self.symbols.index(symbol)]

    def select(self, symbols: Iterable[str]) -> PriceTable:
        """Sub-table over ``symbols`` in the order given."""
        symbols = list(symbols)
        pos = {s: i for i, s in enumerate(self.symbols)}
        missing = [s for s in symbols if s not in pos]
        if missing:
            raise KeyError(f"unknown symbols: {missing[:5]}")
        rows = [pos[s] for s in symbols]
        return PriceTable(tuple(symbols), self.dates, self.prices[rows])

    def date_strings(self) -> list[str]:
        return [str(d) for d in self.dates]

    def equals(self, other: PriceTable) -> bool:
        return (
            self.symbols == other.symbols
            and np.array_equal(self.dates, other.dates)
            and np.array_equal(self.prices, other.prices)
        )


@dataclass(frozen=True)
class EsgTable:
    """ESG score per ticker, each within [0, 10].  A score of 0 is a real score."""

    entries: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for ticker, score in dict(self.entries).items():
            score = float(score)
            if not (ESG_MIN <= score <= ESG_MAX):
                raise ScoreRangeError(f"ESG score {score} for {ticker} outside [0, 10]")
            clean[str(ticker)] = score
        object.__setattr__(self, "entries", MappingProxyType(clean))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, ticker: object) -> bool:
        return ticker in self.entries

    def __getitem__(self, ticker: str) -> float:
        return self.entries[ticker]

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(self.entries)

    def scores(self, symbols: Sequence[str]) -> np.ndarray:
        return np.array([self.entries[s] for s in symbols], dtype=np.float64)

    def restrict(self, symbols: Iterable[str]) -> EsgTable:
        return EsgTable({s: self.entries[s] for s in symbols if s in self.entries})


@dataclass(frozen=True, eq=False)
class ReturnsPanel:
    symbols: tuple[str, ...]
    dates: np.ndarray  # dates of the later price in each return pair
    returns: np.ndarray
    mean_daily: np.ndarray
    cov_daily: np.ndarray


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------


def _norm_header(name: str) -> str:
    return re.sub(r"[\s\-]+", "_", name.strip().lower().lstrip("﻿"))


def _find_column(header: Sequence[str], aliases: Sequence[str]) -> int | None:
    for alias in aliases:
        if alias in header:
            return header.index(alias)
    return None


def _parse_date(text: str, *, where: str) -> np.datetime64:
    try:
        return np.datetime64(dt.date.fromisoformat(text.strip()), "D")
    except ValueError as exc:
        raise DateParseError(f"unparseable date {text!r} ({where})") from exc


def _parse_price(text: str, *, where: str) -> float:
    text = text.strip()
    if not text:
        return math.nan
    try:
        value = float(text)
    except ValueError as exc:
        raise PriceParseError(f"non-numeric price {text!r} ({where})") from exc
    if not math.isfinite(value) or value <= 0:
        raise PriceParseError(f"price must be finite and positive, got {text!r} ({where})")
    return value


def _to_date(value) -> np.datetime64:
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, str):
        return _parse_date(value, where="window")
    return np.datetime64(value, "D")


def parse_window(text: str) -> tuple[dt.date, dt.date]:
    """Parse ``START:END`` (ISO dates); either side may be left empty."""
    start, sep, end = text.partition(":")
    if not sep:
        raise ValueError(f"window must look like START:END, got {text!r}")
    lo = dt.date.fromisoformat(start) if start else dt.date.min
    hi = dt.date.fromisoformat(end) if end else dt.date.max
    if lo > hi:
        raise ValueError(f"window start {lo} is after end {hi}")
    return lo, hi


def _read_rows(path: str | os.PathLike) -> list[list[str]]:
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if any(cell.strip() for cell in row)]
    return rows


def _read_wide(header, rows, path):
    date_col = _find_column(header, _DATE_ALIASES)
    if date_col is None:
        raise MissingColumnError(f"{path}: no date column in header")
    dates, values = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise PriceParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        dates.append(_parse_date(row[date_col], where=f"{path}:{lineno}"))
        values.append(
            [_parse_price(c, where=f"{path}:{lineno}") for i, c in enumerate(row) if i != date_col]
        )
    prices = np.array(values, dtype=np.float64).reshape(len(rows), len(header) - 1).T
    return np.array(dates, dtype="datetime64[D]"), prices


def _read_long(header, rows, path, date_col, ticker_col, price_col):
    cells: dict[tuple[np.datetime64, str], float] = {}
    symbols: set[str] = set()
    for lineno, row in enumerate(rows, start=2):
        where = f"{path}:{lineno}"
        if len(row) <= max(date_col, ticker_col, price_col):
            raise PriceParseError(f"{where}: short row")
        day = _parse_date(row[date_col], where=where)
        ticker = row[ticker_col].strip()
        key = (day, ticker)
        if key in cells:
            raise PriceParseError(f"{where}: duplicate observation for {ticker} on {day}")
        cells[key] = _parse_price(row[price_col], where=where)
        symbols.add(ticker)
    dates = np.array(sorted({d for d, _ in cells}), dtype="datetime64[D]")
    col = {d: j for j, d in enumerate(dates)}
    sym = sorted(symbols)
    row_of = {s: i for i, s in enumerate(sym)}
    prices = np.full((len(sym), dates.size), np.nan)
    for (day, ticker), value in cells.items():
        prices[row_of[ticker], col[day]] = value
    return sym, dates, prices


def _fill(row: np.ndarray) -> np.ndarray:
    out = row.copy()
    valid = ~np.isnan(out)
    idx = np.where(valid, np.arange(out.size), 0)
    np.maximum.accumulate(idx, out=idx)
    out = out[idx]
    first = np.argmax(valid)
    out[:first] = out[first]
    return out


def load_prices(
    path: str | os.PathLike,
    window: tuple | None = DEFAULT_WINDOW,
    min_coverage: float = DEFAULT_MIN_COVERAGE,
) -> PriceTable:
    """Load adjusted closing prices from a wide or long CSV file.

    ``window`` is an inclusive ``(start, end)`` pair; ``None`` keeps every date.
    ETFs whose native coverage inside the window is below ``min_coverage`` are
    dropped before gaps are forward- then back-filled.
    """
    if not 0.0 <= min_coverage <= 1.0:
        raise ValueError("min_coverage must lie in [0, 1]")
    rows = _read_rows(path)
    if not rows:
        raise EmptyInputError(f"empty input: {path}")
    header = [_norm_header(h) for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyInputError(f"empty input: {path} has a header but no rows")

    date_col = _find_column(header, _DATE_ALIASES)
    ticker_col = _find_column(header, _TICKER_ALIASES)
    price_col = _find_column(header, _ADJ_CLOSE_ALIASES)
    if date_col is not None and ticker_col is not None and price_col is not None:
        symbols, dates, prices = _read_long(header, body, path, date_col, ticker_col, price_col)
    else:
        raw_header = [h.strip().lstrip("﻿") for h in rows[0]]
        dates, prices = _read_wide(header, body, path)
        symbols = [h for i, h in enumerate(raw_header) if i != date_col]
        order = np.argsort(dates, kind="stable")
        if np.any(np.diff(dates[order]) == np.timedelta64(0, "D")):
            raise DateParseError(f"{path}: duplicate dates")
        dates, prices = dates[order], prices[:, order]

    if len(set(symbols)) != len(symbols):
        raise DuplicateTickerError(f"{path}: duplicate ticker columns")

    if window is not None:
        lo, hi = _to_date(window[0]), _to_date(window[1])
        keep = (dates >= lo) & (dates <= hi)
        dates, prices = dates[keep], prices[:, keep]
    if dates.size == 0:
        raise EmptyResultError(f"empty result: no trading days of {path} fall inside the window")

    coverage = np.mean(~np.isnan(prices), axis=1)
    keep = coverage >= min_coverage
    keep &= coverage > 0
    dropped = [s for s, k in zip(symbols, keep) if not k]
    if dropped:
        logger.info("dropping %d ETFs below %.0f%% coverage", len(dropped), 100 * min_coverage)
    symbols = [s for s, k in zip(symbols, keep) if k]
    if not symbols:
        raise EmptyResultError(f"empty result: no ETF in {path} meets the coverage requirement")
    prices = np.vstack([_fill(r) for r in prices[keep]])
    return PriceTable(tuple(symbols), dates, prices)


def load_esg(path: str | os.PathLike) -> EsgTable:
    """Read ``ticker,esg_score`` rows; other columns are ignored.

    Rows with an empty score carry no ESG record and are skipped.
    """
    rows = _read_rows(path)
    if not rows:
        return EsgTable({})
    header = [_norm_header(h) for h in rows[0]]
    ticker_col = _find_column(header, _TICKER_ALIASES)
    score_col = _find_column(header, _ESG_SCORE_ALIASES)
    if ticker_col is None:
        raise MissingColumnError(f"{path}: no ticker column")
    if score_col is None:
        raise MissingColumnError(f"{path}: no ESG score column")
    entries: dict[str, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        ticker = row[ticker_col].strip() if ticker_col < len(row) else ""
        text = row[score_col].strip() if score_col < len(row) else ""
        if not ticker:
            raise MissingColumnError(f"{path}:{lineno}: empty ticker")
        if ticker in entries:
            raise DuplicateTickerError(f"{path}:{lineno}: duplicate ticker {ticker}")
        if not text:
            continue
        try:
            score = float(text)
        except ValueError as exc:
            raise ScoreRangeError(f"{path}:{lineno}: non-numeric ESG score {text!r}") from exc
        if not (ESG_MIN <= score <= ESG_MAX):
            raise ScoreRangeError(f"{path}:{lineno}: ESG score {score} for {ticker} outside [0, 10]")
        entries[ticker] = score
    return EsgTable(entries)


def join_universe(prices: PriceTable, esg: EsgTable) -> tuple[PriceTable, EsgTable]:
    """Keep only ETFs that have both prices and an ESG record."""
    common = [s for s in prices.symbols if s in esg]
    if not common:
        raise EmptyIntersectionError("no ETF has both prices and an ESG score")
    return prices.select(common), esg.restrict(common)


def compute_returns(prices: PriceTable) -> ReturnsPanel:
    """Simple daily returns with their mean and sample covariance (ddof=1).

    With a single return the covariance is reported as zeros.
    """
    p = prices.prices
    if p.shape[1] < 2:
        raise InsufficientDataError("at least two trading days are needed for returns")
    rets = p[:, 1:] / p[:, :-1] - 1.0
    mean = rets.mean(axis=1)
    n_obs = rets.shape[1]
    if n_obs < 2:
        cov = np.zeros((p.shape[0], p.shape[0]))
    else:
        centred = rets - mean[:, None]
        cov = centred @ centred.T / (n_obs - 1)
        cov = 0.5 * (cov + cov.T)
    return ReturnsPanel(
        symbols=prices.symbols,
        dates=_frozen(prices.dates[1:]),
        returns=_frozen(rets),
        mean_daily=_frozen(mean),
        cov_daily=_frozen(cov),
    )


def write_prices(table: PriceTable, path: str | os.PathLike) -> None:
    """Write the canonical wide CSV; floats use ``repr`` so reloads are bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *table.symbols])
        for j, day in enumerate(table.date_strings()):
            writer.writerow([day, *(repr(float(v)) for v in table.prices[:, j])])


def write_esg(table: EsgTable, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["ticker", "esg_score"])
        for ticker, score in table.entries.items():
            writer.writerow([ticker, repr(score)])
