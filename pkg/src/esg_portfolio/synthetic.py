"""Deterministic synthetic ETF price and ESG files for tests and demos.

Daily returns follow a one-factor model with positive drift, so most random
100-ETF markets have a positive maximum Sharpe ratio.

    python -m esg_portfolio.synthetic --out fixture/ --etfs 200 --days 300
"""

from __future__ import annotations

import argparse
import os
from pathlib import Path

import numpy as np

from .market_data import EsgTable, PriceTable, write_esg, write_prices


def make_prices(n_etfs: int = 200, n_days: int = 300, seed: int = 2021,
                start: str = "2020-01-02") -> PriceTable:
    rng = np.random.default_rng(seed)
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(n_days), roll="forward")
    drift = rng.normal(4e-4, 4e-4, n_etfs)
    beta = rng.uniform(0.3, 1.5, n_etfs)
    idio = rng.uniform(0.004, 0.02, n_etfs)
    factor = rng.normal(0.0, 0.008, n_days - 1)
    shocks = rng.normal(0.0, 1.0, (n_etfs, n_days - 1)) * idio[:, None]
    rets = drift[:, None] + beta[:, None] * factor[None, :] + shocks
    start_px = rng.uniform(15.0, 300.0, n_etfs)
    log_px = np.log(start_px)[:, None] + np.concatenate(
        [np.zeros((n_etfs, 1)), np.cumsum(np.log1p(rets), axis=1)], axis=1
    )
    prices = np.round(np.exp(log_px), 4)
    symbols = tuple(f"E{i:04d}" for i in range(n_etfs))
    return PriceTable(symbols, dates, prices)


def make_esg(symbols, n_scored: int | None = None, seed: int = 2021, zero_share: float = 0.1) -> EsgTable:
    """Scores in [0, 10] for the first ``n_scored`` symbols (all by default)."""
    rng = np.random.default_rng(seed + 1)
    symbols = list(symbols)
    n_scored = len(symbols) if n_scored is None else n_scored
    scores = np.round(rng.uniform(0.0, 10.0, n_scored), 2)
    scores[rng.random(n_scored) < zero_share] = 0.0
    return EsgTable(dict(zip(symbols[:n_scored], scores.tolist())))


def write_fixture(out: str | os.PathLike, n_etfs: int = 200, n_days: int = 300, n_scored: int | None = None,
                  seed: int = 2021) -> tuple[Path, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    prices = make_prices(n_etfs, n_days, seed)
    esg = make_esg(prices.symbols, n_scored, seed)
    prices_path, esg_path = out / "prices.csv", out / "esg.csv"
    write_prices(prices, prices_path)
    write_esg(esg, esg_path)
    return prices_path, esg_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--etfs", type=int, default=200)
    parser.add_argument("--days", type=int, default=300)
    parser.add_argument("--scored", type=int, default=None, help="how many ETFs get an ESG record")
    parser.add_argument("--seed", type=int, default=2021)
    args = parser.parse_args(argv)
    paths = write_fixture(args.out, args.etfs, args.days, args.scored, args.seed)
    print(*paths, sep="\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
