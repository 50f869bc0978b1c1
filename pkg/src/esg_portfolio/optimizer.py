"""Long-only maximum-Sharpe and ESG-weighted maximum-Sharpe allocation.

Both problems live on the simplex ``sum(w) = 1, 0 <= w <= 1``.  The plain
model maximises ``S(w) = (w.mu - rf) / sqrt(w' C w)``; the ESG model maximises
``(w.esg) * S(w)``.  Each is solved with SLSQP from several starting points
(equal weights plus seeded Dirichlet draws) and the best point is kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .market_data import EsgTable, ReturnsPanel

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
PSD_TOL = 1e-10
SIMPLEX_TOL = 1e-8
_TIE_TOL = 1e-12
_VAR_FLOOR = 1e-300

MV = "MV"
ESG_MV = "ESG-MV"


class OptimizerError(ValueError):
    pass


class NonPSDCovarianceError(OptimizerError):
    pass


class DegenerateMarketError(OptimizerError):
    pass


@dataclass(frozen=True, eq=False)
class MarketInputs:
    symbols: tuple[str, ...]
    mu_annual: np.ndarray
    cov_annual: np.ndarray
    esg: np.ndarray
    risk_free: float = 0.0

    def __post_init__(self):
        n = len(self.symbols)
        mu = np.asarray(self.mu_annual, dtype=np.float64)
        cov = np.asarray(self.cov_annual, dtype=np.float64)
        esg = np.asarray(self.esg, dtype=np.float64)
        if mu.shape != (n,) or esg.shape != (n,) or cov.shape != (n, n):
            raise OptimizerError(
                f"inconsistent market dimensions: {n} symbols, mu {mu.shape}, esg {esg.shape}, cov {cov.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov)) and np.all(np.isfinite(esg))):
            raise OptimizerError("market inputs must be finite")
        if n and not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
            raise NonPSDCovarianceError("covariance matrix is not symmetric")
        if n and np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -PSD_TOL:
            raise NonPSDCovarianceError("covariance matrix is not positive semidefinite")
        for name, arr in (("mu_annual", mu), ("cov_annual", cov), ("esg", esg)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "symbols", tuple(self.symbols))
        object.__setattr__(self, "risk_free", float(self.risk_free))

    @property
    def n_assets(self) -> int:
        return len(self.symbols)

    def subset(self, symbols: Sequence[str]) -> MarketInputs:
        pos = {s: i for i, s in enumerate(self.symbols)}
        idx = [pos[s] for s in symbols]
        return MarketInputs(
            tuple(symbols), self.mu_annual[idx], self.cov_annual[np.ix_(idx, idx)], self.esg[idx], self.risk_free
        )


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Optimised (or evaluated) weights with annualised statistics.

    ``objective_value`` is the maximised quantity: the Sharpe ratio for the
    plain model, mean ESG times Sharpe for the ESG model.
    """

    symbols: tuple[str, ...]
    weights: np.ndarray
    return_annual: float
    risk_annual: float
    sharpe: float
    esg_mean: float
    objective_value: float
    model: str = MV
    converged: bool = True
    iterations: int = 0
    warning: str | None = None


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 500
    tolerance: float = 1e-9
    multistarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.tolerance <= 0 or self.multistarts < 1 or self.seed < 0:
            raise ValueError("solver settings must be positive")


def annualize(panel: ReturnsPanel, esg: EsgTable | Sequence[float], risk_free: float = 0.0,
              periods: int = TRADING_DAYS) -> MarketInputs:
    if not panel.symbols:
        raise OptimizerError("empty returns panel")
    if isinstance(esg, EsgTable):
        missing = [s for s in panel.symbols if s not in esg]
        if missing:
            raise OptimizerError(f"no ESG score for {missing[:5]}")
        scores = esg.scores(panel.symbols)
    else:
        scores = np.asarray(esg, dtype=np.float64)
    return MarketInputs(
        symbols=panel.symbols,
        mu_annual=periods * panel.mean_daily,
        cov_annual=periods * panel.cov_daily,
        esg=scores,
        risk_free=risk_free,
    )


def _sharpe(excess: float, risk: float) -> float:
    if risk > 0:
        return excess / risk
    if excess == 0:
        return math.nan
    return math.copysign(math.inf, excess)


def portfolio_stats(weights, market: MarketInputs, model: str = MV, **extra) -> Portfolio:
    """Annualised return, risk, Sharpe and mean ESG of ``weights``.

    A zero-risk portfolio gets Sharpe ``nan`` (no excess return) or ``+-inf``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (market.n_assets,):
        raise OptimizerError(f"weights have shape {w.shape}, market has {market.n_assets} assets")
    ret = float(w @ market.mu_annual)
    risk = math.sqrt(max(float(w @ market.cov_annual @ w), 0.0))
    sharpe = _sharpe(ret - market.risk_free, risk)
    esg_mean = float(w @ market.esg)
    objective = sharpe if model == MV else esg_mean * sharpe
    w = w.copy()
    w.flags.writeable = False
    return Portfolio(market.symbols, w, ret, risk, sharpe, esg_mean, objective, model, **extra)


def _neg_sharpe(market: MarketInputs) -> tuple[Callable, Callable]:
    mu, cov, rf = market.mu_annual, market.cov_annual, market.risk_free

    def f(w):
        var = max(w @ cov @ w, _VAR_FLOOR)
        return -(w @ mu - rf) / math.sqrt(var)

    def grad(w):
        cw = cov @ w
        var = max(w @ cw, _VAR_FLOOR)
        sd = math.sqrt(var)
        excess = w @ mu - rf
        return -(mu / sd - excess * cw / (var * sd))

    return f, grad


def _neg_esg_sharpe(market: MarketInputs) -> tuple[Callable, Callable]:
    mu, cov, rf, esg = market.mu_annual, market.cov_annual, market.risk_free, market.esg

    def f(w):
        var = max(w @ cov @ w, _VAR_FLOOR)
        return -(w @ esg) * (w @ mu - rf) / math.sqrt(var)

    def grad(w):
        cw = cov @ w
        var = max(w @ cw, _VAR_FLOOR)
        sd = math.sqrt(var)
        excess = w @ mu - rf
        e = w @ esg
        sharpe = excess / sd
        d_sharpe = mu / sd - excess * cw / (var * sd)
        return -(esg * sharpe + e * d_sharpe)

    return f, grad


def objective_functions(market: MarketInputs, model: str = MV) -> tuple[Callable, Callable]:
    """Negated objective and its analytic gradient, as handed to the solver."""
    if model == MV:
        return _neg_sharpe(market)
    if model == ESG_MV:
        return _neg_esg_sharpe(market)
    raise ValueError(f"unknown model {model!r}")


def initial_points(n_assets: int, config: SolverConfig) -> list[np.ndarray]:
    rng = np.random.default_rng(config.seed)
    starts = [np.full(n_assets, 1.0 / n_assets)]
    for _ in range(config.multistarts - 1):
        starts.append(rng.dirichlet(np.ones(n_assets)))
    return starts


def _on_simplex(x) -> np.ndarray:
    w = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    total = w.sum()
    if total <= 0:
        return np.full(w.size, 1.0 / w.size)
    return w / total


def _better(cand: Portfolio, best: Portfolio | None) -> bool:
    if best is None:
        return True
    if cand.objective_value > best.objective_value + _TIE_TOL:
        return True
    if cand.objective_value < best.objective_value - _TIE_TOL:
        return False
    if cand.risk_annual != best.risk_annual:
        return cand.risk_annual < best.risk_annual
    return tuple(cand.weights) < tuple(best.weights)


def _solve(market: MarketInputs, config: SolverConfig, model: str,
           extra_starts: Sequence[np.ndarray] = ()) -> Portfolio:
    n = market.n_assets
    if n < 1:
        raise OptimizerError("market has no assets")
    if n == 1:
        return portfolio_stats(np.ones(1), market, model, converged=True, iterations=0)
    if np.all(np.diag(market.cov_annual) == 0) and np.all(market.mu_annual == market.risk_free):
        raise DegenerateMarketError("every asset has zero risk and zero excess return")

    f, grad = objective_functions(market, model)
    constraint = {"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones_like(w)}
    bounds = [(0.0, 1.0)] * n
    options = {"maxiter": config.max_iterations, "ftol": config.tolerance}

    best = None
    for x0 in [*initial_points(n, config), *(_on_simplex(s) for s in extra_starts)]:
        res = minimize(f, x0, jac=grad, method="SLSQP", bounds=bounds, constraints=[constraint], options=options)
        w = _on_simplex(res.x)
        cand = portfolio_stats(w, market, model, converged=bool(res.success), iterations=int(res.nit))
        if not math.isfinite(cand.objective_value):
            continue
        if _better(cand, best):
            best = cand
    if best is None:
        raise DegenerateMarketError("no start produced a finite objective")
    if not best.sharpe > 0:
        msg = f"{model} optimum has non-positive Sharpe ratio {best.sharpe:.4g}"
        logger.warning(msg)
        best = Portfolio(**{**best.__dict__, "warning": msg})
    return best


def optimize_mv(market: MarketInputs, config: SolverConfig = SolverConfig(),
                extra_starts: Sequence[np.ndarray] = ()) -> Portfolio:
    """Maximum-Sharpe long-only portfolio."""
    return _solve(market, config, MV, extra_starts)


def optimize_esg_mv(market: MarketInputs, config: SolverConfig = SolverConfig(),
                    extra_starts: Sequence[np.ndarray] = ()) -> Portfolio:
    """Long-only portfolio maximising mean ESG score times Sharpe ratio."""
    return _solve(market, config, ESG_MV, extra_starts)
