"""Random-forest forecasting of adjusted closes from lagged prices.

Trees are grown greedily on variance reduction.  Each node keeps its rows
ordered by target value and every candidate feature is sorted stably, so the
split search (and each leaf mean) is independent of the input row order.  Split
ties go to the lowest feature index, then the lowest threshold.

Every tree draws its bootstrap sample and its per-node feature subsets from a
private generator keyed on ``(seed, tree_index)``.  Serial and threaded fits
therefore produce the same model, and a forest of ``k`` trees is a prefix of
one with more trees under the same seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from numba import njit

INTERVAL_QUANTILES = (0.025, 0.975)


class ForecastError(ValueError):
    pass


class SeriesTooShortError(ForecastError):
    pass


@dataclass(frozen=True)
class LagConfig:
    lags: int = 20
    horizon: int = 42  # about two months of trading days

    def __post_init__(self):
        if self.lags < 1 or self.horizon < 1:
            raise ValueError("lags and horizon must both be >= 1")


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 10000
    max_depth: int | None = None
    min_leaf: int = 2
    feature_fraction: float = 1.0 / 3.0
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.feature_fraction <= 1.0:
            raise ValueError("feature_fraction must lie in (0, 1]")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def features_per_split(self, n_features: int) -> int:
        return max(1, min(n_features, int(math.floor(self.feature_fraction * n_features + 1e-9))))


# ---------------------------------------------------------------------------
# tree growing and prediction kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _grow_tree(X, y, rows, feature_keys, n_sub, max_depth, min_leaf):
    n = rows.size
    n_features = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)

    order = rows.copy()
    scratch = np.empty(n, np.int64)
    vals = np.empty(n)
    stack = np.empty((cap, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    all_features = np.arange(n_features)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        depth = stack[top, 3]
        m = hi - lo

        total = 0.0
        y_min = np.inf
        y_max = -np.inf
        for k in range(lo, hi):
            v = y[order[k]]
            total += v
            if v < y_min:
                y_min = v
            if v > y_max:
                y_max = v
        mean = total / m
        if mean < y_min:
            mean = y_min
        elif mean > y_max:
            mean = y_max
        value[node] = mean

        if y_min == y_max or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        if n_sub < n_features:
            candidates = np.sort(np.argsort(feature_keys[node])[:n_sub])
        else:
            candidates = all_features

        best_score = -np.inf
        best_feature = -1
        best_threshold = 0.0
        for f in candidates:
            for k in range(m):
                vals[k] = X[order[lo + k], f]
            srt = np.argsort(vals[:m], kind="mergesort")
            cum = 0.0
            for i in range(m - 1):
                cum += y[order[lo + srt[i]]]
                n_left = i + 1
                if n_left < min_leaf:
                    continue
                if m - n_left < min_leaf:
                    break
                a = vals[srt[i]]
                b = vals[srt[i + 1]]
                if not a < b:
                    continue
                rest = total - cum
                score = cum * cum / n_left + rest * rest / (m - n_left)
                if score > best_score:
                    best_score = score
                    best_feature = f
                    mid = 0.5 * (a + b)
                    best_threshold = mid if mid < b else a

        if best_feature < 0 or best_score <= total * total / m:
            continue

        n_left = 0
        for k in range(lo, hi):
            r = order[k]
            if X[r, best_feature] <= best_threshold:
                scratch[n_left] = r
                n_left += 1
        pos = n_left
        for k in range(lo, hi):
            r = order[k]
            if X[r, best_feature] > best_threshold:
                scratch[pos] = r
                pos += 1
        for k in range(m):
            order[lo + k] = scratch[k]

        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = n_nodes
        right[node] = n_nodes + 1

        stack[top, 0] = n_nodes + 1
        stack[top, 1] = lo + n_left
        stack[top, 2] = hi
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = n_nodes
        stack[top, 1] = lo
        stack[top, 2] = lo + n_left
        stack[top, 3] = depth + 1
        top += 1
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def _predict_forest(X, offsets, feature, threshold, left, right, value):
    n_trees = offsets.size - 1
    out = np.empty((n_trees, X.shape[0]))
    for t in range(n_trees):
        base = offsets[t]
        for r in range(X.shape[0]):
            node = 0
            while feature[base + node] >= 0:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[t, r] = value[base + node]
    return out


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        offsets = np.array([0, self.n_nodes], dtype=np.int64)
        return _predict_forest(X, offsets, self.feature, self.threshold, self.left, self.right, self.value)[0]

    def same_as(self, other: RegressionTree) -> bool:
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("feature", "threshold", "left", "right", "value")
        )


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tree_index,)))


def bootstrap_rows(seed: int, tree_index: int, n_rows: int) -> np.ndarray:
    """Row indices of the bootstrap sample used by tree ``tree_index``."""
    return tree_rng(seed, tree_index).integers(0, n_rows, size=n_rows)


def _fit_tree(X, y, config: ForestConfig, tree_index: int) -> RegressionTree:
    n_rows, n_features = X.shape
    rng = tree_rng(config.seed, tree_index)
    if config.bootstrap:
        rows = rng.integers(0, n_rows, size=n_rows)
    else:
        rows = np.arange(n_rows)
    rows = rows[np.argsort(y[rows], kind="stable")].astype(np.int64)
    n_sub = config.features_per_split(n_features)
    if n_sub < n_features:
        keys = rng.random((2 * n_rows + 1, n_features))
    else:
        keys = np.zeros((1, n_features))
    max_depth = -1 if config.max_depth is None else config.max_depth
    return RegressionTree(*_grow_tree(X, y, rows, keys, n_sub, max_depth, config.min_leaf))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForecastModel:
    trees: tuple[RegressionTree, ...]
    lag_config: LagConfig
    forest_config: ForestConfig
    train_target_range: tuple[float, float]
    _packed: tuple = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
        np.cumsum([t.n_nodes for t in self.trees], out=offsets[1:])
        packed = tuple(
            np.concatenate([getattr(t, name) for t in self.trees])
            for name in ("feature", "threshold", "left", "right", "value")
        )
        object.__setattr__(self, "_packed", (offsets, *packed))

    @property
    def n_features(self) -> int:
        return self.lag_config.lags

    def tree_predictions(self, X) -> np.ndarray:
        """Per-tree outputs, shape ``(n_trees, n_rows)``."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise ForecastError(f"expected {self.n_features} lag features, got {X.shape[1]}")
        return _predict_forest(X, *self._packed)

    def _mean(self, per_tree: np.ndarray) -> np.ndarray:
        lo, hi = self.train_target_range
        return np.clip(per_tree.mean(axis=0), lo, hi)

    def predict(self, X) -> np.ndarray:
        return self._mean(self.tree_predictions(X))

    def predict_with_interval(self, X):
        """Return ``(point, low, high, tree_min, tree_max)`` per row.

        The interval is the 2.5%/97.5% quantile band of the per-tree outputs,
        widened if needed so that it contains the ensemble mean.
        """
        per_tree = self.tree_predictions(X)
        point = self._mean(per_tree)
        low, high = np.quantile(per_tree, INTERVAL_QUANTILES, axis=0)
        return (
            point,
            np.minimum(low, point),
            np.maximum(high, point),
            per_tree.min(axis=0),
            per_tree.max(axis=0),
        )


@dataclass(frozen=True, eq=False)
class ForecastResult:
    point: np.ndarray
    low: np.ndarray
    high: np.ndarray
    tree_min: np.ndarray
    tree_max: np.ndarray

    def __len__(self) -> int:
        return int(self.point.size)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def split_train_test(series, train_fraction: float = 0.8):
    """Chronological split; the training part gets ``ceil(0.8 n)`` points."""
    y = np.asarray(series, dtype=np.float64)
    if y.size < 10:
        raise SeriesTooShortError(f"series of length {y.size} is too short to split (need >= 10)")
    # rounding guard so exact products such as 0.8 * 10 do not ceil upward
    n_train = math.ceil(round(train_fraction * y.size, 9))
    return y[:n_train], y[n_train:]


def make_supervised(series, lag_config: LagConfig):
    """Row ``t`` holds ``(y[t-lags], ..., y[t-1])`` and its target ``y[t]``."""
    y = np.asarray(series, dtype=np.float64)
    lags = lag_config.lags
    if y.size <= lags:
        raise SeriesTooShortError(f"series of length {y.size} cannot feed {lags} lags")
    rows = np.lib.stride_tricks.sliding_window_view(y[:-1], lags)
    return np.ascontiguousarray(rows), y[lags:].copy()


def fit_forest(features, targets, config: ForestConfig, lag_config: LagConfig | None = None,
               n_jobs: int = 1) -> ForecastModel:
    X = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ForecastError(f"features {X.shape} and targets {y.shape} do not line up")
    if y.size < 2 * config.min_leaf:
        raise ForecastError(f"need at least {2 * config.min_leaf} rows, got {y.size}")
    if lag_config is None:
        lag_config = LagConfig(lags=X.shape[1])
    elif lag_config.lags != X.shape[1]:
        raise ForecastError("lag_config.lags does not match the feature width")

    def grow(i):
        return _fit_tree(X, y, config, i)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = tuple(pool.map(grow, range(config.n_trees)))
    else:
        trees = tuple(grow(i) for i in range(config.n_trees))
    return ForecastModel(trees, lag_config, config, (float(y.min()), float(y.max())))


def lagged_test_rows(train, test, lags: int) -> np.ndarray:
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if train.size < lags:
        raise SeriesTooShortError(f"training series shorter than the {lags}-value lag window")
    joined = np.concatenate([train[train.size - lags:], test])
    return np.ascontiguousarray(np.lib.stride_tricks.sliding_window_view(joined, lags)[: test.size])


def predict_test(model: ForecastModel, train, test) -> np.ndarray:
    """One-step-ahead predictions over ``test`` fed with the true lagged values."""
    X = lagged_test_rows(train, test, model.lag_config.lags)
    if X.shape[0] == 0:
        return np.empty(0)
    return model.predict(X)


def forecast_horizon(model: ForecastModel, series, horizon: int | None = None) -> ForecastResult:
    """Recursive multi-step forecast; each point forecast feeds the next lag window."""
    horizon = model.lag_config.horizon if horizon is None else horizon
    if horizon < 1:
        raise ForecastError("horizon must be >= 1")
    lags = model.lag_config.lags
    y = np.asarray(series, dtype=np.float64)
    if y.size < lags:
        raise SeriesTooShortError(f"need {lags} trailing values, got {y.size}")
    window = list(y[y.size - lags:])
    out = np.empty((5, horizon))
    for step in range(horizon):
        row = np.array(window[-lags:])[None, :]
        point, low, high, tmin, tmax = model.predict_with_interval(row)
        out[:, step] = point[0], low[0], high[0], tmin[0], tmax[0]
        window.append(point[0])
    return ForecastResult(*out)


def naive_forecast(train, steps: int) -> np.ndarray:
    y = np.asarray(train, dtype=np.float64)
    if y.size == 0:
        raise ForecastError("naive forecast needs a non-empty training series")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    return np.full(steps, y[-1])


# ---------------------------------------------------------------------------
# pluggable forecasters
# ---------------------------------------------------------------------------


class Forecaster(Protocol):
    name: str

    def fit(self, train: np.ndarray) -> None: ...

    def predict_test(self, train: np.ndarray, test: np.ndarray) -> ForecastResult: ...

    def forecast(self, series: np.ndarray, horizon: int) -> ForecastResult: ...


class RandomForestForecaster:
    name = "RF"

    def __init__(self, lag_config: LagConfig = LagConfig(), forest_config: ForestConfig = ForestConfig(),
                 n_jobs: int = 1):
        self.lag_config = lag_config
        self.forest_config = forest_config
        self.n_jobs = n_jobs
        self.model: ForecastModel | None = None

    def fit(self, train) -> None:
        X, y = make_supervised(train, self.lag_config)
        self.model = fit_forest(X, y, self.forest_config, self.lag_config, n_jobs=self.n_jobs)

    def predict_test(self, train, test) -> ForecastResult:
        X = lagged_test_rows(train, test, self.lag_config.lags)
        return ForecastResult(*self.model.predict_with_interval(X))

    def forecast(self, series, horizon: int) -> ForecastResult:
        return forecast_horizon(self.model, series, horizon)


class NaiveForecaster:
    """Repeats the last training value; its interval has zero width."""

    name = "naive"

    def fit(self, train) -> None:
        pass

    @staticmethod
    def _flat(values: np.ndarray) -> ForecastResult:
        return ForecastResult(values, values.copy(), values.copy(), values.copy(), values.copy())

    def predict_test(self, train, test) -> ForecastResult:
        return self._flat(naive_forecast(train, len(test)))

    def forecast(self, series, horizon: int) -> ForecastResult:
        return self._flat(naive_forecast(series, horizon))


def fit_and_forecast(series: Sequence[float], lag_config: LagConfig, forest_config: ForestConfig,
                     n_jobs: int = 1) -> ForecastResult:
    """Fit on the whole series and forecast ``lag_config.horizon`` steps past its end."""
    X, y = make_supervised(series, lag_config)
    model = fit_forest(X, y, forest_config, lag_config, n_jobs=n_jobs)
    return forecast_horizon(model, series, lag_config.horizon)
