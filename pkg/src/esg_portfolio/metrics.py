"""Scale-free forecast errors.

Errors are scaled by the in-sample mean absolute one-step naive error of the
training series, so a value below one means the forecast beats the average
one-step naive forecast on the training data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedScaledError(ValueError):
    """The training series has no one-step variation, so scaled errors are undefined."""


@dataclass(frozen=True)
class ScaledErrorReport:
    mase: float
    rmsse: float
    naive_denominator: float
    test_errors: np.ndarray

    @property
    def beats_naive(self) -> bool:
        return self.mase < 1.0


def naive_denominator(train) -> float:
    """Mean absolute first difference of the training series."""
    y = np.asarray(train, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("training series needs at least two points")
    denom = float(np.mean(np.abs(np.diff(y))))
    if denom == 0.0:
        raise UndefinedScaledError("constant training series: scaled error undefined")
    return denom


def _scaled(actual, predicted, train) -> tuple[np.ndarray, np.ndarray, float]:
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} actual vs {p.shape} predicted")
    if a.size == 0:
        raise ValueError("need at least one forecast")
    denom = naive_denominator(train)
    errors = a - p
    return errors, errors / denom, denom


def mase(actual, predicted, train) -> float:
    _, q, _ = _scaled(actual, predicted, train)
    return float(np.mean(np.abs(q)))


def rmsse(actual, predicted, train) -> float:
    # same absolute-difference scale as MASE, not the squared-difference variant
    _, q, _ = _scaled(actual, predicted, train)
    return float(np.sqrt(np.mean(q * q)))


def scaled_error_report(actual, predicted, train) -> ScaledErrorReport:
    errors, q, denom = _scaled(actual, predicted, train)
    return ScaledErrorReport(
        mase=float(np.mean(np.abs(q))),
        rmsse=float(np.sqrt(np.mean(q * q))),
        naive_denominator=denom,
        test_errors=errors,
    )
