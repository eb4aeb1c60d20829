"""Differentiable per-day features derived from the adjusted price.

Every continuous channel is built from autodiff operations so that a loss on
the forecast differentiates all the way back to the raw prices.  Windowed
statistics use left-truncated warm-up windows (the first w-1 days average over
however many days exist), which keeps the feature matrix aligned with the
price series.

Channels, in order:
    adjprc,
    rolling_mean_5, rolling_mean_10, rolling_mean_20,
    rolling_std_5, rolling_std_10, rolling_std_20,
    log_return, roc_5,
    ema_5, ema_10, ema_20
plus a categorical day-of-week (Monday=0) carried separately.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHANNELS = (
    "adjprc",
    "rolling_mean_5", "rolling_mean_10", "rolling_mean_20",
    "rolling_std_5", "rolling_std_10", "rolling_std_20",
    "log_return", "roc_5",
    "ema_5", "ema_10", "ema_20",
)

MIN_LENGTH = 21  # largest rolling window (20) + the roc delta warm-up


@dataclass
class FeatureMatrix:
    """Continuous channels (T, 12) plus the categorical day-of-week column."""

    continuous: Tensor
    day_of_week: np.ndarray

    def __post_init__(self):
        if self.continuous.shape[1] != len(CHANNELS):
            raise ValueError(f"expected {len(CHANNELS)} channels, got {self.continuous.shape[1]}")
        if self.continuous.shape[0] != len(self.day_of_week):
            raise ValueError("continuous rows and day_of_week length differ")

    def __len__(self) -> int:
        return self.continuous.shape[0]

    def day_one_hot(self) -> Tensor:
        """(T, 5) constant one-hot encoding of the weekday."""
        onehot = np.zeros((len(self.day_of_week), 5))
        onehot[np.arange(len(self.day_of_week)), self.day_of_week] = 1.0
        return ad.constant(onehot)


_MATRIX_CACHE: dict[tuple[str, int], np.ndarray] = {}


def _rolling_mean_matrix(T: int, w: int) -> np.ndarray:
    key = (f"mean{w}", T)
    if key not in _MATRIX_CACHE:
        M = np.zeros((T, T))
        for t in range(T):
            start = max(0, t - w + 1)
            M[t, start:t + 1] = 1.0 / (t - start + 1)
        _MATRIX_CACHE[key] = M
    return _MATRIX_CACHE[key]


def _ema_matrix(T: int, w: int) -> np.ndarray:
    # e_0 = p_0; e_t = beta p_t + (1-beta) e_{t-1}  =>  lower-triangular map
    key = (f"ema{w}", T)
    if key not in _MATRIX_CACHE:
        beta = 2.0 / (w + 1.0)
        M = np.zeros((T, T))
        decay = np.power(1.0 - beta, np.arange(T))
        for t in range(T):
            M[t, 0] = decay[t]
            if t >= 1:
                M[t, 1:t + 1] = beta * decay[:t][::-1]
        _MATRIX_CACHE[key] = M
    return _MATRIX_CACHE[key]


def _rolling_std(adjprc: Tensor, w: int) -> Tensor:
    # population variance via E[y^2] - E[y]^2 on globally recentred prices;
    # recentring kills the catastrophic cancellation of the raw-moment form
    # (a constant shift changes neither the variance nor its gradient)
    M = ad.constant(_rolling_mean_matrix(adjprc.shape[0], w))
    y = ad.sub(adjprc, float(np.mean(adjprc.data)))
    m1 = ad.matmul(M, y)
    m2 = ad.matmul(M, ad.mul(y, y))
    var = ad.clamp(ad.sub(m2, ad.mul(m1, m1)), lo=0.0)
    return ad.tsqrt(var)


def compute_features(adjprc: Tensor, dates: list[dt.date]) -> FeatureMatrix:
    """Derive the full per-day feature matrix from a price tensor.

    Raises on series shorter than 21 days, non-positive prices, or dates that
    fall on a weekend (the categorical channel is 5-way).
    """
    T = adjprc.shape[0]
    if adjprc.ndim != 1:
        raise ValueError(f"adjprc must be 1-D, got shape {adjprc.shape}")
    if T < MIN_LENGTH:
        raise ValueError(f"need at least {MIN_LENGTH} days of prices, got {T}")
    if len(dates) != T:
        raise ValueError(f"{len(dates)} dates for {T} prices")
    if np.any(adjprc.data <= 0.0):
        raise ad.DomainError("adjprc must be strictly positive")

    day_of_week = np.array([d.weekday() for d in dates], dtype=int)
    if np.any(day_of_week > 4):
        bad = dates[int(np.argmax(day_of_week > 4))]
        raise ValueError(f"weekend date {bad} in price series")

    cols: list[Tensor] = [adjprc]
    for w in (5, 10, 20):
        cols.append(ad.matmul(ad.constant(_rolling_mean_matrix(T, w)), adjprc))
    for w in (5, 10, 20):
        cols.append(_rolling_std(adjprc, w))

    # log_return_t = ln(p_t / p_{t-1}), first day 0
    logp = ad.tlog(adjprc)
    lr = ad.sub(logp[1:], logp[:-1])
    cols.append(ad.concat([ad.constant(np.zeros(1)), lr]))

    # roc_5_t = (p_t - p_{t-5}) / p_{t-5}, first five days 0
    roc = ad.div(ad.sub(adjprc[5:], adjprc[:-5]), adjprc[:-5])
    cols.append(ad.concat([ad.constant(np.zeros(5)), roc]))

    for w in (5, 10, 20):
        cols.append(ad.matmul(ad.constant(_ema_matrix(T, w)), adjprc))

    stacked = ad.concat([ad.reshape(c, (T, 1)) for c in cols], axis=1)
    return FeatureMatrix(stacked, day_of_week)
