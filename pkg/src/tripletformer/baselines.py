"""Deterministic interpolation baselines with fitted homoscedastic scales.

Two point predictors: ``mean`` answers every query with the training mean of
the query's channel, ``forward`` carries the latest context observation of
that channel forward in time (zero when the channel has no earlier context
observation, which on the standardised scale is the channel mean).  Neither
predictor ever sees target values; predictions are functions of context and
queries alone.

Both become probabilistic through a per-channel standard deviation chosen by
brute-force grid search to minimise validation NLL; a single shared scale can
be requested instead of per-channel ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import GaussianPrediction
from .tensor import Tensor
from .training import gaussian_nll

__all__ = [
    "BaselineModel",
    "fit_mean_baseline",
    "fit_forward_baseline",
    "fit_homoscedastic_sigma",
    "fit_baseline",
    "default_sigma_grid",
]


def default_sigma_grid() -> np.ndarray:
    """50 log-spaced candidate scales in [0.05, 3.0]."""
    return np.geomspace(0.05, 3.0, 50)


@dataclass
class BaselineModel:
    kind: str                      # "mean" | "forward"
    channels: int
    channel_means: np.ndarray      # (C,) training means
    sigma: np.ndarray | None = None  # (C,) fitted scales

    def __post_init__(self):
        if self.kind not in ("mean", "forward"):
            raise ValueError(f"kind must be 'mean' or 'forward', got {self.kind!r}")
        if self.channel_means.shape != (self.channels,):
            raise ValueError(
                f"channel_means shape {self.channel_means.shape} does not match "
                f"{self.channels} channels"
            )

    def _check_channel(self, c: int) -> None:
        if not (1 <= c <= self.channels):
            raise ValueError(f"unknown channel {c}; model covers 1..{self.channels}")

    def predict_means(self, context, queries) -> np.ndarray:
        """Point predictions only; usable before a scale is fitted."""
        if self.kind == "mean":
            means = np.empty(len(queries))
            for i, query in enumerate(queries):
                self._check_channel(query.c)
                means[i] = self.channel_means[query.c - 1]
            return means
        means = np.empty(len(queries))
        for i, query in enumerate(queries):
            self._check_channel(query.c)
            best_t = None
            value = 0.0  # zero imputation when nothing observed yet
            for obs in context:
                # strictly-later times win, so the earliest-inserted observation
                # keeps a tie at equal times
                if obs.c == query.c and obs.t <= query.t and (best_t is None or obs.t > best_t):
                    best_t = obs.t
                    value = obs.u
            means[i] = value
        return means

    def predict(self, context, queries) -> GaussianPrediction:
        if self.sigma is None:
            raise ValueError("baseline scale not fitted; run fit_homoscedastic_sigma")
        means = self.predict_means(context, queries)
        stds = np.empty(len(queries))
        for i, query in enumerate(queries):
            self._check_channel(query.c)
            stds[i] = self.sigma[query.c - 1]
        return GaussianPrediction(mean=Tensor(means), std=Tensor(stds))


def fit_mean_baseline(train_records, channels: int) -> BaselineModel:
    """Per-channel training means; every channel must be observed in train."""
    sums = np.zeros(channels)
    counts = np.zeros(channels, dtype=np.int64)
    for record in train_records:
        for obs in record.observations:
            if obs.c > channels:
                raise ValueError(f"channel {obs.c} exceeds channel count {channels}")
            sums[obs.c - 1] += obs.u
            counts[obs.c - 1] += 1
    if np.any(counts == 0):
        empty = [c + 1 for c in np.flatnonzero(counts == 0)]
        raise ValueError(f"channels without training observations: {empty}")
    return BaselineModel(kind="mean", channels=channels, channel_means=sums / counts)


def fit_forward_baseline(channels: int) -> BaselineModel:
    """Forward-fill predictor; has no fitted point-prediction state."""
    return BaselineModel(kind="forward", channels=channels, channel_means=np.zeros(channels))


def fit_homoscedastic_sigma(
    predict_means,
    val_instances,
    grid: np.ndarray | None = None,
    per_channel: bool = True,
) -> np.ndarray:
    """Grid-search standard deviations against validation NLL.

    ``predict_means(context, queries)`` supplies point predictions; residuals
    are grouped per query channel and each channel takes the grid value with
    the least mean NLL (first grid index on ties).  With
    ``per_channel=False`` a single scale is fitted on all residuals and
    broadcast to every channel.  Returns an array indexed by channel - 1.
    """
    grid = default_sigma_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError(f"scale grid must be a non-empty vector, got shape {grid.shape}")
    if np.any(grid <= 0.0):
        raise ValueError("scale grid values must be positive")
    residuals: dict[int, list[float]] = {}
    max_channel = 0
    for inst in val_instances:
        means = np.asarray(predict_means(inst.context, inst.queries))
        for query, mu, u in zip(inst.queries, means, inst.targets):
            residuals.setdefault(query.c, []).append(u - mu)
            max_channel = max(max_channel, query.c)
    if not residuals:
        raise ValueError("no validation residuals to fit scales on")

    def best_scale(values: np.ndarray) -> float:
        scores = [float(np.mean(gaussian_nll(values, 0.0, s))) for s in grid]
        return float(grid[int(np.argmin(scores))])

    if not per_channel:
        pooled = np.concatenate([np.array(v) for v in residuals.values()])
        return np.full(max_channel, best_scale(pooled))
    sigma = np.empty(max_channel)
    for c in range(1, max_channel + 1):
        if c not in residuals:
            warnings.warn(f"channel {c} has no validation residuals; using scale 1.0")
            sigma[c - 1] = 1.0
            continue
        sigma[c - 1] = best_scale(np.array(residuals[c]))
    return sigma


def fit_baseline(
    kind: str,
    train_records,
    val_instances,
    channels: int,
    grid: np.ndarray | None = None,
    per_channel: bool = True,
) -> BaselineModel:
    """Fit point predictions on train and scales on validation instances."""
    if kind == "mean":
        model = fit_mean_baseline(train_records, channels)
    elif kind == "forward":
        model = fit_forward_baseline(channels)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    sigma = fit_homoscedastic_sigma(model.predict_means, val_instances, grid, per_channel)
    if sigma.shape[0] < channels:
        sigma = np.concatenate([sigma, np.ones(channels - sigma.shape[0])])
    model.sigma = sigma
    return model
