"""Training-loss smoothing and loss lookup at a target compute budget."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .accounting import SizeScheme, model_size
from .ingest import TrainingRun

DEFAULT_WINDOW_FRACTION = 0.05
PROXIMITY = 0.10


class LossSource(str, enum.Enum):
    VALIDATION = "validation"
    SMOOTHED_TRAIN = "train"

    @classmethod
    def parse(cls, value) -> "LossSource":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        return {"v": cls.VALIDATION, "val": cls.VALIDATION, "validation": cls.VALIDATION,
                "t": cls.SMOOTHED_TRAIN, "train": cls.SMOOTHED_TRAIN,
                "smoothedtrain": cls.SMOOTHED_TRAIN, "smoothed_train": cls.SMOOTHED_TRAIN}[key]


@dataclass(frozen=True)
class LossSeries:
    steps: np.ndarray
    tokens: np.ndarray
    losses: np.ndarray
    smoothed: bool = False

    def __post_init__(self):
        for name in ("steps", "tokens", "losses"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (len(self.steps) == len(self.tokens) == len(self.losses)):
            raise ValueError("steps, tokens and losses must have equal length")
        if len(self.tokens) > 1 and np.any(np.diff(self.tokens) <= 0):
            raise ValueError("tokens must be strictly increasing")
        if not np.all(np.isfinite(self.losses)):
            raise ValueError("losses must be finite")

    def __len__(self):
        return len(self.losses)

    @classmethod
    def from_run(cls, run: TrainingRun) -> "LossSeries":
        return cls([r.step for r in run.steps], [r.tokens for r in run.steps],
                   [r.train_loss for r in run.steps])


@dataclass(frozen=True)
class LossPoint:
    N: float
    C: float
    loss: float
    sigma: float = 0.0


def smooth_loss(series: LossSeries, p: float = DEFAULT_WINDOW_FRACTION, k: int = 20,
                tokens_per_step: Optional[float] = None) -> LossSeries:
    """Variable-width moving average with logging-lag compensation.

    Entry ``i`` becomes the mean of raw entries ``i - floor(p*i) .. i + floor(p*i)``
    (only indices that exist), and every coordinate is moved back by ``k/2``
    steps because each logged value averages the preceding ``k`` steps.
    """
    if series.smoothed:
        raise ValueError("series is already smoothed")
    n = len(series)
    if n == 0:
        raise ValueError("empty series")
    if not 0.0 <= p < 1.0:
        raise ValueError("window fraction p must lie in [0, 1)")
    if k < 1:
        raise ValueError("log interval k must be >= 1")
    i = np.arange(n)
    w = np.floor(p * i).astype(int)
    lo = np.maximum(i - w, 0)
    hi = np.minimum(i + w, n - 1)
    csum = np.concatenate([[0.0], np.cumsum(series.losses)])
    means = (csum[hi + 1] - csum[lo]) / (hi - lo + 1)
    # single-entry windows pass through untouched (no cumsum rounding)
    means = np.where(hi == lo, series.losses, means)
    if tokens_per_step is None:
        tokens_per_step = _tokens_per_step(series)
    shift = k / 2.0
    return LossSeries(series.steps - shift, series.tokens - shift * tokens_per_step, means, smoothed=True)


def _tokens_per_step(series: LossSeries) -> float:
    if len(series) > 1:
        return float(np.median(np.diff(series.tokens) / np.diff(series.steps)))
    if series.steps[0] > 0:
        return float(series.tokens[0] / series.steps[0])
    return 0.0


def interpolate_log_loss(steps: np.ndarray, losses: np.ndarray, target: float,
                         proximity: Optional[float] = PROXIMITY) -> Optional[float]:
    """Log-linear loss interpolation at ``target`` from the two samples nearest to it.

    Returns None when the nearest sample is more than ``proximity`` (relative)
    away; ``proximity=None`` disables the check.
    """
    steps = np.asarray(steps, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if steps.size == 0:
        raise ValueError("no samples")
    dist = np.abs(steps - target)
    nearest = int(np.argmin(dist))
    if proximity is not None and dist[nearest] > proximity * abs(target):
        return None
    if dist[nearest] == 0.0 or steps.size == 1:
        return float(losses[nearest])
    j = int(np.searchsorted(steps, target))
    if 0 < j < steps.size:
        a, b = j - 1, j
    else:
        # target outside the sampled range: use the two closest samples
        a, b = (0, 1) if j == 0 else (steps.size - 2, steps.size - 1)
    la, lb = math.log(losses[a]), math.log(losses[b])
    frac = (target - steps[a]) / (steps[b] - steps[a])
    return float(math.exp(la + frac * (lb - la)))


def run_samples(run: TrainingRun, source, p: float = DEFAULT_WINDOW_FRACTION):
    """(step coordinates, losses) of a run for the requested source."""
    source = LossSource.parse(source)
    bt = run.batch_tokens
    if source is LossSource.VALIDATION:
        if not run.vals:
            raise ValueError(f"run {run.run_id!r} has no validation records")
        steps = np.array([v.tokens for v in run.vals], dtype=float) / bt
        return steps, np.array([v.loss for v in run.vals], dtype=float)
    sm = smooth_loss(LossSeries.from_run(run), p=p, k=run.log_interval, tokens_per_step=bt)
    return sm.steps, sm.losses


def loss_at_flops(run: TrainingRun, C: float, scheme=SizeScheme.LINEAR,
                  source=LossSource.VALIDATION, p: float = DEFAULT_WINDOW_FRACTION,
                  _samples=None) -> Optional[float]:
    """Loss of ``run`` after ``C`` FLOPs, with model size counted under ``scheme``.

    The target step is ``C / (6 N B)`` with ``B`` the batch size in tokens.
    Returns None when no sample lies within 10% of that step.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    N = model_size(run.arch, scheme)
    target = C / (6.0 * N * run.batch_tokens)
    steps, losses = _samples if _samples is not None else run_samples(run, source, p)
    return interpolate_log_loss(steps, losses, target)
