"""Training objective: smoothed targets, cross-entropy and temperature penalty."""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DimensionError, DomainError, OutOfRangeError

LOG_FLOOR = math.log(1e-300)


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.2
    beta_thres: float = 0.1
    n_s: int = 3
    n_k: int = 5

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if not 0.0 < self.beta_thres < 1.0:
            raise ConfigError("beta_thres must lie in (0, 1)")
        _check_window(self.n_s, self.n_k)


@dataclass
class GtDistribution:
    data: np.ndarray
    center: tuple
    n_s: int
    n_k: int


def _check_window(n_s, n_k):
    if n_s < 1 or n_s % 2 == 0 or n_k % 2 == 0:
        raise ConfigError("n_s and n_k must be odd positive integers")
    if n_k <= n_s:
        raise ConfigError("n_k must exceed n_s")


def make_gt_distribution(gt, grid_shape, n_s=3, n_k=5):
    """Gaussian-smoothed target around a sub-cell ground-truth point.

    A continuous Gaussian with std ``n_k // 2`` centred exactly on ``gt`` is
    evaluated on the ``n_s x n_s`` cells nearest to it (cropped at the
    borders) and normalised to sum to one. Every other cell is zero.
    """
    _check_window(n_s, n_k)
    h, w = grid_shape
    row, col = float(gt[0]), float(gt[1])
    if not (0.0 <= row <= h - 1 and 0.0 <= col <= w - 1):
        raise OutOfRangeError(f"ground truth {gt} outside grid {grid_shape}")
    std = n_k // 2
    half = n_s // 2
    cr, cc = math.floor(row + 0.5), math.floor(col + 0.5)
    rows = np.arange(max(cr - half, 0), min(cr + half, h - 1) + 1)
    cols = np.arange(max(cc - half, 0), min(cc + half, w - 1) + 1)
    d2 = (rows[:, None] - row) ** 2 + (cols[None, :] - col) ** 2
    patch = np.exp(-d2 / (2.0 * std ** 2))
    data = np.zeros((h, w))
    data[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] = patch / patch.sum()
    return GtDistribution(data, (row, col), n_s, n_k)


def cross_entropy(scores, target, diagnostics=None):
    """-sum(target * log softmax(scores)) per score map.

    ``scores``/``target`` are either a :class:`~tempmatch.matcher.ScoreMap`
    and a :class:`GtDistribution` (one map, scalar loss) or arrays whose last
    axis runs over cells, e.g. (Q, h*w) giving Q losses. Averaging over
    queries is left to the caller. Log-probabilities below log(1e-300) under
    non-zero target mass are clamped and counted in
    ``diagnostics["underflow"]``.
    """
    whole_map = hasattr(scores, "query") or isinstance(target, GtDistribution)
    if hasattr(scores, "query"):
        scores = scores.data
    if isinstance(target, GtDistribution):
        target = target.data
    scores = ag.as_tensor(scores)
    target = np.asarray(target, dtype=np.float64)
    if scores.shape != target.shape:
        raise DimensionError(f"score shape {scores.shape} != target shape {target.shape}")
    if whole_map:
        scores, target = scores.reshape(-1), target.reshape(-1)
    logp = ag.log_softmax(scores, axis=-1)
    under = (logp.data < LOG_FLOOR) & (target > 0)
    if under.any():
        logp = ag.clamp_min(logp, LOG_FLOOR)
    if diagnostics is not None:
        diagnostics["underflow"] = diagnostics.get("underflow", 0) + int(under.sum())
    return -ag.sum(logp * target, axis=-1)


def temperature_regularizer(beta, beta_thres=0.1):
    """max(0, log(beta_thres) - log(beta)), summed over all given temperatures."""
    if not isinstance(beta, ag.Tensor):
        beta = ag.Tensor(beta)
    if np.any(beta.data <= 0):
        raise DomainError("temperature must be positive")
    penalty = ag.relu(math.log(beta_thres) - ag.log(beta))
    return ag.sum(penalty)


def total_loss(ce, reg, gamma):
    if gamma == 0:
        return ce
    return ce + gamma * reg
