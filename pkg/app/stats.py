"""Small Monte Carlo summaries shared by the estimators."""

import logging
import warnings
from typing import Tuple

import numpy as np
from scipy.special import logsumexp

from app.errors import NumericWarning

logger = logging.getLogger(__name__)


def mean_se(values, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error along axis."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=axis, ddof=1) / np.sqrt(n)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x over the positive entries."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if keep.sum() < 2:
        warnings.warn("fewer than two usable points for a log-log fit", NumericWarning)
        return float("nan")
    slope, _ = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope)


def effective_sample_size(log_weights) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2, computed in log space."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        return 0.0
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def trend_violation(values, slack) -> float:
    """Largest increase between consecutive entries beyond the given slack."""
    values = np.asarray(values, dtype=float)
    slack = np.broadcast_to(np.asarray(slack, dtype=float), values.shape)
    if values.size < 2:
        return 0.0
    return float(np.max(np.diff(values) - slack[1:]))
