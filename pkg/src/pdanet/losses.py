"""Regression objectives: plain squared error and the polarity-consistent variant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import engine as E
from .engine import Tensor
from .errors import ConfigurationError, DimensionError

POSITIVE = "positive"
NEGATIVE = "negative"

DEFAULT_LAMBDA_GRID = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class PcrConfig:
    lam: float = 0.0
    threshold: float = 0.5

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigurationError(f"PCR penalty must be non-negative, got {self.lam}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"polarity threshold must lie in (0, 1), got {self.threshold}")


def median_threshold(labels) -> float:
    """Data-driven split point: the median of all training label values.

    Offered as an alternative to the 0.5 midpoint; clipped into (0, 1).
    """
    value = float(np.median(np.asarray(labels, dtype=np.float64)))
    return float(np.clip(value, 1e-6, 1.0 - 1e-6))


def polarity(y: float, threshold: float = 0.5) -> str:
    """Ties go to the positive side."""
    return POSITIVE if y >= threshold else NEGATIVE


def mismatch(yhat, y, threshold: float = 0.5):
    """1 where prediction and target fall on opposite sides of ``threshold``.

    Works on scalars (returns int) and on arrays (returns a float array).
    """
    yhat_pos = np.asarray(yhat) >= threshold
    y_pos = np.asarray(y) >= threshold
    diff = yhat_pos != y_pos
    if np.ndim(diff) == 0:
        return int(diff)
    return diff.astype(np.float64)


def _check(preds: Tensor, targets) -> Tensor:
    targets = targets if isinstance(targets, Tensor) else Tensor(np.asarray(targets, dtype=preds.dtype))
    if preds.shape != targets.shape:
        raise DimensionError(f"prediction shape {preds.shape} != target shape {targets.shape}")
    if preds.ndim != 2 or preds.shape[0] < 1:
        raise DimensionError(f"expected an (N, N_E) batch with N >= 1, got {preds.shape}")
    return targets


def mse_loss(preds: Tensor, targets) -> Tensor:
    """(1/N) * sum over samples and dimensions of squared residuals."""
    targets = _check(preds, targets)
    n = preds.shape[0]
    total = E.sum_all(E.square(E.sub(preds, targets)))
    return E.mul(total, Tensor(np.array(1.0 / n, dtype=preds.dtype)))


def pcr_loss(preds: Tensor, targets, cfg: Optional[PcrConfig] = None) -> Tensor:
    """Squared error with residuals on the wrong side of the threshold weighted by (1 + lam).

    The weight is a constant of the backward pass.
    """
    cfg = cfg or PcrConfig()
    targets = _check(preds, targets)
    n = preds.shape[0]
    g = mismatch(preds.values, targets.values, cfg.threshold)
    weight = Tensor((1.0 + cfg.lam * g).astype(preds.dtype))
    total = E.sum_all(E.mul(E.square(E.sub(preds, targets)), weight))
    return E.mul(total, Tensor(np.array(1.0 / n, dtype=preds.dtype)))


def regression_loss(preds: Tensor, targets, kind: str = "mse", cfg: Optional[PcrConfig] = None) -> Tensor:
    if kind == "mse":
        return mse_loss(preds, targets)
    if kind == "pcr":
        return pcr_loss(preds, targets, cfg)
    raise ConfigurationError(f"unknown loss {kind!r}; expected 'mse' or 'pcr'")
