"""Running-average estimate of the mean inclination from binary acceptance data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fjnudge.errors import DimensionMismatch

PRIOR = 0.5


@dataclass(frozen=True)
class EstimatorState:
    """Accumulated observations.

    With ``discount`` set, ``sum_y`` and ``count`` are exponentially discounted
    sums and the estimate tracks recent data. ``discount=None`` (the default)
    keeps the plain full-history average.
    """

    sum_y: np.ndarray
    count: float
    estimate: np.ndarray
    discount: float | None = None

    @classmethod
    def empty(cls, n: int, discount: float | None = None) -> "EstimatorState":
        if discount is not None and not 0.0 < discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        return cls(np.zeros(n), 0, np.full(n, PRIOR), discount)

    @property
    def n(self) -> int:
        return self.sum_y.shape[0]


def update(state: EstimatorState, y) -> EstimatorState:
    y = np.asarray(y)
    if y.shape != (state.n,):
        raise DimensionMismatch(f"observation has shape {y.shape}, expected ({state.n},)")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("observations must be binary")
    y = y.astype(float)
    # sums of 0/1 stay exact, so dividing is the running mean without drift
    if state.discount is None:
        count, sum_y = state.count + 1, state.sum_y + y
    else:
        g = state.discount
        count, sum_y = g * state.count + 1.0, g * state.sum_y + y
    estimate = sum_y / count
    return EstimatorState(sum_y, count, np.clip(estimate, 0.0, 1.0), state.discount)


def current(state: EstimatorState) -> np.ndarray:
    """The estimate, or the uninformed prior ``0.5`` before any observation."""
    if state.count == 0:
        return np.full(state.n, PRIOR)
    return state.estimate.copy()
