"""Delay compensation of local estimates and prediction fill-in."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DelayBoundError, StaleMeasurementError

__all__ = ["CompensatedEstimate", "compensate", "compensation_factor", "fill_missing"]


@dataclass(frozen=True, eq=False)
class CompensatedEstimate:
    """Estimate of ``x[k]`` built from a filter that last processed ``k - tau``."""

    sensor_id: int
    k: int
    x_comp: np.ndarray
    tau: int
    filled: int = 0


def compensation_factor(tau, N):
    """Scalar ``1 - (tau - 1) / N`` for ``1 <= tau <= N`` (1 for ``tau = 0``).

    Works elementwise on integer arrays.
    """
    tau = np.asarray(tau)
    if np.any(tau < 0):
        raise DelayBoundError("delay must be nonnegative")
    if np.any(tau > N):
        raise DelayBoundError(f"delay {int(np.max(tau))} exceeds the bound N={N}")
    if N == 0:
        return np.ones(tau.shape)
    return np.where(tau == 0, 1.0, 1.0 - (tau - 1) / N)


def compensate(xp, tau, N, xf=None):
    """Map a delayed estimate to the current step.

    For ``tau >= 1`` returns ``(1 - (tau - 1) / N) * xp`` where ``xp`` is the
    one-step prediction from the last processed timestamp. For ``tau = 0``
    the filtered estimate ``xf`` is passed through unchanged.
    """
    if tau == 0:
        if xf is None:
            raise ValueError("tau = 0 needs the filtered estimate xf")
        return np.asarray(xf, dtype=float)
    return compensation_factor(tau, N) * np.asarray(xp, dtype=float)


def fill_missing(local_filter, state, s):
    """Prediction-only states for the gap between ``state.t`` and ``s``.

    Returns the ``s - state.t - 1`` intermediate states; the caller then
    processes the measurement at ``s`` from the last one (or from ``state``
    when there is no gap).
    """
    if s <= state.t:
        raise StaleMeasurementError(f"timestamp {s} is not newer than {state.t}")
    return local_filter.fill(state, s)
