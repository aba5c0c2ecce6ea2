"""Packet selection at the fusion center and the sensor-side event gate.

Two hold policies are supported. ``logic-zoh`` keeps the packet with the
newest timestamp and discards anything older (disordered packets). ``zoh``
keeps whatever arrived last, stale or not.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

__all__ = [
    "ZohState",
    "TriggerConfig",
    "Reorganized",
    "accept",
    "trigger_fires",
    "event_gate",
    "reorganize",
    "receive",
    "write_receiver_trace",
]

RECEIVER_TRACE_HEADER = ("k", "sensor_id", "held_timestamp", "tau", "accepted", "trigger_fired")
MODES = ("logic-zoh", "zoh")


@dataclass(frozen=True, eq=False)
class ZohState:
    """Receiver hold for one sensor.

    ``newest`` is the largest timestamp seen so far and ``last_arrival`` the
    timestamp of the most recent arrival; ``beta`` is their difference.
    """

    mode: str = "logic-zoh"
    held: object = None
    newest: int = -1
    last_arrival: int = -1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown receiver mode {self.mode!r}", "mode")

    @property
    def held_timestamp(self):
        return -1 if self.held is None else self.held.timestamp

    @property
    def beta(self):
        return self.newest - self.last_arrival


@dataclass(frozen=True, eq=False)
class TriggerConfig:
    """Event-trigger weight ``Omega`` (PD) and threshold ``delta`` in [0, 1)."""

    Omega: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        Omega = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        if Omega.shape[0] != Omega.shape[1] or not np.allclose(Omega, Omega.T):
            raise ConfigError("must be symmetric", "trigger.Omega")
        if np.linalg.eigvalsh(Omega).min() <= 0:
            raise ConfigError("must be positive definite", "trigger.Omega")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError("must satisfy 0 <= delta < 1", "trigger.delta")
        object.__setattr__(self, "Omega", Omega)

    @property
    def active(self):
        """Whether gating can suppress anything (``delta = 0`` only drops
        exact repeats, which the pipeline does not bother to gate)."""
        return self.delta > 0


class Reorganized(NamedTuple):
    y: np.ndarray
    t: int
    tau: int


def accept(state, packet):
    """Offer an arriving packet to the hold. Returns ``(state, accepted)``."""
    newest = max(state.newest, packet.timestamp)
    if state.mode == "zoh":
        ok = True
    else:
        ok = packet.timestamp >= state.held_timestamp
    held = packet if ok else state.held
    return replace(state, held=held, newest=newest, last_arrival=packet.timestamp), ok


def trigger_fires(sigma, xhat, cfg):
    """Evaluate ``sigma' Omega sigma - delta xhat' Omega xhat > 0``."""
    sigma = np.asarray(sigma, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    return bool(sigma @ cfg.Omega @ sigma - cfg.delta * (xhat @ cfg.Omega @ xhat) > 0)


def event_gate(estimates, cfg):
    """Transmission mask for a sensor-side estimate sequence (T, r).

    The first sample is always sent; afterwards a sample is sent when its
    estimate has drifted enough from the last transmitted one.
    """
    estimates = np.asarray(estimates, dtype=float)
    mask = np.zeros(len(estimates), dtype=bool)
    if not len(estimates):
        return mask
    mask[0] = True
    ref = estimates[0]
    for k in range(1, len(estimates)):
        if trigger_fires(estimates[k] - ref, ref, cfg):
            mask[k] = True
            ref = estimates[k]
    return mask


def reorganize(state, k):
    """The held measurement viewed at step ``k``: ``(y, t, tau)`` or None."""
    if state.held is None:
        return None
    t = state.held.timestamp
    return Reorganized(state.held.payload, t, k - t)


def receive(schedule, horizon, mode="logic-zoh", sensor_id=0, fired=None):
    """Replay an arrival schedule through the hold for steps ``0..horizon-1``.

    Returns ``(events, trace)``. ``events`` lists ``(k, packet)`` for every
    accepted packet; ``trace`` has one receiver-trace row per step (the
    ``accepted`` flag is 1 if any packet was accepted that step and
    ``trigger_fired`` echoes the sensor-side gate ``fired[k]``, all ones when
    no gate is given).
    """
    state = ZohState(mode=mode)
    events, trace = [], []
    pos = 0
    for k in range(horizon):
        got = False
        while pos < len(schedule) and schedule[pos].arrival == k:
            state, ok = accept(state, schedule[pos])
            if ok:
                events.append((k, schedule[pos]))
                got = True
            pos += 1
        reo = reorganize(state, k)
        held_t = -1 if reo is None else reo.t
        tau = "" if reo is None else reo.tau
        fire = 1 if fired is None else int(fired[k])
        trace.append((k, sensor_id, held_t, tau, int(got), fire))
    return events, trace


def write_receiver_trace(path, rows, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECEIVER_TRACE_HEADER)
        writer.writerows(rows)
