"""Unreliable network: bounded random delays, Bernoulli dropouts, disorder."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

__all__ = [
    "Packet",
    "DelayModel",
    "make_stream",
    "transmit",
    "lossless",
    "disorder_count",
    "channel_trace_rows",
    "write_channel_trace",
]

CHANNEL_TRACE_HEADER = ("sensor_id", "timestamp", "arrival", "dropped")


@dataclass(frozen=True, eq=False)
class Packet:
    """Time-stamped measurement. ``arrival`` is None before transmission."""

    sensor_id: int
    timestamp: int
    payload: np.ndarray
    arrival: int | None = None

    @property
    def delay(self):
        return None if self.arrival is None else self.arrival - self.timestamp

    def __repr__(self):
        return f"Packet(sensor={self.sensor_id}, t={self.timestamp}, arrival={self.arrival})"


@dataclass(frozen=True, eq=False)
class DelayModel:
    """Distribution of the per-packet delay over ``{0, ..., N}``.

    ``uniform-integer`` draws uniformly, ``custom-weights`` uses ``weights``
    (length N+1) and ``fixed-table`` replays ``table[t]`` for timestamp ``t``
    (cycled past its end). Early packets are capped at ``tau <= t`` so nothing
    arrives before step 0; random kinds renormalize over the admissible range.
    """

    kind: str = "uniform-integer"
    N: int = 0
    weights: tuple | None = None
    table: tuple | None = None

    def __post_init__(self):
        if self.N < 0 or int(self.N) != self.N:
            raise ConfigError("must be an integer >= 0", "N")
        if self.kind == "uniform-integer":
            w = np.full(self.N + 1, 1.0 / (self.N + 1))
        elif self.kind == "custom-weights":
            if self.weights is None:
                raise ConfigError("custom-weights needs weights", "weights")
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.N + 1,):
                raise ConfigError(f"need {self.N + 1} entries for delays 0..N", "weights")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ConfigError("must be nonnegative and sum to 1", "weights")
        elif self.kind == "fixed-table":
            if not self.table:
                raise ConfigError("fixed-table needs a nonempty table", "table")
            tab = np.asarray(self.table)
            if np.any(tab < 0) or np.any(tab > self.N) or np.any(tab != np.round(tab)):
                raise ConfigError(f"entries must be integers in [0, {self.N}]", "table")
            object.__setattr__(self, "table", tuple(int(x) for x in tab))
            w = None
        else:
            raise ConfigError(f"unknown delay model {self.kind!r}", "kind")
        object.__setattr__(self, "weights", None if w is None else tuple(float(x) for x in w))

    def draw(self, t, rng):
        """Delay for the packet sampled at ``t``; never exceeds ``min(N, t)``."""
        cap = min(self.N, t)
        if self.kind == "fixed-table":
            return min(self.table[t % len(self.table)], cap)
        # always consume exactly one uniform so streams stay aligned
        u = rng.random()
        w = np.asarray(self.weights[: cap + 1])
        cdf = np.cumsum(w / w.sum())
        return int(min(np.searchsorted(cdf, u, side="right"), cap))


def make_stream(sensor_id, payloads, timestamps=None):
    """Packets for a sensor's measurement sequence (one row per timestamp)."""
    payloads = np.asarray(payloads, dtype=float)
    if timestamps is None:
        timestamps = range(len(payloads))
    return [Packet(sensor_id, int(t), payloads[n]) for n, t in enumerate(timestamps)]


def transmit(stream, delay_model, dropout_prob, rng):
    """Send ``stream`` through the channel and return the arrival schedule.

    Each packet is dropped with probability ``dropout_prob``; survivors get
    ``arrival = timestamp + tau``. The schedule is sorted by arrival, and
    packets arriving at the same step are ordered newest timestamp first.
    """
    out = []
    last = None
    for pkt in stream:
        if last is not None and pkt.timestamp <= last:
            raise ValueError("stream timestamps must be strictly increasing")
        last = pkt.timestamp
        dropped = rng.random() < dropout_prob
        tau = delay_model.draw(pkt.timestamp, rng)
        if not dropped:
            out.append(replace(pkt, arrival=pkt.timestamp + tau))
    out.sort(key=lambda p: (p.arrival, -p.timestamp))
    return out


def lossless(stream):
    """The identity channel: zero delay, no loss."""
    return [replace(p, arrival=p.timestamp) for p in stream]


def disorder_count(schedule):
    """Adjacent pairs (per sensor) whose arrival order inverts timestamp order."""
    count = 0
    last = {}
    for pkt in schedule:
        prev = last.get(pkt.sensor_id)
        if prev is not None and pkt.timestamp < prev:
            count += 1
        last[pkt.sensor_id] = pkt.timestamp
    return count


def channel_trace_rows(stream, schedule):
    """Rows ``(sensor_id, timestamp, arrival, dropped)`` in timestamp order."""
    arrived = {(p.sensor_id, p.timestamp): p.arrival for p in schedule}
    rows = []
    for p in stream:
        a = arrived.get((p.sensor_id, p.timestamp))
        rows.append((p.sensor_id, p.timestamp, "" if a is None else a, int(a is None)))
    return rows


def write_channel_trace(path, rows, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CHANNEL_TRACE_HEADER)
        writer.writerows(rows)
