"""End-to-end simulation: channel, receiver, local filters, compensation, fusion.

Runs are processed in batches. The receiver logic is replayed per run and
reduced to a per-timestamp plan (which timestamps got a measurement and which
timestamp each sensor had reached at every step). Because the local filter
is causal in the timestamp, running it over all timestamps with that plan
and reading it back at the right index gives exactly the online result.
"""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import channel_trace_rows, disorder_count, lossless, make_stream, transmit
from .compensation import compensation_factor
from .errors import ConfigError, NumericalWarning
from .estimator import LocalFilter
from .fusion import build_pi, cross_cov_run, fuse
from .model import draw_noise, rng_for, simulate_batch
from .receiver import event_gate, receive

__all__ = ["CHANNELS", "COMPENSATIONS", "LinkPlan", "BatchResult", "plan_link", "run_batch",
           "run_monte_carlo"]

CHANNELS = ("logic-zoh", "zoh", "lossless")
COMPENSATIONS = ("linear", "predict", "hold")
CHUNK = 50


@dataclass(frozen=True, eq=False)
class LinkPlan:
    """What one sensor's filter sees during one run.

    ``measured[t]`` and ``Y[t]`` give the measurement used at timestamp ``t``;
    ``t_proc[k]`` is the last timestamp processed by the end of step ``k``.
    """

    measured: np.ndarray
    Y: np.ndarray
    t_proc: np.ndarray
    disorders: int
    discarded: int
    receiver_rows: list = field(default_factory=list)
    channel_rows: list = field(default_factory=list)


def plan_link(scenario, sensor_index, Z, run, channel="logic-zoh", fired=None, channel_run=None):
    """Send one sensor's measurements ``Z`` (T, m) through channel and receiver.

    ``fired`` optionally masks which samples the sensor transmits.
    ``channel_run`` selects the delay/drop stream (defaults to ``run``).
    """
    if channel not in CHANNELS:
        raise ConfigError(f"unknown channel mode {channel!r}", "channel")
    T, N = scenario.horizon, scenario.N
    stream = make_stream(sensor_index, Z)
    if fired is not None:
        stream = [p for p, f in zip(stream, fired) if f]
    if channel == "lossless":
        schedule = lossless(stream)
    else:
        crun = run if channel_run is None else channel_run
        rng = rng_for(scenario.seed, crun, "delay", sensor_index)
        schedule = transmit(stream, scenario.delay_model, scenario.dropout_prob[sensor_index],
                            rng)
    mode = "zoh" if channel == "zoh" else "logic-zoh"
    events, rows = receive(schedule, T, mode, sensor_index, fired)
    arrived = sum(1 for p in schedule if p.arrival < T)
    discarded = arrived - len(events)

    # only the packet held at the end of a step is processed
    last = {}
    for k, pkt in events:
        last[k] = pkt
    measured = np.zeros(T, dtype=bool)
    Y = np.zeros((T, Z.shape[1]))
    t_proc = np.empty(T, dtype=int)
    t = -1
    for k in range(T):
        pkt = last.get(k)
        if pkt is not None:
            s = pkt.timestamp
            if s > t:
                measured[s], Y[s], t = True, pkt.payload, s
            elif t < k:
                # plain hold: a stale packet is used as if it were the next sample
                measured[t + 1], Y[t + 1], t = True, pkt.payload, t + 1
        # anything sampled at or before k - N has arrived by now or is lost
        t = max(t, k - N)
        t_proc[k] = t
    return LinkPlan(measured, Y, t_proc, disorder_count(schedule), discarded, rows,
                    channel_trace_rows(stream, schedule) if fired is None
                    else channel_trace_rows(make_stream(sensor_index, Z), schedule))


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Outputs of a batch of runs. Leading axes: sensor (L), run (R), step (T).

    Arrays ending in ``_ts`` are indexed by timestamp, the rest by step ``k``.
    ``x_local`` holds the compensated estimates fed to fusion and ``x_raw``
    the uncompensated filter estimate at the last processed timestamp.
    ``dominance_gap`` is ``trace(P_fused) - min_i trace(Pi_ii)`` per step.
    """

    runs: tuple
    channel: str
    compensation: str
    X: np.ndarray
    x_local: np.ndarray
    x_raw: np.ndarray
    x_fused: np.ndarray | None
    xf_ts: np.ndarray
    t_proc: np.ndarray
    tau: np.ndarray
    filled: np.ndarray
    measured: np.ndarray
    trace_theta_ts: np.ndarray
    trace_sigma_ts: np.ndarray
    trace_P_ts: np.ndarray
    trace_theta_k: np.ndarray
    trace_P_fused: np.ndarray | None
    weight_error: np.ndarray | None
    dominance_gap: np.ndarray | None
    regularized: int
    disorders: np.ndarray
    discarded: np.ndarray
    receiver_rows: list
    channel_rows: list
    runtime: float = 0.0

    @property
    def n_runs(self):
        return len(self.runs)

    @property
    def n_sensors(self):
        return self.x_local.shape[0]


def _extend(first, arr):
    """Prepend the pre-measurement value (timestamp -1) along the time axis."""
    first = np.broadcast_to(first, arr.shape[:1] + (1,) + arr.shape[2:])
    return np.concatenate([first, arr], axis=1)


def _take(arr_ext, idx):
    """``arr_ext[r, idx[r, k]]`` for every run r and step k."""
    return arr_ext[np.arange(arr_ext.shape[0])[:, None], idx]


def _compensated(xf_ext, xp_ext, idx, tau, N, mode):
    """Estimates of ``x[k]`` from the filter state at extended index ``idx``."""
    xf = _take(xf_ext, idx)
    if mode == "hold":
        return xf
    xp = _take(xp_ext, idx)
    if mode == "linear":
        xp = compensation_factor(tau, N)[..., None] * xp
    elif mode != "predict":
        raise ConfigError(f"unknown compensation {mode!r}", "compensation")
    return np.where(tau[..., None] == 0, xf, xp)


def _batch(scenario, runs, channel, compensation, pin_channel, do_fuse, keep_rows):
    T, L, N = scenario.horizon, scenario.n_sensors, scenario.N
    noises = [draw_noise(scenario, r) for r in runs]
    X, Z = simulate_batch(scenario, noises)
    moments = scenario.disturbance_moments()
    filters = [LocalFilter(s, scenario.system, moments, scenario.alpha) for s in scenario.sensors]

    fired = [None] * L
    if scenario.trigger.active and channel != "lossless":
        full = np.ones((len(runs), T), dtype=bool)
        for i, f in enumerate(filters):
            est = f.run(full, Z[i]).xf
            fired[i] = [event_gate(est[n], scenario.trigger) for n in range(len(runs))]

    plans = [[plan_link(scenario, i, Z[i][n], r, channel,
                        None if fired[i] is None else fired[i][n],
                        channel_run=0 if pin_channel else None)
              for n, r in enumerate(runs)] for i in range(L)]
    measured = np.array([[p.measured for p in row] for row in plans])
    Ys = [np.stack([p.Y for p in row]) for row in plans]
    t_proc = np.array([[p.t_proc for p in row] for row in plans])

    trajs = [f.run(measured[i], Ys[i]) for i, f in enumerate(filters)]

    sys0 = scenario.system
    mu, P0 = sys0.mu0, sys0.P0
    k = np.arange(T)
    idx = t_proc + 1
    tau = k[None, None, :] - t_proc
    x_local = np.empty((L, len(runs), T, sys0.r))
    trace_theta_k = np.empty((L, len(runs), T))
    filled = np.empty((L, len(runs), T), dtype=int)
    xf_ext = [_extend(mu, tr.xf) for tr in trajs]
    xp_ext = [_extend(mu, tr.xp) for tr in trajs]
    theta_ext = [_extend(P0, tr.Theta_bar) for tr in trajs]
    for i in range(L):
        x_local[i] = _compensated(xf_ext[i], xp_ext[i], idx[i], tau[i], N, compensation)
        trace_theta_k[i] = np.trace(_take(theta_ext[i], idx[i]), axis1=-2, axis2=-1)
        unmeasured = np.cumsum(~measured[i], axis=1)
        filled[i] = np.where(t_proc[i] >= 0,
                             _take(_extend(np.zeros(()), unmeasured[..., None]), idx[i])[..., 0],
                             0)

    x_fused = trace_pf = weight_err = dom_gap = None
    regularized = 0
    if do_fuse:
        # cross bounds exist only for a shared timestamp: use the slowest sensor's
        ci = t_proc.min(axis=0) + 1
        grid = [[None] * L for _ in range(L)]
        for i in range(L):
            grid[i][i] = _take(theta_ext[i], ci)
            for j in range(i + 1, L):
                cross = cross_cov_run(trajs[i], trajs[j], scenario.sensors[i],
                                      scenario.sensors[j], scenario.system, moments,
                                      scenario.alpha)
                grid[i][j] = _take(_extend(P0, cross), ci)
                grid[j][i] = np.swapaxes(grid[i][j], -1, -2)
        Pi = build_pi(grid)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NumericalWarning)
            res = fuse(x_local, Pi)
        regularized = res.regularized
        x_fused = res.x_fused
        trace_pf = np.trace(res.P_fused, axis1=-2, axis2=-1)
        r = sys0.r
        weight_err = np.abs(res.Omega.sum(axis=0) - np.eye(r)).max(axis=(-2, -1))
        diag_tr = np.stack([np.trace(Pi[..., i * r:(i + 1) * r, i * r:(i + 1) * r],
                                     axis1=-2, axis2=-1) for i in range(L)])
        dom_gap = trace_pf - diag_tr.min(axis=0)

    tr_t = lambda a: np.trace(a, axis1=-2, axis2=-1)
    return dict(
        X=X,
        x_local=x_local,
        x_raw=np.stack([_take(xf_ext[i], idx[i]) for i in range(L)]),
        x_fused=x_fused,
        xf_ts=np.stack([tr.xf for tr in trajs]),
        t_proc=t_proc,
        tau=tau,
        filled=filled,
        measured=measured,
        trace_theta_ts=np.stack([tr_t(tr.Theta_bar) for tr in trajs]),
        trace_sigma_ts=np.stack([tr_t(tr.Sigma_bar) for tr in trajs]),
        trace_P_ts=np.stack([tr_t(tr.P) for tr in trajs]),
        trace_theta_k=trace_theta_k,
        trace_P_fused=trace_pf,
        weight_error=weight_err,
        dominance_gap=dom_gap,
        regularized=regularized,
        disorders=np.array([[p.disorders for p in row] for row in plans]),
        discarded=np.array([[p.discarded for p in row] for row in plans]),
        receiver_rows=[row[0].receiver_rows for row in plans] if keep_rows else [],
        channel_rows=[row[0].channel_rows for row in plans] if keep_rows else [],
    )


def _threads():
    try:
        n = int(os.environ.get("NETFUSE_THREADS", "1"))
    except ValueError:
        raise ConfigError("NETFUSE_THREADS must be an integer", "NETFUSE_THREADS") from None
    return max(1, n)


def run_batch(scenario, runs=None, channel="logic-zoh", compensation="linear",
              pin_channel=False, fuse=True, keep_rows=True):
    """Simulate the runs in ``runs`` (default: all Monte-Carlo runs).

    Runs are split into fixed-size chunks so results do not depend on the
    thread count set through ``NETFUSE_THREADS``. ``pin_channel`` reuses the
    delay/dropout realization of run 0 for every run.
    """
    if channel not in CHANNELS:
        raise ConfigError(f"unknown channel mode {channel!r}", "channel")
    if compensation not in COMPENSATIONS:
        raise ConfigError(f"unknown compensation {compensation!r}", "compensation")
    runs = tuple(range(scenario.monte_carlo_runs)) if runs is None else tuple(runs)
    if not runs:
        raise ConfigError("at least one run required", "runs")
    t0 = time.perf_counter()
    chunks = [runs[i:i + CHUNK] for i in range(0, len(runs), CHUNK)]
    job = lambda ch: _batch(scenario, ch, channel, compensation, pin_channel, fuse,
                            keep_rows and ch is chunks[0])
    workers = min(_threads(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(ch) for ch in chunks]

    def cat(key, axis):
        if parts[0][key] is None:
            return None
        return np.concatenate([p[key] for p in parts], axis=axis)

    run_axis0 = ("X", "x_fused", "trace_P_fused", "weight_error", "dominance_gap")
    merged = {}
    for key, val in parts[0].items():
        if key in ("receiver_rows", "channel_rows"):
            merged[key] = val
        elif key == "regularized":
            merged[key] = sum(p[key] for p in parts)
        else:
            merged[key] = cat(key, 0 if key in run_axis0 else 1)
    return BatchResult(runs=runs, channel=channel, compensation=compensation,
                       runtime=time.perf_counter() - t0, **merged)


def run_monte_carlo(scenario, runs=None, **kwargs):
    """Alias of :func:`run_batch` with the scenario's run count."""
    n = scenario.monte_carlo_runs if runs is None else runs
    return run_batch(scenario, range(n), **kwargs)
