"""Command-line experiment runner.

``netfuse run`` simulates a scenario and writes CSV/JSON artifacts;
``netfuse compare`` runs a baseline pipeline on the same noise and reports
both side by side. Every artifact starts with the master seed and scenario
hash, and identical invocations produce identical files. Wall-clock times go
to ``runtime.json`` only, since they are the one thing that does vary.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import error_system, hinf_norm, mse_report, search_X, steady_state
from .channel import (CHANNEL_TRACE_HEADER, channel_trace_rows, disorder_count, make_stream,
                      transmit)
from .errors import (AlignmentError, ConfigError, DelayBoundError, NumericalError,
                     StaleMeasurementError)
from .estimator import filter_params, initial_state
from .model import load_scenario, rng_for, scenario_hash
from .pipeline import CHANNELS, run_batch
from .receiver import RECEIVER_TRACE_HEADER, receive

__all__ = ["main", "build_parser", "run", "compare"]

MODES = ("single", "monte-carlo", "steady-state", "hinf-check", "golden-fig2")
BASELINES = {"zoh": ("zoh", "linear"), "one-step-prediction": ("logic-zoh", "predict"),
             "stale-hold": ("logic-zoh", "hold")}
DEFAULT_SCENARIO = {"golden-fig2": "disorder14.json"}
MSE_SKIP = 10
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class Writer:
    """Writes artifacts into one directory, stamping each with seed and hash."""

    def __init__(self, out, seed, shash):
        self.out = Path(out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory ({exc})", "out") from None
        self.seed, self.shash = seed, shash
        self.files = []

    @property
    def stamp(self):
        return f"netfuse seed={self.seed} scenario={self.shash}"

    def csv(self, name, header, rows):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.stamp}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        self.files.append(name)

    def json(self, name, payload, stamp=True):
        path = self.out / name
        if stamp:
            payload = {"seed": self.seed, "scenario_hash": self.shash, **payload}
        path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
        self.files.append(name)


def _plain(obj):
    """Convert numpy values so ``json`` can serialize them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _f(v):
    return float(v)


def _scenario(args):
    path = args.scenario or DEFAULT_SCENARIO.get(getattr(args, "mode", None), "tracking3.json")
    sc = load_scenario(path)
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=int(args.seed))
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("must be at least 1", "runs")
        sc = dataclasses.replace(sc, monte_carlo_runs=int(args.runs))
    return sc


def _settings(sc, args, **extra):
    return {"scenario": sc.name, "horizon": sc.horizon, "sensors": sc.n_sensors, "N": sc.N,
            "runs": sc.monte_carlo_runs, "channel": args.channel, "version": __version__,
            **extra}


def _mse(batch, skip=MSE_SKIP):
    skip = min(skip, batch.X.shape[1] - 1)
    est = {f"sensor{i}": batch.x_local[i] for i in range(batch.n_sensors)}
    if batch.x_fused is not None:
        est["fused"] = batch.x_fused
    return mse_report(batch.X, est, batch.runtime, skip)


def _write_mse(w, report, name="mse.csv"):
    rows = report.rows()
    w.csv(name, rows[0], [(r[0],) + tuple(_f(v) for v in r[1:]) for r in rows[1:]])


def _trace_at_step(ts, t_proc, first):
    """Per-timestamp values (R, T) read at each step's processed timestamp."""
    ext = np.concatenate([np.full(ts.shape[:1] + (1,), first), ts], axis=1)
    return np.take_along_axis(ext, t_proc + 1, axis=1)


def _write_run_traces(w, sc, batch, run_index=0):
    """Channel, receiver, estimator and fusion traces for one run."""
    n, T, L = run_index, sc.horizon, batch.n_sensors
    sys0 = sc.system.at(0)
    w.csv("channel_trace.csv", CHANNEL_TRACE_HEADER,
          [row for rows in batch.channel_rows for row in rows])
    w.csv("receiver_trace.csv", RECEIVER_TRACE_HEADER,
          [row for rows in batch.receiver_rows for row in rows])
    r = sys0.r
    w.csv("truth.csv", ("k",) + tuple(f"x{j}" for j in range(r)),
          [(k,) + tuple(_f(v) for v in batch.X[n, k]) for k in range(T)])

    tr0 = float(np.trace(sys0.P0))
    trP0 = float(np.trace(sys0.P0 + np.outer(sys0.mu0, sys0.mu0)))
    header = (("k", "sensor_id", "t") + tuple(f"xf{j}" for j in range(r))
              + ("trace_Theta", "trace_Sigma", "trace_P", "filled"))
    rows = []
    for i in range(L):
        tp = batch.t_proc[i, n:n + 1]
        th = _trace_at_step(batch.trace_theta_ts[i, n:n + 1], tp, tr0)[0]
        sg = _trace_at_step(batch.trace_sigma_ts[i, n:n + 1], tp, tr0)[0]
        pp = _trace_at_step(batch.trace_P_ts[i, n:n + 1], tp, trP0)[0]
        for k in range(T):
            rows.append((k, i, int(tp[0, k])) + tuple(_f(v) for v in batch.x_raw[i, n, k])
                        + (_f(th[k]), _f(sg[k]), _f(pp[k]), int(batch.filled[i, n, k])))
    w.csv("estimator_trace.csv", header, rows)

    if batch.x_fused is not None:
        header = (("k",) + tuple(f"x_fused{j}" for j in range(r)) + ("trace_Pfused",)
                  + tuple(f"trace_Theta_{i}" for i in range(L)))
        w.csv("fusion_trace.csv", header,
              [(k,) + tuple(_f(v) for v in batch.x_fused[n, k]) + (_f(batch.trace_P_fused[n, k]),)
               + tuple(_f(batch.trace_theta_k[i, n, k]) for i in range(L)) for k in range(T)])


def _write_bounds(w, sc, batch):
    """Mean bound traces against empirical mean-square errors per timestamp."""
    L, T = batch.n_sensors, sc.horizon
    err_ts = ((batch.xf_ts - batch.X[None]) ** 2).sum(-1).mean(axis=1)
    theta = batch.trace_theta_ts.mean(axis=1)
    header = (("t",) + tuple(f"trace_Theta_{i}" for i in range(L))
              + tuple(f"empirical_{i}" for i in range(L)))
    w.csv("bounds.csv", header,
          [(t,) + tuple(_f(theta[i, t]) for i in range(L))
           + tuple(_f(err_ts[i, t]) for i in range(L)) for t in range(T)])
    err_k = ((batch.x_local - batch.X[None]) ** 2).sum(-1).mean(axis=1)
    header = ("k",) + tuple(f"mse_sensor{i}" for i in range(L))
    cols = [err_k[i] for i in range(L)]
    if batch.x_fused is not None:
        header += ("mse_fused", "trace_Pfused")
        cols += [((batch.x_fused - batch.X) ** 2).sum(-1).mean(axis=0),
                 batch.trace_P_fused.mean(axis=0)]
    w.csv("step_errors.csv", header, [(k,) + tuple(_f(c[k]) for c in cols) for k in range(T)])


def _batch_summary(batch):
    out = {"disorders": batch.disorders.sum(axis=1), "discarded": batch.discarded.sum(axis=1),
           "regularized_steps": batch.regularized}
    if batch.x_fused is not None:
        out["max_weight_error"] = float(batch.weight_error.max())
        out["max_dominance_gap"] = float(batch.dominance_gap.max())
    return out


def _mode_simulate(sc, args, w, timing):
    runs = [0] if args.mode == "single" else range(sc.monte_carlo_runs)
    batch = run_batch(sc, runs, channel=args.channel)
    timing["pipeline"] = batch.runtime
    report = _mse(batch)
    _write_mse(w, report)
    _write_run_traces(w, sc, batch)
    if args.mode == "monte-carlo":
        _write_bounds(w, sc, batch)
    names = list(report.names)
    summary = {"settings": _settings(sc, args, mode=args.mode, compensation="linear"),
               "mse": {n: report.mse[j] for j, n in enumerate(names)},
               "mse_skip": MSE_SKIP, **_batch_summary(batch)}
    if "fused" in names:
        summary["fused_dominates"] = bool(np.all(
            report.row("fused") < np.min([report.row(n) for n in names if n != "fused"], axis=0)))
    return summary


def _mode_steady(sc, args, w, timing):
    W = None
    out, rows = [], []
    t0 = time.perf_counter()
    for s in sc.sensors:
        res = steady_state(sc.system, s, W, sc.alpha_at(0))
        out.append({"sensor_id": s.sensor_id, "converged": res.converged,
                    "iterations": res.iterations, "increment": res.increment,
                    "spectral_radius": res.spectral_radius, "growth_factor": res.growth_factor,
                    "trace_Theta": res.trace_theta, "trace_Sigma": res.trace_sigma,
                    "Theta_bar": res.Theta_bar, "message": res.message})
        rows.append((s.sensor_id, int(res.converged), res.iterations, _f(res.increment),
                     _f(res.trace_theta), _f(res.trace_sigma)))
    timing["steady_state"] = time.perf_counter() - t0
    w.csv("steady_state.csv", ("sensor_id", "converged", "iterations", "increment",
                               "trace_Theta", "trace_Sigma"), rows)
    failed = [o["sensor_id"] for o in out if not o["converged"]]
    return {"settings": _settings(sc, args, mode=args.mode), "sensors": out,
            "all_converged": not failed}


def _mode_hinf(sc, args, w, timing):
    if sc.gamma is None:
        raise ConfigError("scenario has no gamma for the H-infinity check", "gamma")
    t0 = time.perf_counter()
    certs = []
    for s in sc.sensors:
        ss = steady_state(sc.system, s, None, sc.alpha_at(0))
        m = sc.system.at(0)
        state = initial_state(m, s.sensor_id, sc.alpha_at(0))
        if ss.converged:
            state = dataclasses.replace(state, Sigma_bar=ss.Sigma_bar, P=ss.P)
        params = filter_params(state, s.at(0), m, 0, None, alpha=sc.alpha_at(0))
        # worst case over the extreme values of the norm-bounded uncertainty
        worst, norm = None, 0.0
        for f in (-1.0, 0.0, 1.0):
            es = error_system(params, s, sc.system, f * np.eye(m.E.shape[0]), 0)
            cert = search_X(es, sc.gamma)
            norm = max(norm, hinf_norm(es))
            if worst is None or cert.max_eig > worst.max_eig:
                worst, worst_f = cert, f
        certs.append({"sensor_id": s.sensor_id, "F": worst_f, "gain_estimate": norm,
                      "steady_state_gains": ss.converged, **worst.to_dict()})
    timing["hinf_check"] = time.perf_counter() - t0
    return {"settings": _settings(sc, args, mode=args.mode, gamma=sc.gamma,
                                  candidate="scaled identity or scaled Lyapunov solution"),
            "certificates": certs, "all_feasible": all(c["feasible"] for c in certs)}


def _mode_golden(sc, args, w, timing):
    """Replay one sensor's stream through the pinned channel for both holds."""
    t0 = time.perf_counter()
    T = sc.horizon
    stream = make_stream(0, np.arange(T, dtype=float)[:, None])
    rng = rng_for(sc.seed, 0, "delay", 0)
    schedule = transmit(stream, sc.delay_model, sc.dropout_prob[0], rng)
    w.csv("channel_trace.csv", CHANNEL_TRACE_HEADER, channel_trace_rows(stream, schedule))
    result = {}
    for mode in ("logic-zoh", "zoh"):
        events, rows = receive(schedule, T, mode, 0)
        name = "receiver_trace.csv" if mode == "logic-zoh" else "receiver_trace_zoh.csv"
        w.csv(name, RECEIVER_TRACE_HEADER, rows)
        accepted = {p.timestamp for _, p in events}
        arrived = sorted(p.timestamp for p in schedule if p.arrival < T)
        held, last = [], None
        for row in rows:
            if row[2] != last and row[2] != -1:
                held.append([row[0], row[2]])
            last = row[2]
        result[mode] = {"held_changes": held,
                        "discarded": [t for t in arrived if t not in accepted]}
    timing["golden"] = time.perf_counter() - t0
    return {"settings": _settings(sc, args, mode=args.mode), "disorders":
            disorder_count(schedule), "arrivals": {p.timestamp: p.arrival for p in schedule},
            **result}


MODE_FUNCS = {"single": _mode_simulate, "monte-carlo": _mode_simulate,
              "steady-state": _mode_steady, "hinf-check": _mode_hinf,
              "golden-fig2": _mode_golden}


def run(args):
    """Execute ``netfuse run``; returns the summary dict."""
    sc = _scenario(args)
    w = Writer(args.out, sc.seed, scenario_hash(sc))
    timing = {}
    t0 = time.perf_counter()
    summary = MODE_FUNCS[args.mode](sc, args, w, timing)
    timing["total"] = time.perf_counter() - t0
    summary["files"] = sorted(w.files + ["summary.json"])
    w.json("summary.json", summary)
    w.json("runtime.json", {"seconds": timing}, stamp=True)
    return summary


def compare(args):
    """Execute ``netfuse compare``: logic-ZOH with linear compensation against
    a baseline pipeline on identical noise."""
    sc = _scenario(args)
    w = Writer(args.out, sc.seed, scenario_hash(sc))
    base_channel, base_comp = BASELINES[args.baseline]
    if args.channel == "lossless":
        base_channel = "lossless"
    ours = run_batch(sc, channel=args.channel, keep_rows=False)
    theirs = run_batch(sc, channel=base_channel, compensation=base_comp, keep_rows=False)
    rows, summary = [], {}
    for label, batch in (("proposed", ours), (args.baseline, theirs)):
        rep = _mse(batch)
        for j, name in enumerate(rep.names):
            is_fused = name == "fused"
            i = None if is_fused else int(name[len("sensor"):])
            bound = (batch.trace_P_fused if is_fused else batch.trace_theta_k[i]).mean()
            rows.append((label, batch.channel, batch.compensation, name)
                        + tuple(_f(v) for v in rep.mse[j])
                        + (_f(rep.mse[j].sum()), _f(bound),
                           int(batch.disorders.sum()) if is_fused else int(batch.disorders[i].sum()),
                           int(batch.discarded.sum()) if is_fused else int(batch.discarded[i].sum())))
        summary[label] = {"mse": dict(zip(rep.names, rep.mse))}
    header = ("pipeline", "channel", "compensation", "estimator", "mse_position", "mse_velocity",
              "mse_acceleration", "mse_total", "mean_bound_trace", "disorders", "discarded")
    if ours.X.shape[-1] != 3:
        header = header[:4] + tuple(f"mse_x{j}" for j in range(ours.X.shape[-1])) + header[7:]
    w.csv("compare.csv", header, rows)
    tot = lambda lab: {k: float(np.sum(v)) for k, v in summary[lab]["mse"].items()}
    out = {"settings": _settings(sc, args, baseline=args.baseline, baseline_channel=base_channel,
                                 baseline_compensation=base_comp),
           "total_mse": {lab: tot(lab) for lab in summary}}
    out["files"] = sorted(w.files + ["summary.json"])
    w.json("summary.json", out)
    w.json("runtime.json", {"seconds": {"proposed": ours.runtime, "baseline": theirs.runtime}})
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="netfuse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"netfuse {__version__}")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--scenario", help="scenario JSON (path or shipped name)")
        sp.add_argument("--runs", type=int, help="Monte-Carlo runs (default: scenario value)")
        sp.add_argument("--seed", type=int, help="master seed (default: scenario value)")
        sp.add_argument("--channel", choices=CHANNELS, default="logic-zoh")
        sp.add_argument("--out", "--report-dir", dest="out", default="netfuse-out",
                        help="output directory")

    r = sub.add_parser("run", help="simulate and write artifacts")
    common(r)
    r.add_argument("--mode", choices=MODES, default="single")
    c = sub.add_parser("compare", help="compare against a baseline pipeline")
    common(c)
    c.add_argument("--baseline", choices=sorted(BASELINES), default="zoh")
    return p


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    # a bare flag list means "run"
    if argv and argv[0].startswith("-") and argv[0] not in ("-h", "--help", "--version"):
        argv = ["run"] + argv
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        summary = (run if args.command == "run" else compare)(args)
    except (ConfigError, AlignmentError, DelayBoundError, StaleMeasurementError) as exc:
        print(f"netfuse: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"netfuse: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(_plain({k: v for k, v in summary.items() if k != "files"}), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
