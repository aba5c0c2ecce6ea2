"""Plant, sensor and scenario definitions plus ground-truth simulation.

The plant is

    x[k+1] = (A + F_cal F[k] E + sum_j A_mult[j] omega[j, k]) x[k] + B w[k] + G v[k]

and sensor ``i`` observes

    z[k] = (C + H_cal F[k] E_s) x[k] + B_s w[k] + G_s v[k].

``w`` is a deterministic finite-energy disturbance, ``v`` zero-mean Gaussian
with covariance ``R`` shared by the plant and every sensor, and ``omega`` are
zero-mean Gaussian multiplicative noises whose true variance lies in
``[theta_lower, theta_upper]``.

Any matrix field of :class:`SystemModel` or :class:`SensorModel` may be a
callable ``k -> array`` instead of a constant; use ``.at(k)`` to freeze it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "SystemModel",
    "SensorModel",
    "Waveform",
    "NoiseRealization",
    "Scenario",
    "rng_for",
    "draw_noise",
    "step_truth",
    "measure",
    "simulate",
    "load_scenario",
    "scenario_from_dict",
    "scenario_hash",
]

_SYSTEM_MATRICES = ("A", "F_cal", "E", "B", "G", "R")
_SENSOR_MATRICES = ("C", "H_cal", "E_s", "B_s", "G_s")
_ROW_MATRICES = ("E", "C", "E_s")

# stream identifiers for per-(run, kind, sensor) seed splitting
_NOISE_KINDS = {"v": 0, "omega": 1, "theta": 2, "F": 3, "x0": 4, "delay": 5, "w": 6, "drop": 7}


def _matrix(value, name, ndim=2, row=False):
    """Float array; 1-D input becomes a column, or a row when ``row``."""
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"not a numeric array ({exc})", name) from None
    if ndim == 2:
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1) if row else arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise ConfigError(f"expected {ndim} dimensions, got shape {arr.shape}", name)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("contains non-finite entries", name)
    return arr


def _check_shape(arr, shape, name):
    if arr.shape != shape:
        raise ConfigError(f"shape {arr.shape} does not match expected {shape}", name)


def _resolve(value, k):
    return value(k) if callable(value) else value


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Uncertain plant with multiplicative noise.

    Shapes: ``A`` r x r, ``F_cal`` r x p, ``E`` p x r, ``A_mult`` (h, r, r),
    ``B`` r x qw, ``G`` r x qv, ``R`` qv x qv, ``mu0`` (r,), ``P0`` r x r.
    """

    A: np.ndarray
    mu0: np.ndarray
    P0: np.ndarray
    F_cal: np.ndarray | None = None
    E: np.ndarray | None = None
    A_mult: np.ndarray | None = None
    B: np.ndarray | None = None
    G: np.ndarray | None = None
    R: np.ndarray | None = None
    theta_lower: np.ndarray | None = None
    theta_upper: np.ndarray | None = None

    def __post_init__(self):
        put = lambda name, val: object.__setattr__(self, name, val)
        A0 = _resolve(self.A, 0)
        r = _matrix(A0, "A").shape[0]
        defaults = {
            "F_cal": np.zeros((r, 1)),
            "E": np.zeros((1, r)),
            "B": np.zeros((r, 1)),
            "G": np.zeros((r, 1)),
        }
        for name, default in defaults.items():
            if getattr(self, name) is None:
                put(name, default)
        if self.R is None:
            qv = _matrix(_resolve(self.G, 0), "G").shape[1]
            put("R", np.zeros((qv, qv)))
        for name in _SYSTEM_MATRICES:
            val = getattr(self, name)
            if not callable(val):
                put(name, _matrix(val, name, row=name in _ROW_MATRICES))
        A_mult = np.zeros((0, r, r)) if self.A_mult is None else self.A_mult
        A_mult = _matrix(A_mult, "A_mult", ndim=3) if len(A_mult) else np.zeros((0, r, r))
        put("A_mult", A_mult)
        h = A_mult.shape[0]
        for name in ("theta_lower", "theta_upper"):
            val = getattr(self, name)
            val = np.zeros(h) if val is None else np.atleast_1d(np.array(val, dtype=float))
            _check_shape(val, (h,), name)
            put(name, val)
        put("mu0", np.atleast_1d(np.array(self.mu0, dtype=float)))
        put("P0", _matrix(self.P0, "P0"))
        self._validate(self.at(0))

    @property
    def time_varying(self):
        return any(callable(getattr(self, n)) for n in _SYSTEM_MATRICES)

    @property
    def r(self):
        return self.mu0.shape[0]

    @property
    def p(self):
        return np.shape(_resolve(self.E, 0))[0]

    def at(self, k):
        """Return a copy with every callable matrix evaluated at step ``k``."""
        if not self.time_varying:
            return self
        fixed = {n: _matrix(_resolve(getattr(self, n), k), n, row=n in _ROW_MATRICES) for n in _SYSTEM_MATRICES}
        return dataclasses.replace(self, **fixed)

    def _validate(self, m):
        r = m.A.shape[0]
        _check_shape(m.A, (r, r), "A")
        _check_shape(m.mu0, (r,), "mu0")
        _check_shape(m.P0, (r, r), "P0")
        p = m.F_cal.shape[1]
        _check_shape(m.F_cal, (r, p), "F_cal")
        _check_shape(m.E, (p, r), "E")
        if m.A_mult.shape[1:] != (r, r):
            raise ConfigError(f"matrices must be {r}x{r}", "A_mult")
        if m.B.shape[0] != r:
            raise ConfigError(f"needs {r} rows", "B")
        if m.G.shape[0] != r:
            raise ConfigError(f"needs {r} rows", "G")
        qv = m.G.shape[1]
        _check_shape(m.R, (qv, qv), "R")
        if np.any(self.theta_lower > self.theta_upper):
            raise ConfigError("theta_lower must not exceed theta_upper", "theta_lower")
        if np.any(self.theta_lower < 0):
            raise ConfigError("variances must be nonnegative", "theta_lower")
        if not np.allclose(m.R, m.R.T) or np.linalg.eigvalsh(m.R).min() < -1e-12:
            raise ConfigError("must be symmetric positive semidefinite", "R")
        if not np.allclose(m.P0, m.P0.T) or np.linalg.eigvalsh(m.P0).min() < -1e-12:
            raise ConfigError("must be symmetric positive semidefinite", "P0")


@dataclass(frozen=True, eq=False)
class SensorModel:
    """Uncertain linear sensor. Shapes: ``C`` m x r, ``H_cal`` m x p,
    ``E_s`` p x r, ``B_s`` m x qw, ``G_s`` m x qv."""

    C: np.ndarray
    H_cal: np.ndarray | None = None
    E_s: np.ndarray | None = None
    B_s: np.ndarray | None = None
    G_s: np.ndarray | None = None
    sensor_id: int = 0

    def __post_init__(self):
        put = lambda name, val: object.__setattr__(self, name, val)
        C0 = _matrix(_resolve(self.C, 0), "C", row=True)
        m, r = C0.shape
        if not callable(self.C):
            put("C", C0)
        defaults = {"H_cal": (m, 1), "E_s": (1, r), "B_s": (m, 1), "G_s": (m, 1)}
        for name, shape in defaults.items():
            val = getattr(self, name)
            if val is None:
                put(name, np.zeros(shape))
            elif not callable(val):
                put(name, _matrix(val, name, row=name in _ROW_MATRICES))

    @property
    def time_varying(self):
        return any(callable(getattr(self, n)) for n in _SENSOR_MATRICES)

    @property
    def m(self):
        return np.shape(_resolve(self.C, 0))[0]

    def at(self, k):
        if not self.time_varying:
            return self
        fixed = {n: _matrix(_resolve(getattr(self, n), k), n, row=n in _ROW_MATRICES) for n in _SENSOR_MATRICES}
        return dataclasses.replace(self, **fixed)

    def check_against(self, system):
        """Raise ConfigError unless dimensions agree with ``system``."""
        s, sys0 = self.at(0), system.at(0)
        tag = f"sensors[{self.sensor_id}]"
        m, r = s.C.shape
        p = sys0.E.shape[0]
        if r != sys0.r:
            raise ConfigError(f"C has {r} columns, system has {sys0.r} states", f"{tag}.C")
        _check_shape(s.H_cal, (m, s.H_cal.shape[1]), f"{tag}.H_cal")
        _check_shape(s.E_s, (s.H_cal.shape[1], r), f"{tag}.E_s")
        _check_shape(s.B_s, (m, sys0.B.shape[1]), f"{tag}.B_s")
        _check_shape(s.G_s, (m, sys0.G.shape[1]), f"{tag}.G_s")
        if s.H_cal.shape[1] != p:
            raise ConfigError(
                f"uncertainty dimension {s.H_cal.shape[1]} differs from system p={p}",
                f"{tag}.H_cal",
            )


@dataclass(frozen=True)
class Waveform:
    """Scalar signal ``amplitude * f(frequency * k + phase)``.

    ``kind`` is one of ``zero``, ``constant``, ``sin``, ``cos`` or ``uniform``
    (the last one draws i.i.d. values in ``[-amplitude, amplitude]``).
    """

    kind: str = "zero"
    amplitude: float = 1.0
    frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "sin", "cos", "uniform"):
            raise ConfigError(f"unknown waveform kind {self.kind!r}", "kind")

    def sample(self, horizon, rng=None):
        k = np.arange(horizon)
        arg = self.frequency * k + self.phase
        if self.kind == "zero":
            return np.zeros(horizon)
        if self.kind == "constant":
            return np.full(horizon, float(self.amplitude))
        if self.kind == "sin":
            return self.amplitude * np.sin(arg)
        if self.kind == "cos":
            return self.amplitude * np.cos(arg)
        if rng is None:
            raise ValueError("uniform waveform needs an rng")
        return rng.uniform(-self.amplitude, self.amplitude, size=horizon)

    @property
    def random(self):
        return self.kind == "uniform"


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """All random and deterministic inputs of one run.

    Arrays are indexed by step along axis 0: ``w`` (T, qw), ``v`` (T, qv),
    ``omega`` (T, h), ``theta`` (T, h), ``F`` (T, p, p), plus ``x0`` (r,).
    """

    w: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    F: np.ndarray
    x0: np.ndarray
    seed: int = 0
    run: int = 0

    @property
    def horizon(self):
        return self.v.shape[0]


@dataclass(frozen=True, eq=False)
class Scenario:
    """A full experiment description; see ``docs/scenario.schema.json``."""

    system: SystemModel
    sensors: tuple
    horizon: int = 300
    N: int = 0
    delay_model: object = None
    dropout_prob: tuple = ()
    trigger: object = None
    alpha: float | Sequence[float] = 3.0
    monte_carlo_runs: int = 100
    seed: int = 0
    disturbance: Waveform = field(default_factory=Waveform)
    uncertainty: Waveform = field(default_factory=Waveform)
    disturbance_moment: str | float = "exact"
    theta_true: tuple | None = None
    gamma: float | None = None
    name: str = "scenario"
    source: dict | None = None

    def __post_init__(self):
        from .channel import DelayModel
        from .receiver import TriggerConfig

        put = lambda name, val: object.__setattr__(self, name, val)
        sensors = tuple(self.sensors)
        if not sensors:
            raise ConfigError("at least one sensor required", "sensors")
        sensors = tuple(
            s if s.sensor_id == i else dataclasses.replace(s, sensor_id=i)
            for i, s in enumerate(sensors)
        )
        for s in sensors:
            s.check_against(self.system)
        put("sensors", sensors)
        if int(self.N) != self.N or self.N < 0:
            raise ConfigError("must be an integer >= 0", "N")
        put("N", int(self.N))
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("must be a positive integer", "horizon")
        put("horizon", int(self.horizon))
        if self.monte_carlo_runs < 1:
            raise ConfigError("must be >= 1", "monte_carlo_runs")
        drop = self.dropout_prob
        drop = np.zeros(len(sensors)) if drop is None or np.size(drop) == 0 else drop
        drop = np.broadcast_to(np.asarray(drop, dtype=float), (len(sensors),))
        if np.any((drop < 0) | (drop > 1)) or not np.all(np.isfinite(drop)):
            raise ConfigError("probabilities must lie in [0, 1]", "dropout_prob")
        put("dropout_prob", tuple(float(d) for d in drop))
        alpha = np.asarray(self.alpha, dtype=float)
        if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
            raise ConfigError("must be > 0", "alpha")
        if alpha.ndim == 1 and alpha.size < self.horizon:
            raise ConfigError("schedule shorter than horizon", "alpha")
        if self.delay_model is None:
            put("delay_model", DelayModel(kind="uniform-integer", N=self.N))
        elif self.delay_model.N != self.N:
            raise ConfigError(
                f"delay model bound {self.delay_model.N} differs from N={self.N}", "delay_model"
            )
        if self.trigger is None:
            put("trigger", TriggerConfig(Omega=np.eye(self.system.r), delta=0.0))
        elif self.trigger.Omega.shape != (self.system.r, self.system.r):
            raise ConfigError("Omega must be r x r", "trigger.Omega")
        moment = self.disturbance_moment
        if not (moment == "exact" or (np.isscalar(moment) and float(moment) >= 0)):
            raise ConfigError("must be 'exact' or a nonnegative number", "disturbance_moment")
        if self.uncertainty.amplitude > 1 and self.uncertainty.kind != "zero":
            raise ConfigError("amplitude must be <= 1 so that ||F|| <= 1", "uncertainty")
        if self.theta_true is not None:
            th = np.broadcast_to(np.asarray(self.theta_true, float), self.system.theta_upper.shape)
            if np.any(th < self.system.theta_lower) or np.any(th > self.system.theta_upper):
                raise ConfigError("must lie within [theta_lower, theta_upper]", "theta_true")
            put("theta_true", tuple(th))
        if self.disturbance.random and moment == "exact":
            raise ConfigError("a random disturbance needs a constant moment bound",
                              "disturbance_moment")

    @property
    def n_sensors(self):
        return len(self.sensors)

    def alpha_at(self, t):
        a = np.asarray(self.alpha, dtype=float)
        return float(a) if a.ndim == 0 else float(a[t])

    def disturbance_signal(self):
        """The deterministic disturbance sequence (T, qw), or None if random."""
        if self.disturbance.random:
            return None
        qw = self.system.at(0).B.shape[1]
        return np.repeat(self.disturbance.sample(self.horizon)[:, None], qw, axis=1)

    def disturbance_moments(self, w=None):
        """Second moments ``E(w w^T)`` used by the bound recursions, (T, qw, qw)."""
        qw = self.system.at(0).B.shape[1]
        if self.disturbance_moment == "exact":
            w = self.disturbance_signal() if w is None else w
            return w[:, :, None] * w[:, None, :]
        return np.broadcast_to(
            float(self.disturbance_moment) * np.eye(qw), (self.horizon, qw, qw)
        ).copy()


def rng_for(seed, run, kind, sensor=0):
    """Independent generator for one (run, noise kind, sensor) stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(run), _NOISE_KINDS[kind], int(sensor)))
    return np.random.default_rng(ss)


def draw_noise(scenario, run=0, seed=None):
    """Draw every random input for Monte-Carlo run ``run``."""
    seed = scenario.seed if seed is None else seed
    sys0 = scenario.system.at(0)
    T, r, p = scenario.horizon, sys0.r, sys0.E.shape[0]
    qw, qv = sys0.B.shape[1], sys0.G.shape[1]
    h = sys0.A_mult.shape[0]

    if scenario.disturbance.random:
        w = scenario.disturbance.sample(T, rng_for(seed, run, "w"))
        w = np.repeat(w[:, None], qw, axis=1)
    else:
        w = scenario.disturbance_signal()

    rng_v = rng_for(seed, run, "v")
    if callable(scenario.system.R):
        v = np.stack([_gaussian(rng_v, scenario.system.at(k).R) for k in range(T)])
    else:
        v = _gaussian(rng_v, sys0.R, size=T)

    if scenario.theta_true is not None:
        theta = np.broadcast_to(np.asarray(scenario.theta_true), (T, h)).copy()
    else:
        theta = rng_for(seed, run, "theta").uniform(
            sys0.theta_lower, sys0.theta_upper, size=(T, h)
        )
    omega = rng_for(seed, run, "omega").standard_normal((T, h)) * np.sqrt(theta)

    s = scenario.uncertainty.sample(T, rng_for(seed, run, "F"))
    F = s[:, None, None] * np.eye(p)

    x0 = sys0.mu0 + _gaussian(rng_for(seed, run, "x0"), sys0.P0)
    return NoiseRealization(w=w, v=v, omega=omega, theta=theta, F=F, x0=x0, seed=seed, run=run)


def _gaussian(rng, cov, size=None):
    """Zero-mean draw(s) with covariance ``cov`` (PSD allowed, via eigh)."""
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    if size is None:
        return root @ rng.standard_normal(cov.shape[0])
    return rng.standard_normal((size, cov.shape[0])) @ root.T


def step_truth(x, k, model, noise):
    """Advance the plant one step: returns ``x[k+1]``."""
    m = model.at(k)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.r:
        raise ConfigError(f"state has length {x.shape[-1]}, model expects {m.r}", "x")
    Ak = m.A + m.F_cal @ noise.F[k] @ m.E
    if m.A_mult.shape[0]:
        Ak = Ak + np.tensordot(noise.omega[k], m.A_mult, axes=1)
    return Ak @ x + m.B @ noise.w[k] + m.G @ noise.v[k]


def measure(sensor, x, k, noise):
    """Sensor output ``z[k]`` for state ``x``."""
    s = sensor.at(k)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != s.C.shape[1]:
        raise ConfigError(f"state has length {x.shape[-1]}, sensor expects {s.C.shape[1]}", "x")
    Ck = s.C + s.H_cal @ noise.F[k] @ s.E_s
    return Ck @ x + s.B_s @ noise.w[k] + s.G_s @ noise.v[k]


def simulate(scenario, noise):
    """Truth trajectory ``X`` (T, r) and measurement list ``[Z_i (T, m_i)]``."""
    T = scenario.horizon
    X = np.empty((T, scenario.system.r))
    X[0] = noise.x0
    for k in range(T - 1):
        X[k + 1] = step_truth(X[k], k, scenario.system, noise)
    Z = []
    for s in scenario.sensors:
        Zi = np.empty((T, s.m))
        for k in range(T):
            Zi[k] = measure(s, X[k], k, noise)
        Z.append(Zi)
    return X, Z


def simulate_batch(scenario, noises):
    """Vectorized :func:`simulate` over runs for constant models.

    Returns ``X`` (runs, T, r) and a list of ``Z_i`` (runs, T, m_i). Falls back
    to per-run simulation when any matrix is time-varying.
    """
    sysm = scenario.system
    if sysm.time_varying or any(s.time_varying for s in scenario.sensors):
        out = [simulate(scenario, n) for n in noises]
        X = np.stack([o[0] for o in out])
        Z = [np.stack([o[1][i] for o in out]) for i in range(scenario.n_sensors)]
        return X, Z
    T, R = scenario.horizon, len(noises)
    w = np.stack([n.w for n in noises])
    v = np.stack([n.v for n in noises])
    om = np.stack([n.omega for n in noises])
    F = np.stack([n.F for n in noises])
    X = np.empty((R, T, sysm.r))
    X[:, 0] = np.stack([n.x0 for n in noises])
    # per-run, per-step transition matrices (runs, T, r, r)
    Ak = sysm.A + sysm.F_cal @ F @ sysm.E
    if sysm.A_mult.shape[0]:
        Ak = Ak + np.einsum("rth,hij->rtij", om, sysm.A_mult)
    drive = w @ sysm.B.T + v @ sysm.G.T
    for k in range(T - 1):
        X[:, k + 1] = np.einsum("rij,rj->ri", Ak[:, k], X[:, k]) + drive[:, k]
    Z = []
    for s in scenario.sensors:
        Ck = s.C + s.H_cal @ F @ s.E_s
        Z.append(np.einsum("rtij,rtj->rti", Ck, X) + w @ s.B_s.T + v @ s.G_s.T)
    return X, Z


# ---------------------------------------------------------------------------
# scenario files


def _schema():
    from importlib import resources

    return json.loads(resources.files("netfuse").joinpath("scenario.schema.json").read_text())


def _waveform(d, name):
    if d is None:
        return Waveform()
    try:
        return Waveform(**d)
    except TypeError as exc:
        raise ConfigError(str(exc), name) from None


def scenario_from_dict(cfg, name="scenario"):
    """Build a :class:`Scenario` from a parsed JSON document."""
    import jsonschema

    from .channel import DelayModel
    from .receiver import TriggerConfig

    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        if list(exc.absolute_path) == ["sensors"] and exc.validator == "minItems":
            raise ConfigError("at least one sensor required", "sensors") from None
        raise ConfigError(exc.message, path) from None

    sys_cfg = dict(cfg["system"])
    for key in ("theta_lower", "theta_upper"):
        if key in sys_cfg:
            sys_cfg[key] = np.atleast_1d(sys_cfg[key])
    system = SystemModel(**sys_cfg)
    sensors = []
    for i, s in enumerate(cfg["sensors"]):
        s = dict(s)
        # the filter bounds assume sensor and plant share the uncertainty factor
        s.setdefault("E_s", sys_cfg.get("E"))
        sensors.append(SensorModel(**s, sensor_id=i))
    N = cfg.get("N", 0)
    dm = cfg.get("delay_model")
    delay_model = None
    if dm is not None:
        try:
            delay_model = DelayModel(N=N, **dm)
        except ConfigError as exc:
            raise ConfigError(str(exc), "delay_model") from None
    trig = cfg.get("trigger")
    trigger = None
    if trig is not None:
        Omega = trig.get("Omega", np.eye(system.r).tolist())
        trigger = TriggerConfig(Omega=np.array(Omega, float), delta=trig.get("delta", 0.0))
    return Scenario(
        system=system,
        sensors=sensors,
        horizon=cfg.get("horizon", 300),
        N=N,
        delay_model=delay_model,
        dropout_prob=cfg.get("dropout_prob", 0.0),
        trigger=trigger,
        alpha=cfg.get("alpha", 3.0),
        monte_carlo_runs=cfg.get("monte_carlo_runs", 100),
        seed=cfg.get("seed", 0),
        disturbance=_waveform(cfg.get("disturbance"), "disturbance"),
        uncertainty=_waveform(cfg.get("uncertainty"), "uncertainty"),
        disturbance_moment=cfg.get("disturbance_moment", "exact"),
        theta_true=cfg.get("theta_true"),
        gamma=cfg.get("gamma"),
        name=cfg.get("name", name),
        source=cfg,
    )


def load_scenario(path):
    """Load a scenario JSON file.

    ``path`` may also name a shipped scenario such as ``tracking3.json``.
    """
    p = Path(path)
    if not p.exists():
        from importlib import resources

        shipped = resources.files("netfuse").joinpath("scenarios", p.name)
        if not shipped.is_file():
            raise ConfigError(f"file not found: {path}", "scenario")
        text = shipped.read_text()
    else:
        text = p.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc})", "scenario") from None
    return scenario_from_dict(cfg, name=p.stem)


def scenario_hash(scenario):
    """Short content hash of the scenario's source document."""
    src = scenario.source if scenario.source is not None else {"name": scenario.name}
    blob = json.dumps(src, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
