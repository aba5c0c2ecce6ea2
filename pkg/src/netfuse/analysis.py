"""Performance checks: H-infinity LMI feasibility, H2 bound, steady state, MSE.

No semidefinite solver is involved. The LMI is assembled for a given
candidate ``X`` and checked through its eigenvalues; a scalar ``X = c I``
sweep is offered as a heuristic way to find candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigError, NumericalError
from .estimator import filter_params, initial_state, propagate_bounds, sym

__all__ = [
    "ErrorSystem",
    "HinfCertificate",
    "SteadyState",
    "MseReport",
    "error_system",
    "build_delta",
    "check_hinf",
    "riccati_form",
    "riccati_feasible",
    "sprocedure_block",
    "sprocedure_feasible",
    "robust_holds_scalar",
    "search_scalar_X",
    "search_X",
    "hinf_norm",
    "h2_bound",
    "h2_lyapunov",
    "steady_state",
    "mse_report",
]

FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ErrorSystem:
    """Joint (state, prediction error) dynamics of one local filter.

    ``chi[k+1] = (A3 + dA3 + sum_j omega_j A_theta3[j]) chi[k] + B3 w + G3 v``
    with output ``D3 chi`` (the prediction error).
    """

    A3: np.ndarray
    dA3: np.ndarray
    A_theta3: np.ndarray
    B3: np.ndarray
    G3: np.ndarray
    D3: np.ndarray
    theta: np.ndarray

    @property
    def n(self):
        return self.A3.shape[0]


def error_system(params, sensor, system, F=None, t=None):
    """Error-system matrices for filter gains ``params`` and uncertainty ``F``."""
    t = params.t if t is None else t
    s, m = sensor.at(t), system.at(t)
    A, C = m.A, s.C
    L, Ch, Ah = params.L, params.C_hat, params.A_hat
    r = A.shape[0]
    p = m.E.shape[0]
    F = np.zeros((p, p)) if F is None else np.atleast_2d(F)
    Z = np.zeros((r, r))
    A3 = np.block([[A, Z], [A - Ah + L @ (Ch - C), Ah - L @ Ch]])
    dA3 = np.block([[m.F_cal @ F @ m.E, Z], [(m.F_cal - L @ s.H_cal) @ F @ m.E, Z]])
    A_theta3 = np.stack([np.block([[Aj, Z], [Aj, Z]]) for Aj in m.A_mult]) if len(m.A_mult) \
        else np.zeros((0, 2 * r, 2 * r))
    B3 = np.vstack([m.B, m.B - L @ s.B_s])
    G3 = np.vstack([m.G, m.G - L @ s.G_s])
    D3 = np.hstack([Z, np.eye(r)])
    return ErrorSystem(A3, dA3, A_theta3, B3, G3, D3, m.theta_upper.copy())


def _upsilon(es, X):
    out = np.zeros_like(X)
    for Aj, th in zip(es.A_theta3, es.theta):
        out = out + th * (Aj.T @ X @ Aj)
    return out


def build_delta(es, X, gamma):
    """The 3 x 3 block matrix whose negativity certifies the H-infinity level."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = es.n
    if X.shape != (n, n):
        raise ConfigError(f"X must be {n}x{n}, got {X.shape}", "X")
    if es.D3.shape[1] != n or es.B3.shape[0] != n:
        raise ConfigError("error-system blocks have inconsistent sizes", "blocks")
    qw = es.B3.shape[1]
    Acl = es.A3 + es.dA3
    mid = es.D3.T @ es.D3 + _upsilon(es, X) - X
    Zb = np.zeros((n, qw))
    top = np.hstack([-X, X @ Acl, X @ es.B3])
    row2 = np.hstack([(X @ Acl).T, mid, Zb])
    row3 = np.hstack([(X @ es.B3).T, Zb.T, -(gamma ** 2) * np.eye(qw)])
    return sym(np.vstack([top, row2, row3]))


@dataclass(frozen=True, eq=False)
class HinfCertificate:
    """Outcome of an LMI check. ``max_eig`` is the largest eigenvalue of the
    block matrix; the candidate is feasible when it is below ``-1e-9``."""

    X: np.ndarray
    gamma: float
    feasible: bool
    max_eig: float

    def to_dict(self):
        return {"gamma": self.gamma, "feasible": self.feasible, "max_eig": self.max_eig,
                "X": np.asarray(self.X).tolist()}


def check_hinf(X, gamma, es):
    """Check the block LMI for candidate ``X`` (symmetrized first)."""
    X = sym(np.atleast_2d(np.asarray(X, dtype=float)))
    lam = float(np.linalg.eigvalsh(build_delta(es, X, gamma)).max())
    return HinfCertificate(X, float(gamma), lam < -FEAS_TOL, lam)


def riccati_form(es, X, gamma):
    """Left side of the equivalent Riccati-type inequality, or None when
    ``gamma^2 I - B' X B`` is not positive definite."""
    X = sym(np.atleast_2d(np.asarray(X, dtype=float)))
    Acl = es.A3 + es.dA3
    BXB = es.B3.T @ X @ es.B3
    S = gamma ** 2 * np.eye(BXB.shape[0]) - BXB
    if np.linalg.eigvalsh(sym(S)).min() <= 0:
        return None
    XB = X @ es.B3
    return sym(Acl.T @ X @ Acl + es.D3.T @ es.D3 - X + _upsilon(es, X)
               + Acl.T @ XB @ np.linalg.solve(S, XB.T @ Acl))


def riccati_feasible(es, X, gamma):
    """Direct evaluation: ``X > 0``, ``gamma^2 > B'XB`` and the Riccati form < 0."""
    X = sym(np.atleast_2d(np.asarray(X, dtype=float)))
    if np.linalg.eigvalsh(X).min() <= 0:
        return False
    Q = riccati_form(es, X, gamma)
    return Q is not None and float(np.linalg.eigvalsh(Q).max()) < 0


def sprocedure_block(G1, G2, G3, sigma):
    """Block form ``[[-s I, s G2, 0], [*, G1, G3], [*, *, -s I]]``."""
    G1, G2, G3 = (np.atleast_2d(np.asarray(g, dtype=float)) for g in (G1, G2, G3))
    q, n = G2.shape
    k = G3.shape[1]
    top = np.hstack([-sigma * np.eye(q), sigma * G2, np.zeros((q, k))])
    mid = np.hstack([sigma * G2.T, G1, G3])
    bot = np.hstack([np.zeros((k, q)), G3.T, -sigma * np.eye(k)])
    return sym(np.vstack([top, mid, bot]))


def sprocedure_feasible(G1, G2, G3, bounds=(-12.0, 12.0)):
    """Search ``sigma > 0`` making the block form negative definite.

    Minimizes the largest eigenvalue over ``log(sigma)``; the objective is
    quasiconvex there, so a bounded scalar search suffices. Returns
    ``(feasible, sigma, max_eig)``.
    """
    from scipy.optimize import minimize_scalar

    f = lambda ls: float(np.linalg.eigvalsh(sprocedure_block(G1, G2, G3, np.exp(ls))).max())
    res = minimize_scalar(f, bounds=bounds, method="bounded", options={"xatol": 1e-10})
    return res.fun < 0, float(np.exp(res.x)), float(res.fun)


def robust_holds_scalar(G1, G2, G3):
    """Whether ``G1 + G3 lam G2 + (G3 lam G2)' < 0`` for every scalar
    ``|lam| <= 1``. The largest eigenvalue is convex in ``lam``, so the two
    endpoints decide it."""
    G1, G2, G3 = (np.atleast_2d(np.asarray(g, dtype=float)) for g in (G1, G2, G3))
    S = G3 @ G2
    return all(float(np.linalg.eigvalsh(G1 + lam * (S + S.T)).max()) < 0 for lam in (-1.0, 1.0))


def search_scalar_X(es, gamma, grid=None):
    """Heuristic: try ``X = c I`` over log-spaced ``c``; return the certificate
    with the most negative top eigenvalue."""
    grid = np.logspace(-4, 4, 161) if grid is None else grid
    best = None
    for c in grid:
        cert = check_hinf(c * np.eye(es.n), gamma, es)
        if best is None or cert.max_eig < best.max_eig:
            best = cert
    return best


def search_X(es, gamma, scales=None):
    """Heuristic candidate search over ``c I`` and scaled solutions of the
    performance Lyapunov equation; returns the best certificate found."""
    best = search_scalar_X(es, gamma)
    scales = np.logspace(-1, 2, 61) if scales is None else scales
    n = es.n
    for eps in (1e-6, 1e-3, 1e-1):
        try:
            base = h2_lyapunov(es, eps * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(base)) or np.linalg.eigvalsh(base)[0] <= 0:
            continue
        for a in scales:
            cert = check_hinf(a * base, gamma, es)
            if cert.max_eig < best.max_eig:
                best = cert
    return best


def hinf_norm(es, n_freq=2048):
    """Peak gain from ``w`` to the output over a frequency grid, ignoring
    the multiplicative noise (inf when the dynamics are unstable)."""
    Acl = es.A3 + es.dA3
    if np.abs(np.linalg.eigvals(Acl)).max() >= 1:
        return float("inf")
    I = np.eye(es.n)
    peak = 0.0
    for w in np.linspace(0.0, np.pi, n_freq):
        G = es.D3 @ np.linalg.solve(np.exp(1j * w) * I - Acl, es.B3)
        peak = max(peak, float(np.linalg.svd(G, compute_uv=False)[0]))
    return peak


def h2_bound(X, G3, R):
    """``trace(R G3' X G3)``."""
    X, G3, R = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (X, G3, R))
    return float(np.trace(R @ G3.T @ X @ G3))


def h2_lyapunov(es, extra=None):
    """Solve ``Acl' X Acl - X + D'D + Upsilon(X) (+ extra) = 0`` by vectorization."""
    n = es.n
    Acl = es.A3 + es.dA3
    op = np.kron(Acl.T, Acl.T) - np.eye(n * n)
    for Aj, th in zip(es.A_theta3, es.theta):
        op = op + th * np.kron(Aj.T, Aj.T)
    rhs = es.D3.T @ es.D3 + (0 if extra is None else extra)
    X = np.linalg.solve(op, -rhs.reshape(-1)).reshape(n, n)
    return sym(X)


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Result of iterating the bound recursion with frozen matrices."""

    sensor_id: int
    converged: bool
    iterations: int
    increment: float
    spectral_radius: float
    growth_factor: float
    Sigma_bar: np.ndarray
    Theta_bar: np.ndarray
    P: np.ndarray
    K: np.ndarray | None = None
    L: np.ndarray | None = None
    message: str = ""

    @property
    def trace_theta(self):
        return float(np.trace(self.Theta_bar))

    @property
    def trace_sigma(self):
        return float(np.trace(self.Sigma_bar))


def steady_state(system, sensor, W=None, alpha=3.0, max_iters=500, tol=1e-8):
    """Iterate the (Sigma_bar, P) recursion at ``t = 0`` matrices until the
    Frobenius increment drops below ``tol``.

    ``W`` is a constant disturbance second moment (default zero, the
    finite-energy limit). Divergence is reported, not raised.
    """
    m = system.at(0)
    rho = float(np.abs(np.linalg.eigvals(m.A)).max())
    state = initial_state(m, sensor.sensor_id, alpha)
    sens = sensor.at(0)
    prev_norm = None
    growth = float("nan")
    inc = float("inf")
    params = None
    Theta = state.Theta_bar
    for it in range(1, max_iters + 1):
        try:
            params = filter_params(state, sens, m, 0, W, alpha=alpha)
            Theta, Sigma, P = propagate_bounds(state, params, sens, m, 0, W, alpha=alpha,
                                               check=False)
        except NumericalError as exc:
            return SteadyState(sensor.sensor_id, False, it, inc, rho, growth, state.Sigma_bar,
                               Theta, state.P, message=f"diverged: {exc}")
        inc = float(max(np.linalg.norm(Sigma - state.Sigma_bar),
                        np.linalg.norm(P - state.P)))
        norm = float(np.linalg.norm(P))
        if prev_norm:
            growth = norm / prev_norm
        prev_norm = norm
        state = type(state)(state.sensor_id, 0, state.xf, state.xp, Sigma, P, Theta, alpha)
        if not np.all(np.isfinite(P)) or norm > 1e12:
            return SteadyState(sensor.sensor_id, False, it, inc, rho, growth, Sigma, Theta, P,
                               message="diverged: bounds grow without limit")
        if inc < tol:
            # the previous iterate was already a fixed point to tolerance
            return SteadyState(sensor.sensor_id, True, it - 1, inc, rho, growth, Sigma, Theta,
                               P, params.K, params.L, "converged")
    msg = "diverged" if rho >= 1 else "not converged within max_iters"
    return SteadyState(sensor.sensor_id, False, max_iters, inc, rho, growth, state.Sigma_bar,
                       Theta, state.P, message=msg)


@dataclass(frozen=True, eq=False)
class MseReport:
    """Mean square error per estimator (rows) and state component (columns)."""

    names: tuple
    mse: np.ndarray
    runs: int
    steps: int
    runtime: float = 0.0
    components: tuple = field(default=("position", "velocity", "acceleration"))

    def row(self, name):
        return self.mse[self.names.index(name)]

    def rows(self):
        comps = self.components
        if len(comps) != self.mse.shape[1]:
            comps = tuple(f"x{i}" for i in range(self.mse.shape[1]))
        header = ("estimator",) + tuple(comps)
        return [header] + [(n,) + tuple(float(v) for v in r) for n, r in zip(self.names, self.mse)]


def mse_report(truth, estimates, runtime=0.0, skip=0):
    """MSE per component, averaged over runs and steps ``skip..T-1``.

    ``truth`` is (runs, T, r); ``estimates`` maps names to arrays of the same
    shape.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.ndim == 2:
        truth = truth[None]
    names, rows = [], []
    for name, est in estimates.items():
        est = np.asarray(est, dtype=float)
        if est.ndim == 2:
            est = est[None]
        if est.shape != truth.shape:
            raise AlignmentError(f"{name}: shape {est.shape} differs from truth {truth.shape}")
        names.append(name)
        rows.append(((est[:, skip:] - truth[:, skip:]) ** 2).mean(axis=(0, 1)))
    return MseReport(tuple(names), np.array(rows), truth.shape[0], truth.shape[1] - skip,
                     runtime)
