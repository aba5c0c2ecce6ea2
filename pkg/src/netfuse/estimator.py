"""Robust finite-horizon local filter with guaranteed covariance bounds.

Each local filter keeps the estimates ``xf = x[t|t]`` and ``xp = x[t+1|t]``
and three bound matrices: ``Theta_bar`` dominates the filtering-error
covariance at ``t``, ``Sigma_bar`` the prediction-error covariance at ``t+1``
and ``P`` the state second moment at ``t+1``.

All step functions broadcast over leading axes, so a stack of states for
many Monte-Carlo runs can be advanced in one call. Matrices are then shaped
``(..., r, r)`` and vectors ``(..., r)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, NumericalWarning, StaleMeasurementError

__all__ = [
    "LocalFilterState",
    "FilterParams",
    "AugmentedModel",
    "initial_state",
    "filter_params",
    "update",
    "propagate_bounds",
    "step",
    "uncertainty_bound",
    "lemma3_bound",
    "build_augmented",
    "LocalFilter",
    "FilterTrajectory",
]

PSD_TOL = 1e-9
RIDGE = 1e-10


def _T(X):
    return np.swapaxes(X, -1, -2)


def sym(X):
    return 0.5 * (X + _T(X))


def _require_pd(M, what):
    eig = np.linalg.eigvalsh(M).min()
    if not eig > 0:
        raise NumericalError(f"{what} is not positive definite: alpha too large or bound blow-up",
                             float(eig))


def _require_psd(X, what):
    eigs = np.linalg.eigvalsh(X)
    scale = np.maximum(1.0, np.abs(eigs).max(axis=-1))
    worst = (eigs.min(axis=-1) / scale).min()
    if worst < -PSD_TOL:
        raise NumericalError(f"{what} lost positive semidefiniteness", float(eigs.min()))


def _solve_sym(S, B, what):
    """``S^{-1} B`` for a symmetric ``S``, with a ridge if it is singular."""
    m = S.shape[-1]
    cond = np.linalg.cond(S)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        warnings.warn(f"{what} is near singular; adding a Tikhonov ridge", NumericalWarning,
                      stacklevel=3)
        ridge = RIDGE * np.trace(S, axis1=-2, axis2=-1) / m
        ridge = np.where(ridge > 0, ridge, RIDGE)
        S = S + ridge[..., None, None] * np.eye(m)
    return np.linalg.solve(S, B)


@dataclass(frozen=True, eq=False)
class LocalFilterState:
    """Estimates and bound matrices after processing timestamp ``t``."""

    sensor_id: int
    t: int
    xf: np.ndarray
    xp: np.ndarray
    Sigma_bar: np.ndarray
    P: np.ndarray
    Theta_bar: np.ndarray
    alpha: float = 3.0


@dataclass(frozen=True, eq=False)
class FilterParams:
    """Gains for timestamp ``t`` plus intermediates reused by the bounds.

    ``measured`` is False (or a boolean array over runs) for prediction-only
    steps, in which case ``K`` and ``L`` are zero.
    """

    C_hat: np.ndarray
    K: np.ndarray
    A_hat: np.ndarray
    L: np.ndarray
    t: int = 0
    measured: object = True
    Sigma_tilde: np.ndarray | None = None
    Xi: np.ndarray | None = None
    S_E_Mt_E_S: np.ndarray | None = None
    Nabla: np.ndarray | None = None


def initial_state(system, sensor_id=0, alpha=3.0):
    """State before any measurement: ``t = -1`` with both estimates at ``mu0``."""
    mu = system.mu0
    P0 = system.P0
    return LocalFilterState(
        sensor_id=sensor_id,
        t=-1,
        xf=mu.copy(),
        xp=mu.copy(),
        Sigma_bar=P0.copy(),
        P=np.outer(mu, mu) + P0,
        Theta_bar=P0.copy(),
        alpha=alpha,
    )


def _moment(W, qw):
    return np.zeros((qw, qw)) if W is None else np.atleast_2d(W)


def filter_params(state, sensor, system, t=None, W=None, measured=True, alpha=None):
    """Gains ``C_hat, K, A_hat, L`` for timestamp ``t = state.t + 1``.

    ``W`` is the disturbance second moment ``E(w w^T)`` at ``t``.
    """
    t = state.t + 1 if t is None else t
    s, m = sensor.at(t), system.at(t)
    a_inv = 1.0 / (state.alpha if alpha is None else alpha)
    W = _moment(W, m.B.shape[1])
    S, P = state.Sigma_bar, state.P
    E, C, A = s.E_s, s.C, m.A
    p = E.shape[0]
    Ip = np.eye(p)

    M = a_inv * Ip - E @ S @ E.T
    Mt = a_inv * Ip - E @ P @ E.T
    _require_pd(M, "M = alpha^-1 I - E Sigma E'")
    _require_pd(Mt, "M~ = alpha^-1 I - E P E'")

    J = S @ E.T @ np.linalg.solve(M, np.broadcast_to(E, M.shape[:-2] + E.shape))
    St = sym(S + J @ S)
    C_hat = C + C @ J
    A_hat = A + A @ J
    SEMES = sym(S @ E.T @ np.linalg.solve(Mt, np.broadcast_to(E, Mt.shape[:-2] + E.shape)) @ S)

    noise = a_inv * s.H_cal @ s.H_cal.T + s.B_s @ W @ s.B_s.T + s.G_s @ m.R @ s.G_s.T
    Lam = St @ C.T
    Xi = sym(C @ St @ C.T + noise)
    K = _T(_solve_sym(Xi, _T(Lam), "Xi"))

    Delta = A @ St @ C.T + a_inv * m.F_cal @ s.H_cal.T + m.B @ W @ s.B_s.T + m.G @ m.R @ s.G_s.T
    Nabla = sym(C @ (S + SEMES) @ C.T + noise)
    L = _T(_solve_sym(Nabla, _T(Delta), "Nabla"))

    if measured is not True:
        mask = np.asarray(measured, dtype=float)[..., None, None]
        K = K * mask
        L = L * mask
    return FilterParams(C_hat, K, A_hat, L, t=t, measured=measured, Sigma_tilde=St, Xi=Xi,
                        S_E_Mt_E_S=SEMES, Nabla=Nabla)


def prediction_params(state, sensor, system, t=None, W=None, alpha=None):
    """Parameters for a step without a measurement (``K = L = 0``)."""
    return filter_params(state, sensor, system, t, W, measured=False, alpha=alpha)


def update(state, params, y=None):
    """Advance the estimates with measurement ``y`` (None: prediction only)."""
    xp = state.xp
    if y is None:
        innov_f = innov_p = 0.0
    else:
        innov = np.asarray(y, dtype=float) - np.einsum("...ij,...j->...i", params.C_hat, xp)
        innov_f = np.einsum("...ij,...j->...i", params.K, innov)
        innov_p = np.einsum("...ij,...j->...i", params.L, innov)
    xf = xp + innov_f
    xp_next = np.einsum("...ij,...j->...i", params.A_hat, xp) + innov_p
    return replace(state, t=params.t, xf=xf, xp=xp_next)


def propagate_bounds(state, params, sensor, system, t=None, W=None, alpha=None, check=True):
    """``(Theta_bar[t], Sigma_bar[t+1], P[t+1])`` for the gains in ``params``."""
    t = params.t if t is None else t
    s, m = sensor.at(t), system.at(t)
    a_inv = 1.0 / (state.alpha if alpha is None else alpha)
    W = _moment(W, m.B.shape[1])
    S, P = state.Sigma_bar, state.P
    St, K, L = params.Sigma_tilde, params.K, params.L
    A, C = m.A, s.C

    Theta = sym(S + params.S_E_Mt_E_S - K @ params.Xi @ _T(K))

    plant_noise = a_inv * m.F_cal @ m.F_cal.T + m.B @ W @ m.B.T + m.G @ m.R @ m.G.T
    mult = 0.0
    for Aj, th in zip(m.A_mult, m.theta_upper):
        mult = mult + th * (Aj @ P @ Aj.T)
    D_tilde = A @ St @ A.T + plant_noise + mult
    N_tilde = (C @ St @ A.T + a_inv * s.H_cal @ m.F_cal.T + s.B_s @ W @ m.B.T
               + s.G_s @ m.R @ m.G.T)
    Sigma_next = sym(D_tilde - L @ N_tilde)

    E = m.E
    Mt = a_inv * np.eye(E.shape[0]) - E @ P @ E.T
    _require_pd(Mt, "alpha^-1 I - E P E' (state bound)")
    PE = P @ E.T
    inflated = P + PE @ np.linalg.solve(Mt, _T(PE))
    P_next = sym(A @ inflated @ A.T + plant_noise + mult)
    if check:
        _require_psd(Theta, "Theta_bar")
        _require_psd(Sigma_next, "Sigma_bar")
        _require_psd(P_next, "P")
    return Theta, Sigma_next, P_next


def step(state, sensor, system, y=None, W=None, alpha=None, measured=None):
    """Process timestamp ``state.t + 1`` with ``y`` (or predict when None).

    Returns ``(new_state, params)``.
    """
    t = state.t + 1
    if measured is None:
        measured = y is not None
    params = filter_params(state, sensor, system, t, W, measured=measured, alpha=alpha)
    Theta, Sigma, P = propagate_bounds(state, params, sensor, system, t, W, alpha=alpha)
    new = update(state, params, None if measured is False else y)
    return replace(new, Theta_bar=Theta, Sigma_bar=Sigma, P=P), params


def uncertainty_bound(A, H, E, X, alpha, F_norm_bound=1.0):
    """Upper bound of ``(A + H F E) X (A + H F E)'`` over ``||F|| <= F_norm_bound``.

    Evaluates ``A (X + X E' (alpha^-1 I - E X E')^-1 E X) A' + alpha^-1 H H'``,
    the same as ``A (X^-1 - alpha E'E)^-1 A' + alpha^-1 H H'`` when ``X`` is
    invertible but well defined for singular ``X`` too.
    """
    A, H, E, X = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (A, H, E, X))
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    H = F_norm_bound * H
    M = np.eye(E.shape[0]) / alpha - E @ X @ E.T
    _require_pd(M, "alpha^-1 I - E X E'")
    XE = X @ E.T
    inner = X + XE @ np.linalg.solve(M, XE.T)
    return sym(A @ inner @ A.T + H @ H.T / alpha)


# name required by the public interface
lemma3_bound = uncertainty_bound


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    """Block matrices of the joint (error, estimate) dynamics."""

    A_t1: np.ndarray
    H_t1: np.ndarray
    E_t1: np.ndarray
    B_t1: np.ndarray
    G_t1: np.ndarray
    A_t2: np.ndarray
    H_t2: np.ndarray
    E_t2: np.ndarray
    A_theta_t2: np.ndarray
    B_t2: np.ndarray
    G_t2: np.ndarray


def build_augmented(params, sensor, system, t=None):
    """Augmented matrices for the filter and predictor error dynamics.

    The first set maps ``(prediction error, prediction)`` at ``t`` to
    ``(filtering error, filtered estimate)``; the second maps it to
    ``(prediction error, prediction)`` at ``t+1``.
    """
    t = params.t if t is None else t
    s, m = sensor.at(t), system.at(t)
    K, L, Ch, Ah = params.K, params.L, params.C_hat, params.A_hat
    A, C = m.A, s.C
    r = A.shape[0]
    I = np.eye(r)
    Z = np.zeros((r, r))
    A_t1 = np.block([[I - K @ C, K @ (Ch - C)], [K @ C, I + K @ (C - Ch)]])
    H_t1 = np.vstack([-K @ s.H_cal, K @ s.H_cal])
    E_t1 = np.hstack([s.E_s, s.E_s])
    B_t1 = np.vstack([-K @ s.B_s, K @ s.B_s])
    G_t1 = np.vstack([-K @ s.G_s, K @ s.G_s])
    A_t2 = np.block([[A - L @ C, A - Ah + L @ (Ch - C)], [L @ C, Ah + L @ (C - Ch)]])
    H_t2 = np.vstack([m.F_cal - L @ s.H_cal, L @ s.H_cal])
    E_t2 = np.hstack([s.E_s, s.E_s])
    A_theta = np.stack([np.block([[Aj, Aj], [Z, Z]]) for Aj in m.A_mult]) if len(m.A_mult) \
        else np.zeros((0, 2 * r, 2 * r))
    B_t2 = np.vstack([m.B - L @ s.B_s, L @ s.B_s])
    G_t2 = np.vstack([m.G - L @ s.G_s, L @ s.G_s])
    return AugmentedModel(A_t1, H_t1, E_t1, B_t1, G_t1, A_t2, H_t2, E_t2, A_theta, B_t2, G_t2)


@dataclass(frozen=True, eq=False)
class FilterTrajectory:
    """Per-timestamp filter outputs, stacked over runs on axis 0.

    Index ``t`` of every array refers to timestamp ``t``; ``Sigma_bar`` and
    ``P`` are the bounds *used* at ``t`` (the prior for that timestamp).
    """

    sensor_id: int
    xf: np.ndarray
    xp: np.ndarray
    Theta_bar: np.ndarray
    Sigma_bar: np.ndarray
    P: np.ndarray
    K: np.ndarray
    L: np.ndarray
    C_hat: np.ndarray
    A_hat: np.ndarray
    measured: np.ndarray

    @property
    def horizon(self):
        return self.xf.shape[1]


class LocalFilter:
    """Local filter bound to one sensor and a system model.

    ``moments`` gives ``E(w w^T)`` per timestamp (T, qw, qw) and ``alpha`` is
    a scalar or a per-timestamp schedule.
    """

    def __init__(self, sensor, system, moments=None, alpha=3.0):
        self.sensor = sensor
        self.system = system
        self.moments = moments
        self.alpha = alpha

    def alpha_at(self, t):
        a = np.asarray(self.alpha, dtype=float)
        return float(a) if a.ndim == 0 else float(a[t])

    def W(self, t):
        return None if self.moments is None else self.moments[t]

    def initial_state(self):
        return initial_state(self.system, self.sensor.sensor_id, self.alpha_at(0))

    def step(self, state, y=None):
        t = state.t + 1
        new, params = step(state, self.sensor, self.system, y, self.W(t), alpha=self.alpha_at(t))
        return replace(new, alpha=self.alpha_at(t)), params

    def fill(self, state, s):
        """Prediction-only steps from ``state.t + 1`` up to ``s - 1``."""
        if s <= state.t:
            raise StaleMeasurementError(f"timestamp {s} is not newer than {state.t}")
        out = []
        while state.t + 1 < s:
            state, _ = self.step(state)
            out.append(state)
        return out

    def run(self, measured, Y):
        """Process timestamps ``0..T-1`` for a batch of runs.

        ``measured`` is a boolean array (runs, T) and ``Y`` the measurement
        used at each timestamp (runs, T, m); entries where ``measured`` is
        False are ignored.
        """
        measured = np.asarray(measured, dtype=bool)
        nruns, T = measured.shape
        r, m = self.system.r, self.sensor.m
        s0 = self.initial_state()
        tile = lambda X: np.broadcast_to(X, (nruns,) + X.shape).copy()
        state = replace(s0, xf=tile(s0.xf), xp=tile(s0.xp), Sigma_bar=tile(s0.Sigma_bar),
                        P=tile(s0.P), Theta_bar=tile(s0.Theta_bar))
        # unmeasured entries get zero gains, so any finite placeholder works
        Y = np.where(measured[..., None], np.nan_to_num(np.asarray(Y, dtype=float)), 0.0)
        shared = bool((measured == measured[:1]).all())
        out = {
            "xf": np.empty((nruns, T, r)),
            "xp": np.empty((nruns, T, r)),
            "Theta_bar": np.empty((nruns, T, r, r)),
            "Sigma_bar": np.empty((nruns, T, r, r)),
            "P": np.empty((nruns, T, r, r)),
            "K": np.empty((nruns, T, r, m)),
            "L": np.empty((nruns, T, r, m)),
            "C_hat": np.empty((nruns, T, m, r)),
            "A_hat": np.empty((nruns, T, r, r)),
        }
        if shared:
            # every run sees the same arrival pattern: compute the bounds once
            state = replace(state, Sigma_bar=s0.Sigma_bar, P=s0.P, Theta_bar=s0.Theta_bar)
        for t in range(T):
            a = self.alpha_at(t)
            flag = bool(measured[0, t]) if shared else measured[:, t]
            params = filter_params(state, self.sensor, self.system, t, self.W(t),
                                   measured=flag, alpha=a)
            Theta, Sigma, P = propagate_bounds(state, params, self.sensor, self.system, t,
                                               self.W(t), alpha=a)
            out["Sigma_bar"][:, t] = state.Sigma_bar
            out["P"][:, t] = state.P
            new = update(state, params, Y[:, t])
            state = replace(new, Theta_bar=Theta, Sigma_bar=Sigma, P=P, alpha=a)
            out["xf"][:, t] = state.xf
            out["xp"][:, t] = state.xp
            out["Theta_bar"][:, t] = Theta
            out["K"][:, t] = params.K
            out["L"][:, t] = params.L
            out["C_hat"][:, t] = params.C_hat
            out["A_hat"][:, t] = params.A_hat
        return FilterTrajectory(sensor_id=self.sensor.sensor_id, measured=measured, **out)
