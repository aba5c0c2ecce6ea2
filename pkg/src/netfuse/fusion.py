"""Cross-covariance bounds between local filters and weighted fusion.

The fused estimate is ``sum_i Omega_i x_i`` with
``Omega = (I0' Pi^-1 I0)^-1 I0' Pi^-1``, where ``Pi`` stacks the local
filtering-error (cross-)covariance bounds and ``I0`` stacks ``L`` identities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, NumericalError, NumericalWarning
from .estimator import _T, sym

__all__ = ["CrossCov", "FusionResult", "cross_cov_step", "build_pi", "fuse", "cross_cov_run"]

PI_RIDGE = 1e-9


@dataclass(frozen=True, eq=False)
class CrossCov:
    """Cross bounds between filters ``i`` and ``j``: ``Theta_ij`` at ``t`` and
    ``Sigma_ij`` at ``t + 1``."""

    i: int
    j: int
    t: int
    Theta_ij: np.ndarray
    Sigma_ij: np.ndarray

    def transpose(self):
        return CrossCov(self.j, self.i, self.t, _T(self.Theta_ij), _T(self.Sigma_ij))


@dataclass(frozen=True, eq=False)
class FusionResult:
    x_fused: np.ndarray
    Omega: np.ndarray
    Pi: np.ndarray
    P_fused: np.ndarray
    regularized: int = 0


def _solve(M, B):
    if M.shape[-1] == 1:
        return B / M
    return np.linalg.solve(M, B)


def cross_cov_step(prev, params_i, params_j, sensor_i, sensor_j, system, P, W=None,
                   alpha=3.0):
    """Advance the cross bounds one timestamp.

    ``prev.Sigma_ij`` is the prediction cross bound at ``t`` and the params
    hold both filters' gains at that same ``t``. ``P`` is the state moment
    bound at ``t``. For ``i == j`` this reproduces the single-filter bounds
    written in gain-explicit form.
    """
    if params_i.t != params_j.t:
        raise AlignmentError(f"filters at different timestamps ({params_i.t}, {params_j.t})")
    t = params_i.t
    if prev.t != t - 1:
        raise AlignmentError(f"cross bound is at {prev.t}, expected {t - 1}")
    si, sj, m = sensor_i.at(t), sensor_j.at(t), system.at(t)
    a_inv = 1.0 / alpha
    W = np.zeros((m.B.shape[1],) * 2) if W is None else np.atleast_2d(W)
    S = prev.Sigma_ij
    ST = _T(S)
    Q, QT = P - S, P - ST
    Ki, Kj = params_i.K, params_j.K
    Li, Lj = params_i.L, params_j.L
    Ci, Cj = si.C, sj.C
    Chi, Chj = params_i.C_hat, params_j.C_hat
    Ahi, Ahj = params_i.A_hat, params_j.A_hat
    r = S.shape[-1]
    I = np.eye(r)

    Mt = a_inv * np.eye(si.E_s.shape[0]) - si.E_s @ P @ sj.E_s.T
    Ei_Mt_Ej = si.E_s.T @ _solve(Mt, np.broadcast_to(sj.E_s, Mt.shape[:-2] + sj.E_s.shape))

    # filtering-error cross bound at t
    Ui, Uj = I - Ki @ Ci, I - Kj @ Cj
    Vi, Vj = Ki @ (Chi - Ci), Kj @ (Chj - Cj)
    Xi_ = S + Ki @ (Chi @ Q - Ci @ P)
    Xj_ = ST + Kj @ (Chj @ QT - Cj @ P)
    Theta = (Ui @ S @ _T(Uj) + Vi @ Q @ _T(Vj)
             + a_inv * Ki @ si.H_cal @ _T(Kj @ sj.H_cal)
             + Ki @ si.G_s @ m.R @ _T(Kj @ sj.G_s)
             + Ki @ si.B_s @ W @ _T(Kj @ sj.B_s)
             + Xi_ @ Ei_Mt_Ej @ _T(Xj_))

    # prediction-error cross bound at t+1
    Phi_i, Phi_j = m.A - Li @ Ci, m.A - Lj @ Cj
    Psi_i = m.A - Ahi + Li @ (Chi - Ci)
    Psi_j = m.A - Ahj + Lj @ (Chj - Cj)
    Yi = Phi_i @ S + Psi_i @ Q
    Yj = Phi_j @ ST + Psi_j @ QT
    mult = 0.0
    for Aj, th in zip(m.A_mult, m.theta_upper):
        mult = mult + th * (Aj @ P @ Aj.T)
    Sigma = (Phi_i @ S @ _T(Phi_j) + Psi_i @ Q @ _T(Psi_j)
             + a_inv * (m.F_cal - Li @ si.H_cal) @ _T(m.F_cal - Lj @ sj.H_cal)
             + mult
             + (m.B - Li @ si.B_s) @ W @ _T(m.B - Lj @ sj.B_s)
             + (m.G - Li @ si.G_s) @ m.R @ _T(m.G - Lj @ sj.G_s)
             + Yi @ Ei_Mt_Ej @ _T(Yj))
    if sensor_i is sensor_j:
        Theta, Sigma = sym(Theta), sym(Sigma)
    return CrossCov(prev.i, prev.j, t, Theta, Sigma)


def cross_cov_run(traj_i, traj_j, sensor_i, sensor_j, system, moments=None, alpha=3.0):
    """Cross bounds over a whole batch of filter trajectories.

    Returns ``Theta_ij`` (runs, T, r, r), index ``t`` being the timestamp.
    """
    from .estimator import FilterParams

    nruns, T, r = traj_i.xf.shape
    S = np.broadcast_to(system.P0, (nruns, r, r)).copy()
    prev = CrossCov(sensor_i.sensor_id, sensor_j.sensor_id, -1, None, S)
    out = np.empty((nruns, T, r, r))
    for t in range(T):
        pi = FilterParams(traj_i.C_hat[:, t], traj_i.K[:, t], traj_i.A_hat[:, t],
                          traj_i.L[:, t], t=t)
        pj = FilterParams(traj_j.C_hat[:, t], traj_j.K[:, t], traj_j.A_hat[:, t],
                          traj_j.L[:, t], t=t)
        W = None if moments is None else moments[t]
        a = float(np.asarray(alpha)) if np.ndim(alpha) == 0 else float(alpha[t])
        prev = cross_cov_step(prev, pi, pj, sensor_i, sensor_j, system, traj_i.P[:, t], W, a)
        out[:, t] = prev.Theta_ij
    return out


def build_pi(grid):
    """Assemble the stacked covariance from an L x L grid of blocks.

    ``grid[i][j]`` is an r x r block (or a :class:`CrossCov`), possibly with
    leading batch axes. Blocks must satisfy ``grid[j][i] == grid[i][j]'``.
    """
    blocks = [[g.Theta_ij if isinstance(g, CrossCov) else np.asarray(g) for g in row]
              for row in grid]
    L = len(blocks)
    for i in range(L):
        if len(blocks[i]) != L:
            raise ValueError("grid must be square")
        for j in range(i + 1, L):
            gap = np.abs(blocks[i][j] - _T(blocks[j][i])).max()
            scale = max(1.0, np.abs(blocks[i][j]).max())
            if gap > 1e-9 * scale:
                raise AlignmentError(f"blocks ({i},{j}) and ({j},{i}) are not transposes")
    rows = [np.concatenate(row, axis=-1) for row in blocks]
    return sym(np.concatenate(rows, axis=-2))


def _regularize(Pi):
    """Ridge any non-PD matrices in a (batched) stack. Returns (Pi, count)."""
    n = Pi.shape[-1]
    eig_min = np.linalg.eigvalsh(Pi)[..., 0]
    scale = np.abs(np.trace(Pi, axis1=-2, axis2=-1))
    bad = ~(eig_min > 1e-12 * np.maximum(scale, 1e-300))
    count = int(np.count_nonzero(bad))
    if count:
        warnings.warn(f"stacked covariance not positive definite in {count} case(s); "
                      "adding a ridge", NumericalWarning, stacklevel=3)
        floor = np.where(scale > 0, PI_RIDGE * scale / n, PI_RIDGE)
        # lift the smallest eigenvalue to the floor
        ridge = np.where(bad, floor + np.clip(-eig_min, 0.0, None), 0.0)
        Pi = Pi + ridge[..., None, None] * np.eye(n)
    return Pi, count


def fuse(x_locals, Pi):
    """Optimally weighted combination of ``L`` local estimates.

    ``x_locals`` has shape (L, ..., r) and ``Pi`` (..., rL, rL).
    """
    x_locals = np.asarray(x_locals, dtype=float)
    L, r = x_locals.shape[0], x_locals.shape[-1]
    Pi = np.asarray(Pi, dtype=float)
    if Pi.shape[-1] != r * L:
        raise ValueError(f"Pi is {Pi.shape[-1]} wide, expected {r * L}")
    if not np.all(np.isfinite(Pi)):
        raise NumericalError("stacked covariance has non-finite entries")
    Pi_reg, count = _regularize(Pi)
    I0 = np.tile(np.eye(r), (L, 1))
    try:
        chol = np.linalg.cholesky(Pi_reg)
    except np.linalg.LinAlgError:
        raise NumericalError("stacked covariance singular after regularization") from None
    # whiten: with Pi = C C', Z = C^-1 I0 = Q R gives (I0' Pi^-1 I0)^-1 = R^-1 R^-T and
    # Omega = R^-1 Q' C^-1, which keeps sum(Omega) = I accurate for ill-conditioned Pi
    Cinv = np.linalg.solve(chol, np.broadcast_to(np.eye(r * L), Pi.shape))
    Q, Rq = np.linalg.qr(Cinv @ I0)
    Omega_stacked = np.linalg.solve(Rq, _T(Q) @ Cinv)  # (..., r, rL)
    Rinv = np.linalg.solve(Rq, np.broadcast_to(np.eye(r), Rq.shape))
    P_fused = sym(Rinv @ _T(Rinv))
    Omega = np.stack([Omega_stacked[..., i * r:(i + 1) * r] for i in range(L)])
    x_fused = np.einsum("l...ij,l...j->...i", Omega, x_locals)
    return FusionResult(x_fused, Omega, Pi, P_fused, regularized=count)
