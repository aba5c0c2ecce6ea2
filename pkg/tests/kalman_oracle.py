"""Textbook Kalman filter with correlated process and measurement noise,
written independently of the package for use as a test oracle."""

import numpy as np


def kalman(A, C, G, Gs, R, mu0, P0, Z):
    """Run ``x' = A x + G v``, ``z = C x + Gs v`` with ``v ~ N(0, R)``.

    Returns per-step filter gain, predictor gain, filtered and predicted
    estimates and their error covariances.
    """
    xp, S = mu0.astype(float).copy(), P0.astype(float).copy()
    out = {k: [] for k in ("K", "L", "xf", "xp", "Theta", "Sigma")}
    Rs = Gs @ R @ Gs.T
    for z in Z:
        Sz = C @ S @ C.T + Rs
        K = S @ C.T @ np.linalg.inv(Sz)
        L = (A @ S @ C.T + G @ R @ Gs.T) @ np.linalg.inv(Sz)
        innov = z - C @ xp
        xf = xp + K @ innov
        Theta = S - K @ Sz @ K.T
        xp = A @ xp + L @ innov
        S = A @ S @ A.T + G @ R @ G.T - L @ Sz @ L.T
        for k, v in zip(out, (K, L, xf, xp, Theta, S)):
            out[k].append(v)
    return {k: np.array(v) for k, v in out.items()}


def augmented_oracle(x, xp, F, w, v, omega, K, L, C_hat, A_hat, sys_m, sens_m):
    """Propagate one step directly from the model and filter equations.

    Returns ``(filtering error, filtered estimate)`` and
    ``(next prediction error, next prediction)``.
    """
    y = (sens_m.C + sens_m.H_cal @ F @ sens_m.E_s) @ x + sens_m.B_s @ w + sens_m.G_s @ v
    innov = y - C_hat @ xp
    xf = xp + K @ innov
    A_true = sys_m.A + sys_m.F_cal @ F @ sys_m.E + np.tensordot(omega, sys_m.A_mult, axes=1)
    x_next = A_true @ x + sys_m.B @ w + sys_m.G @ v
    xp_next = A_hat @ xp + L @ innov
    return np.concatenate([x - xf, xf]), np.concatenate([x_next - xp_next, xp_next])
