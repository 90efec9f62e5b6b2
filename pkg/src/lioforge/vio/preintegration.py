"""Midpoint IMU preintegration and the 9-dof inertial residual.

Error state and residual ordering is (position, velocity, rotation).
Biases are held at their linearisation point; gravity enters the residual,
not the integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import hat, right_jacobian_inv, so3_exp, so3_log

GRAVITY = np.array([0.0, 0.0, -9.81])


class PreintegrationError(ValueError):
    pass


@dataclass
class ImuPreintegration:
    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    duration: float
    covariance: np.ndarray
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start: float = 0.0

    def compose(self, other: "ImuPreintegration") -> "ImuPreintegration":
        """Chain ``self`` (earlier interval) with ``other``; covariance propagated linearly."""
        dR = self.dR @ other.dR
        dv = self.dv + self.dR @ other.dv
        dp = self.dp + self.dv * other.duration + self.dR @ other.dp
        A = np.eye(9)
        A[0:3, 3:6] = np.eye(3) * other.duration
        A[0:3, 6:9] = -self.dR @ hat(other.dp)
        A[3:6, 6:9] = -self.dR @ hat(other.dv)
        A[6:9, 6:9] = other.dR.T
        # ``other`` covariance is expressed in its own start frame
        Bm = np.eye(9)
        Bm[0:3, 0:3] = self.dR
        Bm[3:6, 3:6] = self.dR
        cov = A @ self.covariance @ A.T + Bm @ other.covariance @ Bm.T
        return ImuPreintegration(dR, dv, dp, self.duration + other.duration, cov,
                                 self.bias_gyro, self.bias_acc, self.start)


def preintegrate(stamps, gyro, accel, bias_gyro=None, bias_acc=None,
                 gyro_sigma: float = 2e-3, acc_sigma: float = 2e-2) -> ImuPreintegration:
    """Integrate samples with the midpoint rule.

    ``gyro_sigma`` / ``acc_sigma`` are per-sample white-noise standard
    deviations (rad/s, m/s^2).
    """
    stamps = np.asarray(stamps, dtype=float)
    gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
    accel = np.asarray(accel, dtype=float).reshape(-1, 3)
    if len(stamps) < 2:
        raise PreintegrationError("need at least two samples")
    if not (len(stamps) == len(gyro) == len(accel)):
        raise PreintegrationError("stamp / sample count mismatch")
    if np.any(np.diff(stamps) <= 0):
        raise PreintegrationError("sample stamps must be strictly increasing")
    bg = np.zeros(3) if bias_gyro is None else np.asarray(bias_gyro, dtype=float)
    ba = np.zeros(3) if bias_acc is None else np.asarray(bias_acc, dtype=float)

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    P = np.zeros((9, 9))
    # each sample enters two consecutive midpoint steps; treating the halves as
    # independent would halve the accumulated variance, so they are doubled
    Q = 2.0 * np.diag(np.r_[[acc_sigma**2] * 3, [gyro_sigma**2] * 3,
                            [acc_sigma**2] * 3, [gyro_sigma**2] * 3])
    I3 = np.eye(3)
    for k in range(len(stamps) - 1):
        dt = stamps[k + 1] - stamps[k]
        w = 0.5 * (gyro[k] + gyro[k + 1]) - bg
        a0 = accel[k] - ba
        a1 = accel[k + 1] - ba
        dR1 = dR @ so3_exp(w * dt)
        a_mid = 0.5 * (dR @ a0 + dR1 @ a1)
        dp_new = dp + dv * dt + 0.5 * a_mid * dt * dt
        dv_new = dv + a_mid * dt

        Wx = I3 - hat(w) * dt
        Ra0 = dR @ hat(a0)
        Ra1 = dR1 @ hat(a1)
        F = np.eye(9)
        F[0:3, 3:6] = I3 * dt
        F[0:3, 6:9] = -0.25 * (Ra0 + Ra1 @ Wx) * dt * dt
        F[3:6, 6:9] = -0.5 * (Ra0 + Ra1 @ Wx) * dt
        F[6:9, 6:9] = Wx
        V = np.zeros((9, 12))
        V[0:3, 0:3] = 0.25 * dR * dt * dt
        V[0:3, 3:6] = -0.125 * Ra1 * dt * dt * dt
        V[0:3, 6:9] = 0.25 * dR1 * dt * dt
        V[0:3, 9:12] = V[0:3, 3:6]
        V[3:6, 0:3] = 0.5 * dR * dt
        V[3:6, 3:6] = -0.25 * Ra1 * dt * dt
        V[3:6, 6:9] = 0.5 * dR1 * dt
        V[3:6, 9:12] = V[3:6, 3:6]
        V[6:9, 3:6] = 0.5 * I3 * dt
        V[6:9, 9:12] = 0.5 * I3 * dt
        P = F @ P @ F.T + V @ Q @ V.T

        dR, dv, dp = dR1, dv_new, dp_new
    # re-orthonormalise accumulated rotation
    u, _, vt = np.linalg.svd(dR)
    dR = u @ vt
    return ImuPreintegration(dR, dv, dp, float(stamps[-1] - stamps[0]), 0.5 * (P + P.T),
                             bg.copy(), ba.copy(), float(stamps[0]))


def sqrt_information(cov: np.ndarray) -> np.ndarray:
    """Upper-triangular L with L^T L = cov^-1; raises on singular covariance."""
    cov = 0.5 * (cov + cov.T)
    w = np.linalg.eigvalsh(cov)
    if w.min() <= 1e-14 * max(w.max(), 1e-300):
        raise PreintegrationError(
            f"singular preintegration covariance (eigenvalues {w.min():.3e} .. {w.max():.3e})")
    info = np.linalg.inv(cov)
    L = np.linalg.cholesky(0.5 * (info + info.T))
    return L.T


def imu_residual(pre: ImuPreintegration, state_i, state_k1, gravity=GRAVITY,
                 sqrt_info: np.ndarray | None = None, jacobians: bool = True,
                 check_duration: tuple | None = None):
    """Whitened 9-residual between two (pose, velocity) states.

    States are ``(Pose, velocity)`` pairs. Jacobians are 9x9 per state with
    columns ordered (rotation, translation, velocity) to match the state
    perturbation used by the window optimiser.
    """
    if check_duration is not None:
        gap = check_duration[1] - check_duration[0]
        if abs(gap - pre.duration) > 1e-6:
            raise PreintegrationError(
                f"preintegration spans {pre.duration:.6f}s but states are {gap:.6f}s apart")
    (Pi, vi), (Pj, vj) = state_i, state_k1
    Ri, pi = Pi.R, Pi.t
    Rj, pj = Pj.R, Pj.t
    vi = np.asarray(vi, dtype=float)
    vj = np.asarray(vj, dtype=float)
    g = np.asarray(gravity, dtype=float)
    T = pre.duration
    if sqrt_info is None:
        sqrt_info = sqrt_information(pre.covariance)

    a = Ri.T @ (pj - pi - vi * T - 0.5 * g * T * T)
    b = Ri.T @ (vj - vi - g * T)
    E = pre.dR.T @ Ri.T @ Rj
    r_rot = so3_log(E)
    r = np.concatenate([a - pre.dp, b - pre.dv, r_rot])
    rw = sqrt_info @ r
    if not jacobians:
        return rw, None

    Jinv = right_jacobian_inv(r_rot)
    Ji = np.zeros((9, 9))
    Jj = np.zeros((9, 9))
    # position block
    Ji[0:3, 0:3] = hat(a)
    Ji[0:3, 3:6] = -Ri.T
    Ji[0:3, 6:9] = -Ri.T * T
    Jj[0:3, 3:6] = Ri.T
    # velocity block
    Ji[3:6, 0:3] = hat(b)
    Ji[3:6, 6:9] = -Ri.T
    Jj[3:6, 6:9] = Ri.T
    # rotation block
    Ji[6:9, 0:3] = -Jinv @ Rj.T @ Ri
    Jj[6:9, 0:3] = Jinv
    return rw, (sqrt_info @ Ji, sqrt_info @ Jj)
