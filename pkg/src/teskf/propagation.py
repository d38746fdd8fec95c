"""Discrete transition / accumulated-noise matrices and covariance propagation.

``efficient_propagate`` factors the transformed transition through the fixed
15x15 IMU core::

    Phi*_k = T(x_{k+1|k}) diag(Phi_I, I) T(x_{k|k})^-1
    Q*_k   = T(x_{k+1|k}) diag(Q_I, 0) T(x_{k+1|k})^T

``naive_propagate`` integrates the full (15+3m) system directly and serves
as its oracle and as the benchmark baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import IMU_DIM, ImuSample, ImuState, NoiseParams, VinsState, _check_dt
from .transform import ErrorTransform, left_mul, right_mul, sandwich, symmetrize

log = logging.getLogger(__name__)


@dataclass
class ImuAccumulation:
    Phi: np.ndarray
    Q: np.ndarray
    t_start: float
    t_end: float
    start: ImuState | None = None
    end: ImuState | None = None


def _arrays(samples):
    t = np.array([s.t for s in samples], dtype=float)
    gyro = np.array([s.gyro for s in samples], dtype=float).reshape(-1, 3)
    accel = np.array([s.accel for s in samples], dtype=float).reshape(-1, 3)
    return t, gyro, accel


def imu_step(state: ImuState, s0: ImuSample, s1: ImuSample, noise: NoiseParams):
    """RK4 over one IMU interval; returns ``(Phi_step, Q_step, state_1)``."""
    dt = _check_dt(s0.t, s1.t)
    R, p, v, Phi, Q = _kernels.rk4_step(
        state.R, state.p, state.v, state.bg, state.ba,
        np.asarray(s0.gyro, float), np.asarray(s0.accel, float),
        np.asarray(s1.gyro, float), np.asarray(s1.accel, float),
        dt, np.asarray(noise.gravity, float), noise.qc, True,
    )
    return Phi, Q, ImuState(R, p, v, state.bg.copy(), state.ba.copy())


def accumulate(steps, t_start: float | None = None, nominal_period: float | None = None) -> ImuAccumulation:
    """Compose ``(Phi_step, Q_step, t0, t1)`` tuples in time order.

    An empty sequence yields ``(I, 0)``.
    """
    Phi = np.eye(IMU_DIM)
    Q = np.zeros((IMU_DIM, IMU_DIM))
    t0 = t_start
    t_prev = t_start
    for Ps, Qs, a, b in steps:
        if t0 is None:
            t0 = a
        if t_prev is not None and not np.isclose(a, t_prev, rtol=0.0, atol=1e-12):
            raise ValueError(f"non-contiguous IMU steps at t={a}")
        if nominal_period is not None and b - a > 2.0 * nominal_period:
            log.warning("IMU gap of %.4f s at t=%.4f exceeds twice the nominal period", b - a, a)
        Phi = Ps @ Phi
        Q = symmetrize(Ps @ Q @ Ps.T + Qs)
        t_prev = b
    t0 = 0.0 if t0 is None else t0
    return ImuAccumulation(Phi, Q, t0, t0 if t_prev is None else t_prev)


def integrate_imu(state: ImuState, t, gyro, accel, noise: NoiseParams, with_cov: bool = True) -> ImuAccumulation:
    """Propagate ``state`` across the sample arrays (inclusive endpoints)."""
    t = np.asarray(t, dtype=float)
    if t.shape[0] >= 2:
        dts = np.diff(t)
        if np.any(dts <= 0.0):
            raise ValueError("non-monotone IMU timestamps")
        if np.any(dts > 0.1):
            raise ValueError("IMU gap exceeds 0.1 s")
    c = np.ascontiguousarray
    R, p, v, Phi, Q = _kernels.integrate_interval(
        c(state.R, dtype=float), c(state.p, dtype=float), c(state.v, dtype=float),
        c(state.bg, dtype=float), c(state.ba, dtype=float),
        t, np.ascontiguousarray(gyro, dtype=float), np.ascontiguousarray(accel, dtype=float),
        np.asarray(noise.gravity, float), noise.qc, with_cov,
    )
    end = ImuState(R, p, v, state.bg.copy(), state.ba.copy())
    return ImuAccumulation(Phi, Q, float(t[0]), float(t[-1]), state.copy(), end)


def _imu_block_mul(P: np.ndarray, Phi: np.ndarray) -> np.ndarray:
    """``diag(Phi, I) @ P @ diag(Phi, I)^T``."""
    out = np.array(P, dtype=float)
    out[:IMU_DIM, :] = Phi @ out[:IMU_DIM, :]
    out[:, :IMU_DIM] = out[:, :IMU_DIM] @ Phi.T
    return out


def eskf_propagate_cov(P: np.ndarray, Phi: np.ndarray, Q: np.ndarray) -> np.ndarray:
    out = _imu_block_mul(P, Phi)
    out[:IMU_DIM, :IMU_DIM] += Q
    return symmetrize(out)


def efficient_transition(acc: ImuAccumulation, T_prior: ErrorTransform, T_post: ErrorTransform) -> np.ndarray:
    """``Phi*_k`` assembled with sparse products only."""
    n = T_prior.dim
    B = np.eye(n)
    B[:IMU_DIM, :IMU_DIM] = acc.Phi
    return left_mul(T_post, right_mul(T_prior, B, inverse=True))


def efficient_noise(acc: ImuAccumulation, T_post: ErrorTransform) -> np.ndarray:
    n = T_post.dim
    Q = np.zeros((n, n))
    Q[:IMU_DIM, :IMU_DIM] = acc.Q
    return sandwich(T_post, Q, "forward")


def efficient_propagate(P_star: np.ndarray, acc: ImuAccumulation, T_prior: ErrorTransform,
                        T_post: ErrorTransform, want_transition: bool = True):
    """Transformed covariance propagation; returns ``(P*_{k+1|k}, Phi*_k)``."""
    n = P_star.shape[0]
    if T_prior.dim != n or T_post.dim != n:
        raise ValueError(f"layout mismatch: P is {n}, transforms {T_prior.dim}/{T_post.dim}")
    P = sandwich(T_prior, P_star, "inverse")
    P = _imu_block_mul(P, acc.Phi)
    P[:IMU_DIM, :IMU_DIM] += acc.Q
    P_new = sandwich(T_post, symmetrize(P), "forward")
    Phi_star = efficient_transition(acc, T_prior, T_post) if want_transition else None
    return P_new, Phi_star


# -- full-dimension oracle ----------------------------------------------------


def _skew_rows(vs: np.ndarray) -> np.ndarray:
    out = np.zeros((vs.shape[0], 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -vs[:, 2], vs[:, 1]
    out[:, 1, 0], out[:, 1, 2] = vs[:, 2], -vs[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -vs[:, 1], vs[:, 0]
    return out


class _DenseSystem:
    """Full-dimension ``F*``, ``G*`` with the constant blocks filled once.

    Landmarks, gravity and noise densities stay fixed over an interval, so
    only the ``R``-, ``p``- and ``v``-dependent blocks change between stages.
    The returned matrices are reused buffers.
    """

    def __init__(self, lms: np.ndarray, noise: NoiseParams):
        n = IMU_DIM + 3 * lms.shape[0]
        self.g = np.asarray(noise.gravity, float)
        self.qc = np.repeat(noise.qc, 3)
        self.F = np.zeros((n, n))
        self.G = np.zeros((n, 12))
        self.F[3:6, 6:9] = np.eye(3)
        self.F[6:9, 0:3] = _kernels.skew3(self.g)
        self.G[9:12, 6:9] = np.eye(3)
        self.G[12:15, 9:12] = np.eye(3)
        self.sk_lms = _skew_rows(lms).reshape(-1, 3)

    def at(self, R, p, v):
        F, G = self.F, self.G
        F[0:3, 9:12] = G[0:3, 0:3] = -R
        F[3:6, 9:12] = G[3:6, 0:3] = -_kernels.skew3(p) @ R
        F[6:9, 9:12] = G[6:9, 0:3] = -_kernels.skew3(v) @ R
        F[6:9, 12:15] = G[6:9, 3:6] = -R
        if self.sk_lms.size:
            F[IMU_DIM:, 9:12] = G[IMU_DIM:, 0:3] = -self.sk_lms @ R
        return F, G


def naive_step(R, p, v, bg, ba, Phi, Q, system: _DenseSystem, s0: ImuSample, s1: ImuSample):
    """One full-dimension RK4 step of ``Phi*' = F* Phi*`` and ``Q*' = F* Q* + Q* F*^T + G* Qc G*^T``."""
    n = system.F.shape[0]
    g, qc = system.g, system.qc
    dt = s1.t - s0.t
    w0, w1 = np.asarray(s0.gyro, float), np.asarray(s1.gyro, float)
    a0, a1 = np.asarray(s0.accel, float), np.asarray(s1.accel, float)
    kR = np.zeros((3, 3)); kp = np.zeros(3); kv = np.zeros(3)
    kPhi = np.zeros((n, n)); kQ = np.zeros((n, n))
    sR = np.zeros((3, 3)); sp = np.zeros(3); sv = np.zeros(3)
    sPhi = np.zeros((n, n)); sQ = np.zeros((n, n))
    for c, wgt in ((0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)):
        h = c * dt
        Rs, ps, vs = R + h * kR, p + h * kp, v + h * kv
        Phis, Qs = Phi + h * kPhi, Q + h * kQ
        w = w0 + c * (w1 - w0) - bg
        ab = a0 + c * (a1 - a0) - ba
        F, G = system.at(Rs, ps, vs)
        kR = Rs @ _kernels.skew3(w)
        kp = vs.copy()
        kv = Rs @ ab + g
        kPhi = F @ Phis
        FQ = F @ Qs
        kQ = FQ + FQ.T + (G * qc) @ G.T
        sR += wgt * kR; sp += wgt * kp; sv += wgt * kv
        sPhi += wgt * kPhi; sQ += wgt * kQ
    R1 = _kernels.orthonormalize(R + dt / 6.0 * sR)
    return (R1, p + dt / 6.0 * sp, v + dt / 6.0 * sv,
            Phi + dt / 6.0 * sPhi, symmetrize(Q + dt / 6.0 * sQ))


def naive_propagate(P_star: np.ndarray, samples, state: VinsState, noise: NoiseParams):
    """Full-dimension integration of the transformed system.

    Returns ``(P*_{k+1|k}, Phi*_k, Q*_k)``.
    """
    n = state.dim
    if P_star.shape != (n, n):
        raise ValueError("layout mismatch")
    imu = state.imu
    R, p, v = imu.R, imu.p, imu.v
    system = _DenseSystem(state.landmark_array(), noise)
    Phi = np.eye(n)
    Q = np.zeros((n, n))
    samples = list(samples)
    for s0, s1 in zip(samples[:-1], samples[1:]):
        _check_dt(s0.t, s1.t)
        R, p, v, Phi, Q = naive_step(R, p, v, imu.bg, imu.ba, Phi, Q, system, s0, s1)
    return symmetrize(Phi @ P_star @ Phi.T + Q), Phi, Q


def samples_from_arrays(t, gyro, accel):
    return [ImuSample(float(a), np.asarray(b), np.asarray(c)) for a, b, c in zip(t, gyro, accel)]
