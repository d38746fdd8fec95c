"""VINS system model: nominal kinematics, error-state Jacobians, camera model.

Error-state layout (size 15 + 3m)::

    [theta(0:3), p(3:6), v(6:9), b_g(9:12), b_a(12:15), l_0(15:18), ...]

Orientation error is global (left): ``R = Exp(theta) @ R_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .lie import exp_so3, log_so3, skew

THETA = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
IMU_DIM = 15

GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_DT = 0.1
MIN_DEPTH = 1e-3


class BehindCameraError(ValueError):
    """Landmark has non-positive depth in the camera frame."""


@dataclass
class ImuState:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "ImuState":
        return ImuState(self.R.copy(), self.p.copy(), self.v.copy(), self.bg.copy(), self.ba.copy())


@dataclass
class VinsState:
    imu: ImuState = field(default_factory=ImuState)
    # insertion order defines the covariance column order
    landmarks: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return IMU_DIM + 3 * len(self.landmarks)

    @property
    def ids(self) -> list:
        return list(self.landmarks)

    def landmark_array(self) -> np.ndarray:
        if not self.landmarks:
            return np.zeros((0, 3))
        return np.array(list(self.landmarks.values()), dtype=float)

    def landmark_index(self, lid) -> int:
        """First error-state column of landmark ``lid``."""
        for i, key in enumerate(self.landmarks):
            if key == lid:
                return IMU_DIM + 3 * i
        raise KeyError(lid)

    def copy(self) -> "VinsState":
        return VinsState(self.imu.copy(), {k: np.array(v, dtype=float) for k, v in self.landmarks.items()})


class ImuSample(NamedTuple):
    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class CameraModel:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    R_CI: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_CI: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


# x-forward/y-left/z-up IMU frame to z-forward/x-right/y-down camera frame
FORWARD_LOOKING = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
# optical axis along body -y: outward on a counter-clockwise tangent-yaw loop
RIGHT_LOOKING = np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]])
CAMERA_MOUNTS = {"forward": FORWARD_LOOKING, "right": RIGHT_LOOKING}


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time noise densities plus pixel noise."""

    sigma_g: float = 1.70e-4
    sigma_a: float = 2.00e-3
    sigma_gw: float = 2.00e-5
    sigma_aw: float = 3.00e-3
    sigma_pix: float = 2.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        for name in ("sigma_g", "sigma_a", "sigma_gw", "sigma_aw", "sigma_pix"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def qc(self) -> np.ndarray:
        return np.array([self.sigma_g, self.sigma_a, self.sigma_gw, self.sigma_aw]) ** 2


# -- error-state algebra ------------------------------------------------------


def boxplus(state: VinsState, dx: np.ndarray) -> VinsState:
    """``state (+) dx``: left-multiplicative rotation, additive elsewhere."""
    if dx.shape[0] != state.dim:
        raise ValueError(f"correction has size {dx.shape[0]}, state has {state.dim}")
    imu = state.imu
    new = ImuState(
        exp_so3(dx[THETA]) @ imu.R,
        imu.p + dx[POS],
        imu.v + dx[VEL],
        imu.bg + dx[BG],
        imu.ba + dx[BA],
    )
    lms = {}
    for i, (lid, lm) in enumerate(state.landmarks.items()):
        k = IMU_DIM + 3 * i
        lms[lid] = lm + dx[k : k + 3]
    return VinsState(new, lms)


def boxminus(x: VinsState, xhat: VinsState) -> np.ndarray:
    """``x (-) xhat`` with matching landmark ordering."""
    out = np.zeros(xhat.dim)
    out[THETA] = log_so3(x.imu.R @ xhat.imu.R.T)
    out[POS] = x.imu.p - xhat.imu.p
    out[VEL] = x.imu.v - xhat.imu.v
    out[BG] = x.imu.bg - xhat.imu.bg
    out[BA] = x.imu.ba - xhat.imu.ba
    for i, lid in enumerate(xhat.landmarks):
        k = IMU_DIM + 3 * i
        out[k : k + 3] = x.landmarks[lid] - xhat.landmarks[lid]
    return out


# -- propagation --------------------------------------------------------------


def _check_dt(t0: float, t1: float) -> float:
    dt = t1 - t0
    if not dt > 0.0:
        raise ValueError(f"non-monotone IMU timestamps: {t0} -> {t1}")
    if dt > MAX_DT:
        raise ValueError(f"IMU gap {dt:.4f} s exceeds {MAX_DT} s")
    return dt


def propagate_nominal(state: VinsState, s0: ImuSample, s1: ImuSample, gravity=GRAVITY) -> VinsState:
    """RK4 step of the noise-free kinematics between two IMU samples."""
    dt = _check_dt(s0.t, s1.t)
    imu = state.imu
    R, p, v, _, _ = _kernels.rk4_step(
        imu.R, imu.p, imu.v, imu.bg, imu.ba,
        np.asarray(s0.gyro, float), np.asarray(s0.accel, float),
        np.asarray(s1.gyro, float), np.asarray(s1.accel, float),
        dt, np.asarray(gravity, float), np.zeros(4), False,
    )
    return VinsState(ImuState(R, p, v, imu.bg.copy(), imu.ba.copy()), dict(state.landmarks))


def continuous_error_jacobians(state: VinsState, sample: ImuSample):
    """Continuous-time ``F`` ((15+3m)^2) and ``G`` ((15+3m) x 12).

    Noise ordering is ``[n_g, n_a, n_gw, n_aw]``.
    """
    n = state.dim
    imu = state.imu
    acc = imu.R @ (np.asarray(sample.accel) - imu.ba)
    F = np.zeros((n, n))
    F[THETA, BG] = -imu.R
    F[POS, VEL] = np.eye(3)
    F[VEL, THETA] = -skew(acc)
    F[VEL, BA] = -imu.R
    G = np.zeros((n, 12))
    G[THETA, 0:3] = -imu.R
    G[VEL, 3:6] = -imu.R
    G[BG, 6:9] = np.eye(3)
    G[BA, 9:12] = np.eye(3)
    return F, G


# -- camera measurement -------------------------------------------------------


def landmark_in_imu(state: VinsState, lm: np.ndarray) -> np.ndarray:
    return state.imu.R.T @ (np.asarray(lm) - state.imu.p)


def project(cam: CameraModel, p_imu: np.ndarray) -> np.ndarray:
    pc = cam.R_CI @ p_imu + cam.p_CI
    if pc[2] <= MIN_DEPTH:
        raise BehindCameraError(f"depth {pc[2]:.4g} m")
    return np.array([cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy])


def measure(state: VinsState, cam: CameraModel, lid) -> np.ndarray:
    """Predicted pixel of landmark ``lid``."""
    return project(cam, landmark_in_imu(state, state.landmarks[lid]))


def projection_jacobian(cam: CameraModel, p_imu: np.ndarray) -> np.ndarray:
    """d pixel / d (landmark in IMU frame), 2x3."""
    pc = cam.R_CI @ p_imu + cam.p_CI
    x, y, z = pc
    if z <= MIN_DEPTH:
        raise BehindCameraError(f"depth {z:.4g} m")
    dpi = np.array([[cam.fx / z, 0.0, -cam.fx * x / z**2], [0.0, cam.fy / z, -cam.fy * y / z**2]])
    return dpi @ cam.R_CI


def measurement_jacobian(state: VinsState, cam: CameraModel, lid):
    """Returns ``(Pi, H_e, H)`` for one landmark observation."""
    lm = state.landmarks[lid]
    Pi = projection_jacobian(cam, landmark_in_imu(state, lm)) @ state.imu.R.T
    He = np.zeros((3, state.dim))
    He[:, THETA] = skew(lm - state.imu.p)
    He[:, POS] = -np.eye(3)
    k = state.landmark_index(lid)
    He[:, k : k + 3] = np.eye(3)
    return Pi, He, Pi @ He


def batch_projection(R, p, cam: CameraModel, lms: np.ndarray):
    """Vectorised projection of landmarks ``lms`` (k,3).

    Returns ``(uv (k,2), Pi (k,2,3), depth (k,))``; ``Pi`` maps a global
    landmark displacement to pixels.  Rows with depth <= MIN_DEPTH are not
    meaningful and must be masked by the caller.
    """
    pi = (lms - p) @ R  # rows are R^T (l - p)
    pc = pi @ cam.R_CI.T + cam.p_CI
    z = pc[:, 2]
    zs = np.where(z > MIN_DEPTH, z, 1.0)
    uv = np.stack([cam.fx * pc[:, 0] / zs + cam.cx, cam.fy * pc[:, 1] / zs + cam.cy], axis=1)
    k = lms.shape[0]
    dpi = np.zeros((k, 2, 3))
    dpi[:, 0, 0] = cam.fx / zs
    dpi[:, 0, 2] = -cam.fx * pc[:, 0] / zs**2
    dpi[:, 1, 1] = cam.fy / zs
    dpi[:, 1, 2] = -cam.fy * pc[:, 1] / zs**2
    Pi = dpi @ (cam.R_CI @ R.T)
    return uv, Pi, z
