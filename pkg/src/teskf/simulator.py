"""Deterministic ground truth, IMU synthesis and pixel measurements.

Trajectories are analytic so positions, velocities and accelerations come
from closed forms.  The body frame is ``R = Rz(yaw) @ Ry(pitch)`` with yaw
either fixed or aligned with the horizontal velocity, which gives the body
rate ``w = Ry(pitch)^T e_z yaw_dot + e_y pitch_dot`` in closed form.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .model import FORWARD_LOOKING, CameraModel, ImuSample, ImuState, NoiseParams, batch_projection

SHAPES = ("circle", "figure-eight", "sinusoid-3d")


@dataclass(frozen=True)
class TrajectorySpec:
    shape: str = "circle"
    radius: float = 4.0
    period: float = 10.0
    yaw_mode: str = "tangent"
    duration: float = 60.0
    altitude: float = 1.5
    altitude_amp: float = 0.3  # vertical oscillation, twice per lap
    pitch_amp: float = 0.1  # rad, sinusoid-3d only
    speed_amp: float = 0.0  # relative along-track speed modulation, circle only

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown trajectory shape {self.shape!r}")
        if self.yaw_mode not in ("fixed", "tangent"):
            raise ValueError(f"unknown yaw mode {self.yaw_mode!r}")
        if not self.period > 0 or not self.duration > 0:
            raise ValueError("period and duration must be positive")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0.0 <= self.speed_amp < 1.0:
            raise ValueError("speed_amp must lie in [0, 1)")


@dataclass
class Truth:
    R: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a_world: np.ndarray
    w_body: np.ndarray


def _path(spec: TrajectorySpec, t):
    """Position and its first two time derivatives, shape ``(3,) + t.shape``."""
    r, w = spec.radius, 2.0 * np.pi / spec.period
    s, c = np.sin(w * t), np.cos(w * t)
    s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
    h, A = spec.altitude, spec.altitude_amp
    if spec.shape == "figure-eight":
        # lemniscate of Gerono: x = r sin, y = r sin cos
        p = np.array([r * s, 0.5 * r * s2, h + A * s2])
        v = np.array([r * w * c, r * w * c2, 2 * w * A * c2])
        a = np.array([-r * w * w * s, -2 * r * w * w * s2, -4 * w * w * A * s2])
    elif spec.shape == "sinusoid-3d":
        s3, c3 = np.sin(3 * w * t), np.cos(3 * w * t)
        p = np.array([r * c, r * s, h + A * s3])
        v = np.array([-r * w * s, r * w * c, 3 * w * A * c3])
        a = np.array([-r * w * w * c, -r * w * w * s, -9 * w * w * A * s3])
    else:
        # phase phi = w t + k sin(w t): same loop, speed varies by a factor 1 +- k
        k = spec.speed_amp
        phi = w * t + k * s
        phid = w * (1.0 + k * c)
        phidd = -k * w * w * s
        sp, cp = np.sin(phi), np.cos(phi)
        p = np.array([r * cp, r * sp, h + A * s2])
        v = np.array([-r * phid * sp, r * phid * cp, 2 * w * A * c2])
        a = np.array([
            -r * phidd * sp - r * phid**2 * cp,
            r * phidd * cp - r * phid**2 * sp,
            -4 * w * w * A * s2,
        ])
    return p, v, a


def _pitch(spec: TrajectorySpec, t):
    if spec.shape != "sinusoid-3d":
        return np.zeros_like(t), np.zeros_like(t)
    w = 4.0 * np.pi / spec.period
    return spec.pitch_amp * np.sin(w * t), spec.pitch_amp * w * np.cos(w * t)


def truth_batch(spec: TrajectorySpec, t: np.ndarray) -> Truth:
    """Vectorized ``truth_at``: every field gains a leading time axis."""
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > spec.duration + 1e-9):
        raise ValueError(f"time outside [0, {spec.duration}]")
    p, v, a = _path(spec, t)
    if spec.yaw_mode == "tangent":
        yaw = np.arctan2(v[1], v[0])
        yaw_dot = (v[0] * a[1] - v[1] * a[0]) / (v[0] ** 2 + v[1] ** 2)
    else:
        yaw, yaw_dot = np.zeros_like(t), np.zeros_like(t)
    pitch, pitch_dot = _pitch(spec, t)
    cy, sy, cp, sp = np.cos(yaw), np.sin(yaw), np.cos(pitch), np.sin(pitch)
    z = np.zeros_like(t)
    # Rz(yaw) @ Ry(pitch)
    R = np.stack([
        np.stack([cy * cp, -sy, cy * sp], -1),
        np.stack([sy * cp, cy, sy * sp], -1),
        np.stack([-sp, z, cp], -1),
    ], -2)
    # Ry^T e_z yaw_dot + e_y pitch_dot
    w_body = np.stack([-sp * yaw_dot, pitch_dot, cp * yaw_dot], -1)
    return Truth(R, p.T, v.T, a.T, w_body)


def truth_at(spec: TrajectorySpec, t: float) -> Truth:
    tr = truth_batch(spec, np.array([t], dtype=float))
    return Truth(tr.R[0], tr.p[0], tr.v[0], tr.a_world[0], tr.w_body[0])


@dataclass
class CameraFrame:
    t: float
    ids: np.ndarray
    uv: np.ndarray
    sigma: float


@dataclass
class SimWorld:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    landmarks: dict = field(default_factory=dict)
    noise: NoiseParams = field(default_factory=NoiseParams)
    cam: CameraModel = field(default_factory=lambda: CameraModel(R_CI=FORWARD_LOOKING))
    imu_hz: float = 400.0
    cam_hz: float = 10.0
    seed: int = 0
    run: int = 0
    max_points: int = 100
    bias_prior: tuple = (1e-3, 2e-2)  # initial (gyro, accel) bias std

    def __post_init__(self):
        if self.imu_hz < self.cam_hz:
            raise ValueError("IMU rate must be at least the camera rate")
        ratio = self.imu_hz / self.cam_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("camera ticks must align with IMU ticks")

    @property
    def imu_per_frame(self) -> int:
        return int(round(self.imu_hz / self.cam_hz))


def scatter_landmarks(spec: TrajectorySpec, n: int, seed: int, run: int = 0,
                      offset: float = 4.0, thickness: float = 1.0, half_height: float = 2.5) -> dict:
    """Uniform points in a cylindrical shell around the trajectory envelope."""
    if n < 1:
        raise ValueError("need at least one landmark")
    gen = rng.stream(seed, run, "landmarks")
    u = rng.uniforms(gen, (n, 3))
    r0 = spec.radius + offset
    rad = r0 + thickness * u[:, 0]
    ang = 2.0 * np.pi * u[:, 1]
    z = spec.altitude + half_height * (2.0 * u[:, 2] - 1.0)
    pts = np.stack([rad * np.cos(ang), rad * np.sin(ang), z], axis=1)
    return {i: pts[i] for i in range(n)}


def make_world(spec: TrajectorySpec | None = None, n_landmarks: int = 300, seed: int = 0, run: int = 0,
               shell=(4.0, 1.0, 2.5), **kw) -> SimWorld:
    spec = spec or TrajectorySpec()
    lms = scatter_landmarks(spec, n_landmarks, seed, run, *shell)
    return SimWorld(trajectory=spec, landmarks=lms, seed=seed, run=run, **kw)


@dataclass
class ImuStream:
    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    bg: np.ndarray  # true bias at each sample
    ba: np.ndarray
    R: np.ndarray  # true pose/velocity at each sample
    p: np.ndarray
    v: np.ndarray

    def sample(self, k: int) -> ImuSample:
        return ImuSample(float(self.t[k]), self.gyro[k], self.accel[k])

    def truth_state(self, k: int) -> ImuState:
        return ImuState(self.R[k].copy(), self.p[k].copy(), self.v[k].copy(), self.bg[k].copy(), self.ba[k].copy())


def gen_imu(world: SimWorld) -> ImuStream:
    spec, nz = world.trajectory, world.noise
    dt = 1.0 / world.imu_hz
    n = int(round(spec.duration * world.imu_hz)) + 1
    t = np.arange(n) * dt
    g = np.asarray(nz.gravity, float)
    tr = truth_batch(spec, np.minimum(t, spec.duration))
    R, p, v, w = tr.R, tr.p, tr.v, tr.w_body
    a_body = np.einsum("kji,kj->ki", R, tr.a_world - g)

    gb = rng.stream(world.seed, world.run, "bias")
    b0 = rng.normals(gb, 6) * np.repeat(world.bias_prior, 3)
    walk = rng.normals(gb, (n - 1, 6)) * np.sqrt(dt) * np.repeat([nz.sigma_gw, nz.sigma_aw], 3)
    bias = np.vstack([b0, b0 + np.cumsum(walk, axis=0)])

    gi = rng.stream(world.seed, world.run, "imu")
    white = rng.normals(gi, (n, 6)) / np.sqrt(dt) * np.repeat([nz.sigma_g, nz.sigma_a], 3)
    gyro = w + bias[:, :3] + white[:, :3]
    accel = a_body + bias[:, 3:] + white[:, 3:]
    return ImuStream(t, gyro, accel, bias[:, :3].copy(), bias[:, 3:].copy(), R, p, v)


def gen_frames(world: SimWorld, imu: ImuStream | None = None) -> list:
    imu = imu if imu is not None else gen_imu(world)
    ids = np.array(list(world.landmarks), dtype=np.int64)
    pts = np.array([world.landmarks[i] for i in ids], dtype=float)
    cam = world.cam
    sig = world.noise.sigma_pix
    gp = rng.stream(world.seed, world.run, "pixel")
    frames = []
    for k in range(0, len(imu.t), world.imu_per_frame):
        # one draw per landmark per frame keeps the stream layout fixed
        noise = rng.normals(gp, (len(ids), 2)) * sig
        uv, _, z = batch_projection(imu.R[k], imu.p[k], cam, pts)
        ok = (z >= 0.1) & (z <= 40.0)
        ok &= (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
        sel = np.flatnonzero(ok)
        sel = sel[np.argsort(z[sel], kind="stable")][: world.max_points]
        sel.sort()
        frames.append(CameraFrame(float(imu.t[k]), ids[sel].copy(), uv[sel] + noise[sel], sig))
    return frames


# -- export -------------------------------------------------------------------


def export(world: SimWorld, imu: ImuStream, frames: list, out: Path):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "imu.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "wx", "wy", "wz", "ax", "ay", "az"])
        for k in range(len(imu.t)):
            w.writerow([repr(float(imu.t[k]))] + [repr(float(x)) for x in imu.gyro[k]] + [repr(float(x)) for x in imu.accel[k]])
    with open(out / "frames.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "id", "u", "v"])
        for fr in frames:
            for lid, (u, v) in zip(fr.ids, fr.uv):
                w.writerow([repr(fr.t), int(lid), repr(float(u)), repr(float(v))])
    step = world.imu_per_frame
    truth = {
        "poses": [
            {"t": float(imu.t[k]), "R": imu.R[k].tolist(), "p": imu.p[k].tolist(), "v": imu.v[k].tolist()}
            for k in range(0, len(imu.t), step)
        ],
        "landmarks": {str(k): np.asarray(v).tolist() for k, v in world.landmarks.items()},
        "bias": {
            "t": imu.t[::step].tolist(),
            "bg": imu.bg[::step].tolist(),
            "ba": imu.ba[::step].tolist(),
        },
        "trajectory": asdict(world.trajectory),
    }
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=1)
