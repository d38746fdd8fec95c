"""Numeric local observability audit.

The stacked matrix has rows ``H_k @ Phi(t_k, t_0)``.  A consistent linearized
VINS keeps four unobservable directions (global translation and yaw about
gravity); mismatched linearization points remove the yaw direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import subspace_angles

from .filters import Filter, FilterOptions
from .lie import skew
from .model import (
    FORWARD_LOOKING, GRAVITY, IMU_DIM, POS, THETA, VEL,
    CameraModel, NoiseParams, VinsState, boxplus,
)
from .propagation import integrate_imu
from . import rng
from .simulator import SimWorld, TrajectorySpec, gen_frames, gen_imu, truth_at

MODES = ("ideal", "eskf", "fej", "teskf")
EXPECTED_NULL = {"ideal": 4, "eskf": 3, "fej": 4, "teskf": 4}
NULL_TOL = 1e-8
GAP_TOL = 1e-4


@dataclass
class ObservabilityAudit:
    M: np.ndarray
    singular_values: np.ndarray  # length n, padded with zeros when rows < n
    Vt: np.ndarray
    mode: str = ""
    state0: VinsState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.M.shape[1]

    def null_dim(self, tol_ratio: float = NULL_TOL) -> int:
        s = self.singular_values
        return int(np.sum(s < tol_ratio * s[0]))

    def gap_ok(self, lo: float = NULL_TOL, hi: float = GAP_TOL) -> bool:
        """Next singular value past the null block clears ``hi * s_max``."""
        s = self.singular_values
        d = self.null_dim(lo)
        return d < len(s) and s[len(s) - d - 1] >= hi * s[0]


def build_observability(trace, mode: str = "") -> ObservabilityAudit:
    """Stack ``(H_k, Phi(t_k, t_0))`` pairs into the observability matrix."""
    trace = list(trace)
    if not trace:
        raise ValueError("empty observability trace")
    n = trace[0][1].shape[1]
    blocks = []
    for H, Phi in trace:
        if H.shape[1] != n or Phi.shape != (n, n):
            raise ValueError("inconsistent layout in trace")
        if H.shape[0]:
            blocks.append(H @ Phi)
    M = np.vstack(blocks) if blocks else np.zeros((0, n))
    _, s, Vt = np.linalg.svd(M, full_matrices=True) if M.shape[0] else (None, np.zeros(0), np.eye(n))
    s = np.concatenate([s, np.zeros(n - s.size)])
    return ObservabilityAudit(M, s, Vt, mode)


def accumulate_trace(steps):
    """Turn ``(H_k, Phi_{k-1 -> k})`` into ``(H_k, Phi(t_k, t_0))``; first step's Phi is ignored."""
    out = []
    acc = None
    for H, Phi in steps:
        acc = np.eye(H.shape[1]) if acc is None else Phi @ acc
        out.append((H, acc))
    return out


def numeric_nullspace(audit: ObservabilityAudit, tol_ratio: float = NULL_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of right singular vectors below ``tol_ratio * s_max``."""
    d = audit.null_dim(tol_ratio)
    return audit.Vt[audit.n - d :].T.copy()


def analytic_nullspace(state: VinsState, which: str = "original", gravity=GRAVITY) -> np.ndarray:
    """Unobservable directions: three translations plus yaw about gravity."""
    n = state.dim
    g = np.asarray(gravity, float)
    N = np.zeros((n, 4))
    N[POS, 0:3] = np.eye(3)
    for i in range(len(state.landmarks)):
        k = IMU_DIM + 3 * i
        N[k : k + 3, 0:3] = np.eye(3)
    N[THETA, 3] = g
    if which == "original":
        N[POS, 3] = -skew(state.imu.p) @ g
        N[VEL, 3] = -skew(state.imu.v) @ g
        for i, lm in enumerate(state.landmarks.values()):
            k = IMU_DIM + 3 * i
            N[k : k + 3, 3] = -skew(lm) @ g
    elif which not in ("transformed", "teskf"):
        raise ValueError(f"unknown basis {which!r}")
    return N


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return subspace_angles(A, B)


# -- audit traces -------------------------------------------------------------


AUDIT_CIRCLE = dict(radius=4.0, period=8.0, altitude=2.0, altitude_amp=1.5, speed_amp=0.0)


def audit_world(seed: int = 0, n_landmarks: int = 12, ticks: int = 20) -> SimWorld:
    """Circle world with a small landmark set kept in view over the audit window.

    A constant-speed level circle has a constant body-frame specific force,
    which an accelerometer bias absorbs almost entirely; the vertical
    oscillation keeps the metric scale clearly observable.
    """
    spec = TrajectorySpec(duration=max(ticks / 10.0, 0.1) + 0.1, **AUDIT_CIRCLE)
    gen = rng.stream(seed, 0, "landmarks")
    mid = truth_at(spec, 0.5 * (ticks - 1) / 10.0)
    cam = CameraModel(R_CI=FORWARD_LOOKING)
    R_GC = mid.R @ cam.R_CI.T
    u = rng.uniforms(gen, (n_landmarks, 3))
    depth = 3.0 + 5.0 * u[:, 0]
    x = (2.0 * u[:, 1] - 1.0) * 0.45 * depth
    y = (2.0 * u[:, 2] - 1.0) * 0.35 * depth
    pts = (R_GC @ np.stack([x, y, depth])).T + mid.p
    return SimWorld(trajectory=spec, landmarks={i: pts[i] for i in range(n_landmarks)},
                    cam=cam, seed=seed, max_points=n_landmarks)


def _ideal_trace(world: SimWorld, imu, frames, ticks: int):
    # noise-free inputs, truth start, H on the propagated nominal: one linearization
    quiet = NoiseParams(0, 0, 0, 0, 0)
    step = world.imu_per_frame
    st = VinsState(imu.truth_state(0), {k: np.asarray(v, float) for k, v in world.landmarks.items()})
    steps = []
    for k in range(ticks):
        fr = frames[k]
        f = Filter("eskf", st, np.eye(st.dim), quiet, world.cam)
        H = f.measurement_rows(fr)
        Phi = np.eye(st.dim)
        if k + 1 < ticks:
            a, b = k * step, (k + 1) * step + 1
            acc = integrate_imu(st.imu, imu.t[a:b], imu.gyro[a:b], imu.accel[a:b], world.noise)
            Phi[:IMU_DIM, :IMU_DIM] = acc.Phi
            st = VinsState(acc.end, st.landmarks)
        steps.append((H, Phi))
    # step k carries the transition out of tick k; shift so Phi_{k-1->k} pairs with H_k
    shifted = [(steps[0][0], np.eye(steps[0][0].shape[1]))]
    shifted += [(steps[k][0], steps[k - 1][1]) for k in range(1, ticks)]
    return accumulate_trace(shifted), VinsState(imu.truth_state(0), dict(world.landmarks))


def initial_estimate(truth: VinsState, sig: dict, gen) -> tuple:
    """Sample ``x^ = x (-) e`` with ``e ~ N(0, P0)``; returns ``(x^, P0)``."""
    n = truth.dim
    d = np.concatenate([
        np.full(3, sig["theta"]), np.full(3, sig["p"]), np.full(3, sig["v"]),
        np.full(3, sig["bg"]), np.full(3, sig["ba"]), np.full(n - IMU_DIM, sig.get("lm", 0.0)),
    ])
    P0 = np.diag(d**2)
    e = rng.normals(gen, n) * d
    # x^ = x (+) (-e) gives x (-) x^ = e exactly under the left-orientation convention
    return boxplus(truth, -e), P0


AUDIT_SIGMAS = {"theta": np.deg2rad(1.0), "p": 0.1, "v": 0.1, "bg": 1e-3, "ba": 2e-2, "lm": 0.5}


def _filter_trace(kind: str, world: SimWorld, imu, frames, ticks: int, seed: int):
    truth = VinsState(imu.truth_state(0), {k: np.asarray(v, float) for k, v in world.landmarks.items()})
    est, P0 = initial_estimate(truth, AUDIT_SIGMAS, rng.stream(seed, 0, "init"))
    f = Filter(kind, est, P0, world.noise, world.cam, FilterOptions(record=True))
    step = world.imu_per_frame
    steps = []
    state0 = f.state.copy()
    Phi_prev = np.eye(est.dim)
    for k in range(ticks):
        if k > 0:
            a, b = (k - 1) * step, k * step + 1
            f.propagate(imu.t[a:b], imu.gyro[a:b], imu.accel[a:b])
            Phi_prev = f.trace[-1][2]
        H = f.measurement_rows(frames[k])
        steps.append((H, Phi_prev))
        f.update(frames[k])
    return accumulate_trace(steps), state0


def run_audit(mode: str, seed: int = 0, ticks: int = 20, n_landmarks: int = 12) -> ObservabilityAudit:
    if mode not in MODES:
        raise ValueError(f"unknown audit mode {mode!r}")
    if ticks < 1:
        raise ValueError("need at least one tick")
    world = audit_world(seed, n_landmarks, ticks)
    if mode == "ideal":
        world = replace(world, noise=NoiseParams(0, 0, 0, 0, 0), bias_prior=(0.0, 0.0))
    imu = gen_imu(world)
    frames = gen_frames(world, imu)
    if mode == "ideal":
        trace, st0 = _ideal_trace(world, imu, frames, ticks)
    else:
        trace, st0 = _filter_trace(mode, world, imu, frames, ticks, seed)
    audit = build_observability(trace, mode)
    audit.state0 = st0
    audit.meta = {"ticks": ticks, "landmarks": n_landmarks, "rows": int(audit.M.shape[0])}
    return audit


def analytic_for_audit(audit: ObservabilityAudit) -> np.ndarray:
    which = "transformed" if audit.mode == "teskf" else "original"
    return analytic_nullspace(audit.state0, which)
