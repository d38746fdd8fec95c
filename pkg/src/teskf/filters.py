"""ESKF, FEJ-ESKF and T-ESKF sharing one propagate/update skeleton.

The ESKF-family filters keep their covariance over the original error
``x~ = x (-) x^``; the T-ESKF keeps it over ``x~* = T(x^) x~``.  Landmarks
enter through a triangulation-based initializer and leave through
least-recently-observed eviction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .lie import exp_so3, skew
from .model import (
    BA, BG, IMU_DIM, MIN_DEPTH, POS, THETA, VEL,
    CameraModel, NoiseParams, VinsState, batch_projection, boxplus,
)
from .propagation import eskf_propagate_cov, efficient_propagate, integrate_imu
from .transform import apply_inv, build_transform, sandwich, symmetrize

log = logging.getLogger(__name__)

KINDS = ("eskf", "fej", "teskf")
VARIANTS = ("prior-T", "posterior-T")
CHI2_2_95 = 5.991464547107979
LANDMARK_INITS = ("anchored", "isotropic")


@dataclass
class FilterOptions:
    variant: str = "prior-T"
    gate: float = CHI2_2_95
    max_landmarks: int = 40
    landmark_init: str = "anchored"
    landmark_prior_var: float = 25.0
    depth_inflation: float = 4.0
    init_min_obs: int = 5
    min_baseline: float = 0.05
    max_cond: float = 1e8
    pending_window: int = 20
    pending_timeout: float = 1.0
    record: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown correction variant {self.variant!r}")
        if self.gate <= 0:
            raise ValueError("gate must be positive")
        if self.landmark_init not in LANDMARK_INITS:
            raise ValueError(f"unknown landmark initializer {self.landmark_init!r}")
        if self.max_landmarks < 0 or self.init_min_obs < 2:
            raise ValueError("bad landmark lifecycle options")


@dataclass
class PendingLandmark:
    lid: int
    obs: list = field(default_factory=list)  # (t, uv, R_est, p_est)


@dataclass
class UpdateReport:
    t: float
    n_meas: int = 0
    n_gated: int = 0
    nis: float = 0.0
    dof: int = 0
    residual_norm: float = 0.0
    nis_each: list = field(default_factory=list)
    n_init: int = 0
    n_active: int = 0
    skipped: str = ""
    p: tuple = ()

    def to_json(self) -> str:
        d = {
            "t": self.t, "n_meas": self.n_meas, "n_gated": self.n_gated, "nis": self.nis,
            "dof": self.dof, "residual_norm": self.residual_norm, "n_init": self.n_init,
            "n_active": self.n_active, "p": list(self.p),
        }
        if self.skipped:
            d["skipped"] = self.skipped
        return json.dumps(d)


def camera_pose(R, p, cam: CameraModel):
    """Rotation global<-camera and the camera centre in the global frame."""
    R_GC = R @ cam.R_CI.T
    c = p - R @ (cam.R_CI.T @ cam.p_CI)
    return R_GC, c


def _skew_batch(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _stack_obs(obs, cam: CameraModel):
    uv = np.array([o[1] for o in obs], dtype=float)
    Rs = np.array([o[2] for o in obs], dtype=float)
    ps = np.array([o[3] for o in obs], dtype=float)
    R_GC = Rs @ cam.R_CI.T
    centres = ps - Rs @ (cam.R_CI.T @ cam.p_CI)
    return uv, R_GC, centres


def triangulate(obs, cam: CameraModel, min_baseline: float = 0.05, max_cond: float = 1e8, refine: int = 5):
    """Linear triangulation from ``(t, uv, R, p)`` observations.

    Each bearing ``b`` contributes ``[b]x R_CG (l - c) = 0``; the linear
    solution is then polished by ``refine`` Gauss-Newton steps on pixel
    error.  Returns the point or ``None`` when the geometry is degenerate.
    """
    if len(obs) < 2:
        return None
    uv, R_GC, centres = _stack_obs(obs, cam)
    d = centres[:, None, :] - centres[None, :, :]
    if np.sqrt(np.max(np.einsum("ijk,ijk->ij", d, d))) <= min_baseline:
        return None
    status, lm = _kernels.triangulate_points(
        uv, np.ascontiguousarray(R_GC), centres, cam.fx, cam.fy, cam.cx, cam.cy,
        float(max_cond), int(refine), MIN_DEPTH,
    )
    return lm if status == 0 else None


def depth_variance(obs, lm, cam: CameraModel, sigma_pix: float) -> float:
    """Linearized variance of the triangulated depth seen from the last pose.

    Each observation constrains ``l`` to within ``range * sigma_pix / f`` of
    its ray; the weighted normal matrix gives the point covariance.
    """
    f = 0.5 * (cam.fx + cam.fy)
    _, _, centres = _stack_obs(obs, cam)
    d = lm - centres
    r2 = np.einsum("ki,ki->k", d, d)
    u = d / np.sqrt(r2)[:, None]
    w = f**2 / (r2 * sigma_pix**2)
    info = np.eye(3) * w.sum() - np.einsum("k,ki,kj->ij", w, u, u)
    axis = u[-1]
    try:
        return float(axis @ np.linalg.solve(info, axis))
    except np.linalg.LinAlgError:
        return float(axis @ np.linalg.pinv(info) @ axis)


class Filter:
    """One estimator instance; not thread-safe, instances are independent."""

    def __init__(self, kind: str, state: VinsState, P0: np.ndarray, noise: NoiseParams,
                 cam: CameraModel, options: FilterOptions | None = None):
        if kind not in KINDS:
            raise ValueError(f"unknown filter kind {kind!r}")
        if P0.shape != (state.dim, state.dim):
            raise ValueError("covariance does not match the state layout")
        self.kind = kind
        self.state = state.copy()
        self.noise = noise
        self.cam = cam
        self.opts = options or FilterOptions()
        P0 = symmetrize(np.asarray(P0, dtype=float))
        self.P = sandwich(build_transform(self.state), P0, "forward") if kind == "teskf" else P0
        self.t = None
        self.fej_p = self.state.imu.p.copy()
        self.fej_v = self.state.imu.v.copy()
        self.fej_lm = {k: v.copy() for k, v in self.state.landmarks.items()}
        self.pending: dict = {}
        self.last_seen: dict = {k: -np.inf for k in self.state.landmarks}
        self.trace: list = []

    # -- covariance views -----------------------------------------------------

    @property
    def space(self) -> str:
        return "transformed" if self.kind == "teskf" else "original"

    def original_covariance(self) -> np.ndarray:
        if self.kind == "teskf":
            return sandwich(build_transform(self.state), self.P, "inverse")
        return self.P

    def pose_covariance(self) -> np.ndarray:
        """6x6 covariance of ``(theta, p)`` in the original space."""
        P = self.P[:6, :6]
        if self.kind != "teskf":
            return P.copy()
        E = np.eye(6)
        E[3:6, 0:3] = -skew(self.state.imu.p)
        return symmetrize(E @ P @ E.T)

    # -- propagation ----------------------------------------------------------

    def propagate(self, t, gyro, accel):
        """Advance over IMU samples covering ``[t_k, t_{k+1}]`` inclusive."""
        t = np.asarray(t, dtype=float)
        if self.t is not None and abs(t[0] - self.t) > 1e-9:
            raise ValueError(f"propagation starts at {t[0]}, filter is at {self.t}")
        prior = self.state
        acc = integrate_imu(prior.imu, t, gyro, accel, self.noise)
        post = VinsState(acc.end, prior.landmarks)
        n = prior.dim
        if self.kind == "teskf":
            Tk, Tk1 = build_transform(prior), build_transform(post)
            self.P, Phi = efficient_propagate(self.P, acc, Tk, Tk1, want_transition=self.opts.record)
        else:
            Phi_I = acc.Phi
            if self.kind == "fej":
                dt = acc.t_end - acc.t_start
                Phi_I = Phi_I.copy()
                dp = self.fej_p - prior.imu.p
                dv = self.fej_v - prior.imu.v
                Phi_I[POS, THETA] += skew(dp + dv * dt)
                Phi_I[VEL, THETA] += skew(dv)
                self.fej_p = acc.end.p.copy()
                self.fej_v = acc.end.v.copy()
            self.P = eskf_propagate_cov(self.P, Phi_I, acc.Q)
            if self.opts.record:
                Phi = np.eye(n)
                Phi[:IMU_DIM, :IMU_DIM] = Phi_I
        if self.opts.record:
            self.trace.append(("phi", acc.t_end, Phi))
        self.state = post
        self.t = float(t[-1])

    # -- update ---------------------------------------------------------------

    def _jacobian(self, lids, Pi):
        """Stacked ``H`` (or ``H*``) for landmarks ``lids`` with projections ``Pi``."""
        k = len(lids)
        H = np.zeros((2 * k, self.state.dim))
        rows = np.arange(2 * k).reshape(k, 2, 1)
        order = {l: i for i, l in enumerate(self.state.landmarks)}
        cols = IMU_DIM + 3 * np.array([order[l] for l in lids]).reshape(k, 1, 1) + np.arange(3)
        H[rows, POS.start + np.arange(3)] = -Pi
        H[rows, cols] = Pi
        if self.kind != "teskf":
            ref = self.fej_lm if self.kind == "fej" else self.state.landmarks
            d = np.array([ref[l] for l in lids]) - self.state.imu.p
            H[rows, THETA.start + np.arange(3)] = Pi @ _skew_batch(d)
        return H

    def update(self, frame, only=None) -> UpdateReport:
        """EKF update with the active landmarks observed in ``frame``."""
        t = float(frame.t)
        rep = UpdateReport(t)
        sel = [j for j, lid in enumerate(frame.ids) if int(lid) in self.state.landmarks
               and (only is None or int(lid) in only)]
        rep.n_active = len(self.state.landmarks)
        rep.p = tuple(float(x) for x in self.state.imu.p)
        if not sel:
            return rep
        lids = [int(frame.ids[j]) for j in sel]
        y = np.asarray(frame.uv, float)[sel]
        lms = np.array([self.state.landmarks[i] for i in lids])
        uv, Pi, z = batch_projection(self.state.imu.R, self.state.imu.p, self.cam, lms)
        front = z > MIN_DEPTH
        lids = [l for l, ok in zip(lids, front) if ok]
        if not lids:
            rep.skipped = "behind camera"
            return rep
        r = (y - uv)[front]
        Pi = Pi[front]
        rep.n_meas = len(lids)
        H = self._jacobian(lids, Pi)
        var = frame.sigma ** 2
        PHt = self.P @ H.T
        S = H @ PHt + var * np.eye(H.shape[0])

        # per-measurement Mahalanobis gate on the 2x2 diagonal blocks
        k = len(lids)
        ii = 2 * np.arange(k)
        a, b, d = S[ii, ii], S[ii, ii + 1], S[ii + 1, ii + 1]
        det = a * d - b * b
        with np.errstate(divide="ignore", invalid="ignore"):
            m2 = (d * r[:, 0] ** 2 - 2.0 * b * r[:, 0] * r[:, 1] + a * r[:, 1] ** 2) / det
        m2 = np.where(det > 0, m2, np.inf)
        keep = [j for j in range(k) if m2[j] <= self.opts.gate]
        rep.nis_each = [float(m2[j]) for j in keep]
        rep.n_gated = len(lids) - len(keep)
        if not keep:
            return rep
        rows = np.concatenate([[2 * j, 2 * j + 1] for j in keep])
        H, PHt, r = H[rows], PHt[:, rows], r[keep].ravel()
        S = S[np.ix_(rows, rows)]
        try:
            cf = cho_factor(S)
        except np.linalg.LinAlgError:
            rep.skipped = "innovation covariance not positive definite"
            log.warning("t=%.3f: %s", t, rep.skipped)
            return rep
        K = cho_solve(cf, PHt.T).T
        rep.nis = float(r @ cho_solve(cf, r))
        rep.dof = int(r.size)
        rep.residual_norm = float(np.linalg.norm(r))
        dx = K @ r

        # Joseph form (I-KH) P (I-KH)^T + K V K^T, expanded: with A = P - K H P,
        # A H^T = P H^T - K (S - V), so only two n x n x 2k products remain.
        AHt = PHt - K @ (S - var * np.eye(S.shape[0]))
        self.P = symmetrize(self.P - K @ PHt.T - (AHt - var * K) @ K.T)
        self._correct(dx)
        rep.p = tuple(float(x) for x in self.state.imu.p)
        return rep

    def _correct(self, dx: np.ndarray):
        if self.kind != "teskf":
            self.state = boxplus(self.state, dx)
            return
        if self.opts.variant == "prior-T":
            self.state = boxplus(self.state, apply_inv(build_transform(self.state), dx))
            return
        # posterior-T: closed form of x^+ = x^ (+) T(x^+)^-1 dx*
        dth = dx[THETA]
        A = (np.eye(3) + skew(dth) + np.outer(dth, dth)) / (1.0 + dth @ dth)
        imu = self.state.imu
        imu_new = type(imu)(
            exp_so3(dth) @ imu.R, A @ (imu.p + dx[POS]), A @ (imu.v + dx[VEL]),
            imu.bg + dx[BG], imu.ba + dx[BA],
        )
        lms = {}
        for i, (lid, lm) in enumerate(self.state.landmarks.items()):
            k = IMU_DIM + 3 * i
            lms[lid] = A @ (lm + dx[k : k + 3])
        self.state = VinsState(imu_new, lms)

    # -- landmark lifecycle ---------------------------------------------------

    def add_landmark(self, lid, position, var: float | None = None):
        """Append a landmark with isotropic prior and zero cross-covariance."""
        if lid in self.state.landmarks:
            raise ValueError(f"landmark {lid} already active")
        var = self.opts.landmark_prior_var if var is None else var
        n = self.state.dim
        lm = np.asarray(position, dtype=float).copy()
        P = np.zeros((n + 3, n + 3))
        P[:n, :n] = self.P
        P[n:, n:] = var * np.eye(3)
        if self.kind == "teskf":
            # l~* = l~ + [l^]x theta~, theta~* = theta~
            S = skew(lm)
            cross = S @ self.P[THETA, :]
            P[n:, :n] = cross
            P[:n, n:] = cross.T
            P[n:, n:] += S @ self.P[THETA, THETA] @ S.T
        self.P = symmetrize(P)
        self.state.landmarks[lid] = lm
        self.fej_lm[lid] = lm.copy()
        self.last_seen.setdefault(lid, -np.inf)

    def remove_landmark(self, lid):
        if lid not in self.state.landmarks:
            raise KeyError(lid)
        k = self.state.landmark_index(lid)
        n = self.state.dim
        P = np.empty((n - 3, n - 3))
        P[:k, :k] = self.P[:k, :k]
        P[:k, k:] = self.P[:k, k + 3 :]
        P[k:, :k] = self.P[k + 3 :, :k]
        P[k:, k:] = self.P[k + 3 :, k + 3 :]
        self.P = P
        del self.state.landmarks[lid]
        self.fej_lm.pop(lid, None)
        self.last_seen.pop(lid, None)

    def anchor_landmark(self, lid, uv, depth: float, depth_var: float, sigma_pix: float):
        """Append a landmark on the current ray of pixel ``uv`` at ``depth``.

        ``l = c + R_GC * depth * [(u-cx)/fx, (v-cy)/fy, 1]`` is linearized in the
        pose error and in ``(u, v, depth)``, so the new block carries its full
        cross-covariance with the state.  In transformed coordinates the pose
        part is just ``p~*``.
        """
        if lid in self.state.landmarks:
            raise ValueError(f"landmark {lid} already active")
        cam = self.cam
        R_GC, c = camera_pose(self.state.imu.R, self.state.imu.p, cam)
        b = np.array([(uv[0] - cam.cx) / cam.fx, (uv[1] - cam.cy) / cam.fy, 1.0])
        lm = c + depth * (R_GC @ b)
        Jm = np.column_stack([depth * R_GC[:, 0] / cam.fx, depth * R_GC[:, 1] / cam.fy, R_GC @ b])
        noise = Jm @ np.diag([sigma_pix**2, sigma_pix**2, depth_var]) @ Jm.T
        n = self.state.dim
        if self.kind == "teskf":
            cross = self.P[POS, :].copy()
            block = self.P[POS, POS] + noise
        else:
            Jx = np.zeros((3, n))
            Jx[:, POS] = np.eye(3)
            Jx[:, THETA] = -skew(lm - self.state.imu.p)
            cross = Jx @ self.P
            block = cross @ Jx.T + noise
        P = np.empty((n + 3, n + 3))
        P[:n, :n] = self.P
        P[n:, :n] = cross
        P[:n, n:] = cross.T
        P[n:, n:] = block
        self.P = symmetrize(P)
        self.state.landmarks[lid] = lm
        self.fej_lm[lid] = lm.copy()
        self.last_seen.setdefault(lid, -np.inf)

    def initialize_landmark(self, pending: PendingLandmark, sigma_pix: float | None = None) -> bool:
        """Triangulate a pending track and install it; ``False`` defers it."""
        lm = triangulate(pending.obs, self.cam, self.opts.min_baseline, self.opts.max_cond)
        if lm is None:
            return False
        if self.opts.landmark_init == "isotropic":
            self.add_landmark(pending.lid, lm)
            return True
        sigma_pix = self.noise.sigma_pix if sigma_pix is None else sigma_pix
        _, uv, R, p = pending.obs[-1]
        R_GC, c = camera_pose(R, p, self.cam)
        depth = float((R_GC.T @ (lm - c))[2])
        var = self.opts.depth_inflation**2 * depth_variance(pending.obs, lm, self.cam, sigma_pix)
        self.anchor_landmark(pending.lid, uv, depth, var, sigma_pix)
        return True

    def _evict_one(self, observed: set) -> bool:
        cands = [l for l in self.state.landmarks if l not in observed]
        if not cands:
            return False
        victim = min(cands, key=lambda l: (self.last_seen.get(l, -np.inf), l))
        self.remove_landmark(victim)
        return True

    def process_frame(self, frame) -> UpdateReport:
        """Update with active landmarks, then grow the map from pending tracks."""
        t = float(frame.t)
        rep = self.update(frame)
        observed = {int(i) for i in frame.ids}
        for lid in observed:
            if lid in self.state.landmarks:
                self.last_seen[lid] = t

        # pending tracks record poses after this frame's update
        R, p = self.state.imu.R.copy(), self.state.imu.p.copy()
        for lid, uv in zip(frame.ids, frame.uv):
            lid = int(lid)
            if lid in self.state.landmarks:
                continue
            pend = self.pending.setdefault(lid, PendingLandmark(lid))
            pend.obs.append((t, np.asarray(uv, float).copy(), R, p))
            if len(pend.obs) > self.opts.pending_window:
                pend.obs.pop(0)
        for lid in [l for l, pd in self.pending.items() if t - pd.obs[-1][0] > self.opts.pending_timeout]:
            del self.pending[lid]

        ready = sorted(
            (pd for pd in self.pending.values() if len(pd.obs) >= self.opts.init_min_obs and pd.obs[-1][0] == t),
            key=lambda pd: (-len(pd.obs), pd.lid),
        )
        new = []
        for pd in ready:
            if len(self.state.landmarks) >= self.opts.max_landmarks and not self._evict_one(observed):
                break
            if self.initialize_landmark(pd, frame.sigma):
                self.last_seen[pd.lid] = t
                new.append(pd.lid)
                del self.pending[pd.lid]
        if new and self.opts.landmark_init == "isotropic":
            # only the current observation can be replayed: past poses are not in the state
            rep2 = self.update(frame, only=set(new))
            rep.n_meas += rep2.n_meas
            rep.n_gated += rep2.n_gated
            rep.nis += rep2.nis
            rep.dof += rep2.dof
            rep.nis_each += rep2.nis_each
            rep.p = rep2.p
        rep.n_init = len(new)
        rep.n_active = len(self.state.landmarks)
        return rep

    # -- observability tracing ------------------------------------------------

    def measurement_rows(self, frame):
        """Jacobian rows this filter would use for ``frame`` at the current estimate."""
        lids = [int(i) for i in frame.ids if int(i) in self.state.landmarks]
        if not lids:
            return np.zeros((0, self.state.dim))
        lms = np.array([self.state.landmarks[i] for i in lids])
        _, Pi, z = batch_projection(self.state.imu.R, self.state.imu.p, self.cam, lms)
        ok = z > MIN_DEPTH
        return self._jacobian([l for l, o in zip(lids, ok) if o], Pi[ok])
