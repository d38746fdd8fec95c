"""The error-state transformation T(x_hat) and its sparse products.

``T = I + E`` where ``E`` places ``[p]x``, ``[v]x`` and ``[l_i]x`` in the
orientation-error column of the position, velocity and landmark rows.
Since ``E @ E = 0`` the inverse is ``I - E``.  T is never formed densely in
the filter: every product touches only the orientation column/rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lie import skew
from .model import BA, BG, IMU_DIM, POS, THETA, VEL, GRAVITY, ImuSample, VinsState, continuous_error_jacobians

SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class ErrorTransform:
    dim: int
    rows: np.ndarray  # (3k,) row indices receiving the skew blocks
    S: np.ndarray  # (3k, 3) stacked skew generators

    @property
    def generators(self) -> np.ndarray:
        """The (k,3) vectors whose skews fill the theta column."""
        blocks = self.S.reshape(-1, 3, 3)
        return np.stack([blocks[:, 2, 1], blocks[:, 0, 2], blocks[:, 1, 0]], axis=1)

    def dense(self, inverse: bool = False) -> np.ndarray:
        T = np.eye(self.dim)
        T[self.rows, 0:3] = -self.S if inverse else self.S
        return T


def _skews(vs: np.ndarray) -> np.ndarray:
    vs = np.asarray(vs, dtype=float).reshape(-1, 3)
    out = np.zeros((vs.shape[0], 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -vs[:, 2], vs[:, 1]
    out[:, 1, 0], out[:, 1, 2] = vs[:, 2], -vs[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -vs[:, 1], vs[:, 0]
    return out


def _layout(m: int) -> np.ndarray:
    blocks = [3, 6] + [IMU_DIM + 3 * i for i in range(m)]
    return (np.asarray(blocks)[:, None] + np.arange(3)[None, :]).ravel()


def build_transform(state: VinsState) -> ErrorTransform:
    lms = state.landmark_array()
    gens = np.vstack([state.imu.p, state.imu.v, lms]) if len(lms) else np.vstack([state.imu.p, state.imu.v])
    return ErrorTransform(state.dim, _layout(len(lms)), _skews(gens).reshape(-1, 3))


def _sign(inverse: bool) -> float:
    return -1.0 if inverse else 1.0


def _check_dim(t: ErrorTransform, n: int):
    if n != t.dim:
        raise ValueError(f"dimension mismatch: transform {t.dim}, operand {n}")


def apply(t: ErrorTransform, x: np.ndarray) -> np.ndarray:
    """``T @ x`` for an error vector."""
    _check_dim(t, x.shape[0])
    out = np.array(x, dtype=float)
    out[t.rows] += t.S @ x[0:3]
    return out


def apply_inv(t: ErrorTransform, x: np.ndarray) -> np.ndarray:
    _check_dim(t, x.shape[0])
    out = np.array(x, dtype=float)
    out[t.rows] -= t.S @ x[0:3]
    return out


# The skew rows are always p, v (rows 3:9) followed by every landmark
# (rows 15:), so row/column updates go through two slices instead of a
# fancy index, which would gather and scatter the whole block.
_SPLIT = ((slice(3, 9), slice(0, 6)), (slice(IMU_DIM, None), slice(6, None)))


def left_mul(t: ErrorTransform, X: np.ndarray, inverse: bool = False) -> np.ndarray:
    """``T @ X`` (or ``T^-1 @ X``)."""
    _check_dim(t, X.shape[0])
    out = np.array(X, dtype=float)
    top = X[0:3]
    for dst, src in _SPLIT:
        if inverse:
            out[dst] -= t.S[src] @ top
        else:
            out[dst] += t.S[src] @ top
    return out


def right_mul(t: ErrorTransform, X: np.ndarray, inverse: bool = False) -> np.ndarray:
    """``X @ T`` (or ``X @ T^-1``)."""
    _check_dim(t, X.shape[1])
    out = np.array(X, dtype=float)
    acc = sum(X[:, dst] @ t.S[src] for dst, src in _SPLIT)
    out[:, 0:3] += _sign(inverse) * acc
    return out


def right_mul_transpose(t: ErrorTransform, X: np.ndarray, inverse: bool = False) -> np.ndarray:
    """``X @ T^T`` (or ``X @ T^-T``)."""
    _check_dim(t, X.shape[1])
    out = np.array(X, dtype=float)
    left = X[:, 0:3]
    for dst, src in _SPLIT:
        if inverse:
            out[:, dst] -= left @ t.S[src].T
        else:
            out[:, dst] += left @ t.S[src].T
    return out


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def sandwich(t: ErrorTransform, P: np.ndarray, direction: str = "forward") -> np.ndarray:
    """``T P T^T`` (forward) or ``T^-1 P T^-T`` (inverse)."""
    if direction not in ("forward", "inverse"):
        raise ValueError(f"unknown direction {direction!r}")
    scale = max(1.0, float(np.max(np.abs(P)))) if P.size else 1.0
    if P.size and np.max(np.abs(P - P.T)) > SYMMETRY_TOL * scale:
        raise ValueError("covariance is not symmetric")
    inverse = direction == "inverse"
    A = left_mul(t, P, inverse)
    A = right_mul_transpose(t, A, inverse)
    return symmetrize(A)


def transform_derivative(state: VinsState, sample: ImuSample, gravity=GRAVITY) -> np.ndarray:
    """Dense ``dT/dt`` along the nominal trajectory: ``[v]x`` and ``[a]x``."""
    imu = state.imu
    a = imu.R @ (np.asarray(sample.accel) - imu.ba) + gravity
    Td = np.zeros((state.dim, state.dim))
    Td[POS, THETA] = skew(imu.v)
    Td[VEL, THETA] = skew(a)
    return Td


def transformed_jacobians(state: VinsState, sample: ImuSample, gravity=GRAVITY):
    """``(F*, G*, H_e*)`` of the transformed error-state system.

    ``H_e*`` is stacked for every landmark in state order (3m x n).
    """
    n = state.dim
    imu = state.imu
    R = imu.R
    F = np.zeros((n, n))
    F[THETA, BG] = -R
    F[POS, VEL] = np.eye(3)
    F[POS, BG] = -skew(imu.p) @ R
    F[VEL, THETA] = skew(gravity)
    F[VEL, BG] = -skew(imu.v) @ R
    F[VEL, BA] = -R
    for i, lm in enumerate(state.landmarks.values()):
        k = IMU_DIM + 3 * i
        F[k : k + 3, BG] = -skew(lm) @ R

    _, G = continuous_error_jacobians(state, sample)
    Gs = left_mul(build_transform(state), G)
    return F, Gs, transformed_essential_jacobian(state)


def transformed_essential_jacobian(state: VinsState) -> np.ndarray:
    m = len(state.landmarks)
    He = np.zeros((3 * m, state.dim))
    for i in range(m):
        He[3 * i : 3 * i + 3, POS] = -np.eye(3)
        k = IMU_DIM + 3 * i
        He[3 * i : 3 * i + 3, k : k + 3] = np.eye(3)
    return He
