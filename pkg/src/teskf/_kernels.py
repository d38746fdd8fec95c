"""Numba kernels for the IMU inner loop.

The nominal state, the 15x15 transition and the accumulated noise are
integrated jointly with RK4 at the IMU rate.  Inputs between two samples
are linearly interpolated.  Products are written as explicit loops over the
nonzero blocks of F: at this size BLAS call overhead dominates.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def skew3(v):
    out = np.zeros((3, 3))
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


@njit(cache=True)
def _mv3(A, x):
    out = np.empty(3)
    for i in range(3):
        out[i] = A[i, 0] * x[0] + A[i, 1] * x[1] + A[i, 2] * x[2]
    return out


@njit(cache=True)
def _mm3(A, B):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return out


@njit(cache=True)
def orthonormalize(R):
    # Newton-Schulz iterations towards the orthogonal polar factor.
    X = R.copy()
    for _ in range(3):
        M = _mm3(X.T, X)
        for i in range(3):
            for j in range(3):
                M[i, j] = -M[i, j]
            M[i, i] += 3.0
        X = _mm3(X, M)
        for i in range(3):
            for j in range(3):
                X[i, j] *= 0.5
    return X


@njit(cache=True)
def _f_times(Rs, acc_body, X, out):
    """out = F_I @ X for the 15-dim IMU error state (sparse block form)."""
    A = skew3(_mv3(Rs, acc_body))
    m = X.shape[1]
    out[:, :] = 0.0
    for c in range(m):
        for i in range(3):
            s0 = 0.0
            s2 = 0.0
            for j in range(3):
                s0 -= Rs[i, j] * X[9 + j, c]
                s2 -= A[i, j] * X[j, c] + Rs[i, j] * X[12 + j, c]
            out[i, c] = s0
            out[3 + i, c] = X[6 + i, c]
            out[6 + i, c] = s2


@njit(cache=True)
def _noise_drive(Rs, qc, out):
    """out = G_I Qc G_I^T."""
    out[:, :] = 0.0
    RRt = _mm3(Rs, Rs.T)
    for i in range(3):
        for j in range(3):
            out[i, j] = qc[0] * RRt[i, j]
            out[6 + i, 6 + j] = qc[1] * RRt[i, j]
        out[9 + i, 9 + i] = qc[2]
        out[12 + i, 12 + i] = qc[3]


@njit(cache=True)
def _matmul(A, B, out):
    n, k = A.shape
    m = B.shape[1]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += A[i, l] * B[l, j]
            out[i, j] = s


@njit(cache=True)
def rk4_step(R, p, v, bg, ba, w0, a0, w1, a1, dt, g, qc, with_cov):
    """One RK4 step over [0, dt]; returns (R1, p1, v1, Phi, Q)."""
    Phi = np.eye(15)
    Q = np.zeros((15, 15))
    R1 = R.copy()
    p1 = p.copy()
    v1 = v.copy()
    _rk4(R1, p1, v1, bg, ba, w0, a0, w1, a1, dt, g, qc, with_cov, Phi, Q, np.empty((8, 15, 15)), np.empty((12, 3)))
    return R1, p1, v1, Phi, Q


@njit(cache=True)
def _rk4(R, p, v, bg, ba, w0, a0, w1, a1, dt, g, qc, with_cov, Phi, Q, work, small):
    # Advances R, p, v, Phi, Q in place.  work holds eight 15x15 buffers and
    # small twelve 3-vectors so the inner loop never allocates.
    n = 15
    kPhi, kQ, sPhi, sQ, Phis, Qs, FQ, GQG = (
        work[0], work[1], work[2], work[3], work[4], work[5], work[6], work[7]
    )
    kR = np.zeros((3, 3))
    sR = np.zeros((3, 3))
    Rs = np.empty((3, 3))
    kp, kv, sp, sv, w, ab, Rab = (
        small[0], small[1], small[2], small[3], small[4], small[5], small[6]
    )
    for i in range(3):
        kp[i] = 0.0
        kv[i] = 0.0
        sp[i] = 0.0
        sv[i] = 0.0
    if with_cov:
        kPhi[:, :] = 0.0
        kQ[:, :] = 0.0
        sPhi[:, :] = 0.0
        sQ[:, :] = 0.0

    for st in range(4):
        c = 0.0 if st == 0 else (1.0 if st == 3 else 0.5)
        wt = 2.0 if (st == 1 or st == 2) else 1.0
        h = c * dt
        for i in range(3):
            for j in range(3):
                Rs[i, j] = R[i, j] + h * kR[i, j]
            w[i] = w0[i] + c * (w1[i] - w0[i]) - bg[i]
            ab[i] = a0[i] + c * (a1[i] - a0[i]) - ba[i]
        vs0 = v[0] + h * kv[0]
        vs1 = v[1] + h * kv[1]
        vs2 = v[2] + h * kv[2]
        if with_cov:
            for i in range(n):
                for j in range(n):
                    Phis[i, j] = Phi[i, j] + h * kPhi[i, j]
                    Qs[i, j] = Q[i, j] + h * kQ[i, j]
            _f_times(Rs, ab, Phis, kPhi)
            _f_times(Rs, ab, Qs, FQ)
            _noise_drive(Rs, qc, GQG)
            for i in range(n):
                for j in range(n):
                    kQ[i, j] = FQ[i, j] + FQ[j, i] + GQG[i, j]
                    sPhi[i, j] += wt * kPhi[i, j]
                    sQ[i, j] += wt * kQ[i, j]
        # kR = Rs [w]x
        for i in range(3):
            kR[i, 0] = Rs[i, 1] * w[2] - Rs[i, 2] * w[1]
            kR[i, 1] = Rs[i, 2] * w[0] - Rs[i, 0] * w[2]
            kR[i, 2] = Rs[i, 0] * w[1] - Rs[i, 1] * w[0]
            Rab[i] = Rs[i, 0] * ab[0] + Rs[i, 1] * ab[1] + Rs[i, 2] * ab[2]
        kp[0], kp[1], kp[2] = vs0, vs1, vs2
        for i in range(3):
            kv[i] = Rab[i] + g[i]
            sp[i] += wt * kp[i]
            sv[i] += wt * kv[i]
            for j in range(3):
                sR[i, j] += wt * kR[i, j]

    f = dt / 6.0
    for i in range(3):
        p[i] += f * sp[i]
        v[i] += f * sv[i]
        for j in range(3):
            Rs[i, j] = R[i, j] + f * sR[i, j]
    R[:, :] = orthonormalize(Rs)
    if with_cov:
        for i in range(n):
            for j in range(n):
                Phi[i, j] += f * sPhi[i, j]
                Q[i, j] += f * sQ[i, j]
        for i in range(n):
            for j in range(i + 1, n):
                q = 0.5 * (Q[i, j] + Q[j, i])
                Q[i, j] = q
                Q[j, i] = q


@njit(cache=True)
def integrate_interval(R, p, v, bg, ba, t, gyro, accel, g, qc, with_cov):
    """Integrate the nominal state and the accumulated Phi, Q ODEs across samples.

    Carrying the running Phi and Q through RK4 keeps every product sparse in F
    instead of composing dense 15x15 step matrices.
    """
    R = R.copy()
    p = p.copy()
    v = v.copy()
    Phi = np.eye(15)
    Q = np.zeros((15, 15))
    work = np.empty((8, 15, 15))
    small = np.empty((12, 3))
    for i in range(t.shape[0] - 1):
        _rk4(R, p, v, bg, ba, gyro[i], accel[i], gyro[i + 1], accel[i + 1],
             t[i + 1] - t[i], g, qc, with_cov, Phi, Q, work, small)
    return R, p, v, Phi, Q


@njit(cache=True)
def triangulate_points(uv, R_GC, centres, fx, fy, cx, cy, max_cond, refine, min_depth):
    """Linear triangulation plus Gauss-Newton polish; returns (status, point).

    status: 0 ok, 1 ill-conditioned, 2 non-positive depth.
    """
    k = uv.shape[0]
    N = np.zeros((3, 3))
    rhs = np.zeros(3)
    for o in range(k):
        b0 = (uv[o, 0] - cx) / fx
        b1 = (uv[o, 1] - cy) / fy
        bb = b0 * b0 + b1 * b1 + 1.0
        b = (b0, b1, 1.0)
        M = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                M[i, j] = -b[i] * b[j]
            M[i, i] += bb
        # W = R_GC M R_GC^T
        RM = _mm3(R_GC[o], M)
        W = _mm3(RM, R_GC[o].T)
        for i in range(3):
            for j in range(3):
                N[i, j] += W[i, j]
                rhs[i] += W[i, j] * centres[o, j]
    ev = np.linalg.eigvalsh(N)
    if ev[0] <= 0.0 or np.sqrt(ev[2] / ev[0]) > max_cond:
        return 1, np.zeros(3)
    lm = np.linalg.solve(N, rhs)
    for _ in range(refine):
        JtJ = np.zeros((3, 3))
        Jtr = np.zeros(3)
        for o in range(k):
            d = lm - centres[o]
            pc = _mv3(R_GC[o].T, d)
            if pc[2] <= min_depth:
                return 2, lm
            iz = 1.0 / pc[2]
            r0 = uv[o, 0] - (fx * pc[0] * iz + cx)
            r1 = uv[o, 1] - (fy * pc[1] * iz + cy)
            J = np.empty((2, 3))
            for j in range(3):
                J[0, j] = fx * iz * (R_GC[o, j, 0] - pc[0] * iz * R_GC[o, j, 2])
                J[1, j] = fy * iz * (R_GC[o, j, 1] - pc[1] * iz * R_GC[o, j, 2])
            for i in range(3):
                Jtr[i] += J[0, i] * r0 + J[1, i] * r1
                for j in range(3):
                    JtJ[i, j] += J[0, i] * J[0, j] + J[1, i] * J[1, j]
        step = np.linalg.solve(JtJ, Jtr)
        lm = lm + step
        if step @ step < 1e-18 * (1.0 + lm @ lm):
            break
    for o in range(k):
        pc = _mv3(R_GC[o].T, lm - centres[o])
        if pc[2] <= min_depth:
            return 2, lm
    return 0, lm
