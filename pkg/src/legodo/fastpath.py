"""Compiled kernels for the estimator's per-frame hot path.

These mirror ``eskf.propagate``, ``eskf.zupt_update`` and
``kinematics.foot_position_and_jacobian`` operation for operation, but work
in place on plain arrays so a 500 Hz stream runs well inside real time.  The
numpy versions remain the reference; tests compare the two.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

CODE_ACCEPTED = 1
CODE_REJECTED = 2
CODE_SKIPPED = 3


@njit(cache=True)
def _skew(v):
    M = np.zeros((3, 3))
    M[0, 1] = -v[2]
    M[0, 2] = v[1]
    M[1, 0] = v[2]
    M[1, 2] = -v[0]
    M[2, 0] = -v[1]
    M[2, 1] = v[0]
    return M


@njit(cache=True)
def _mm(A, B):
    """Small dense product with plain loops (BLAS call overhead dominates at this size)."""
    n, m, q = A.shape[0], A.shape[1], B.shape[1]
    C = np.zeros((n, q))
    for i in range(n):
        for k in range(m):
            a = A[i, k]
            for j in range(q):
                C[i, j] += a * B[k, j]
    return C


@njit(cache=True)
def _mv(A, x):
    n, m = A.shape
    y = np.zeros(n)
    for i in range(n):
        for k in range(m):
            y[i] += A[i, k] * x[k]
    return y


@njit(cache=True)
def _exp(phi):
    x, y, z = phi[0], phi[1], phi[2]
    t2 = x * x + y * y + z * z
    t = math.sqrt(t2)
    if t < 1e-8:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        a = math.sin(t) / t
        b = (1.0 - math.cos(t)) / t2
    K = _skew(phi)
    return np.eye(3) + a * K + b * _mm(K, K)


@njit(cache=True)
def _sym3_eig_extremes(S):
    """Smallest and largest eigenvalue of a symmetric 3x3 matrix (trigonometric form)."""
    p1 = S[0, 1] ** 2 + S[0, 2] ** 2 + S[1, 2] ** 2
    q = (S[0, 0] + S[1, 1] + S[2, 2]) / 3.0
    if p1 == 0.0:
        lo = min(S[0, 0], min(S[1, 1], S[2, 2]))
        hi = max(S[0, 0], max(S[1, 1], S[2, 2]))
        return lo, hi
    p2 = (S[0, 0] - q) ** 2 + (S[1, 1] - q) ** 2 + (S[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    a, b, c = (S[0, 0] - q) / p, S[0, 1] / p, S[0, 2] / p
    e, f, k = (S[1, 1] - q) / p, S[1, 2] / p, (S[2, 2] - q) / p
    r = 0.5 * (a * (e * k - f * f) - b * (b * k - f * c) + c * (b * f - e * c))
    r = min(1.0, max(-1.0, r))
    phi = math.acos(r) / 3.0
    hi = q + 2.0 * p * math.cos(phi)
    lo = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    return lo, hi


@njit(cache=True)
def _inv3(S):
    a, b, c = S[0, 0], S[0, 1], S[0, 2]
    d, e, f = S[1, 0], S[1, 1], S[1, 2]
    g, h, k = S[2, 0], S[2, 1], S[2, 2]
    A = e * k - f * h
    B = -(d * k - f * g)
    C = d * h - e * g
    det = a * A + b * B + c * C
    out = np.empty((3, 3))
    out[0, 0] = A / det
    out[0, 1] = -(b * k - c * h) / det
    out[0, 2] = (b * f - c * e) / det
    out[1, 0] = B / det
    out[1, 1] = (a * k - c * g) / det
    out[1, 2] = -(a * f - c * d) / det
    out[2, 0] = C / det
    out[2, 1] = -(a * h - b * g) / det
    out[2, 2] = (a * e - b * d) / det
    return out


@njit(cache=True)
def propagate_inplace(p, v, R, b_a, b_g, P, a_raw, w_raw, dt, qc, g):
    """Euler step of the nominal state and ``P <- F_d P F_d^T + G Q_c G^T dt``."""
    a = a_raw - b_a
    w = w_raw - b_g
    F = np.zeros((15, 15))
    for i in range(3):
        F[i, 3 + i] = 1.0
        F[6 + i, 12 + i] = -1.0
    F[3:6, 6:9] = -_mm(R, _skew(a))
    F[3:6, 9:12] = -R
    F[6:9, 6:9] = -_skew(w)
    G = np.zeros((15, 12))
    G[3:6, 0:3] = -R
    for i in range(3):
        G[6 + i, 3 + i] = -1.0
        G[9 + i, 6 + i] = 1.0
        G[12 + i, 9 + i] = 1.0
    Fd = np.eye(15) + F * dt
    Gq = G * qc  # G @ diag(qc)
    Pn = Fd @ P @ Fd.T + (Gq @ G.T) * dt
    P[:, :] = 0.5 * (Pn + Pn.T)

    acc = _mv(R, a) + g
    for i in range(3):
        p[i] += v[i] * dt
        v[i] += acc[i] * dt
    R[:, :] = _mm(R, _exp(w * dt))


@njit(cache=True)
def zupt_inplace(p, v, R, b_a, b_g, P, v_rel, p_foot, R_meas, gamma, max_cond):
    """Zero-velocity update; returns ``(code, squared Mahalanobis distance)``.

    State and ``P`` are modified only for an accepted update.  ``H`` is
    nonzero only in the velocity, attitude and gyro-bias columns; the loops
    below use that sparsity.
    """
    Ht = -_mm(R, _skew(v_rel))  # attitude block
    Hb = _mm(R, _skew(p_foot))  # gyro-bias block
    nu = -(v + _mv(R, v_rel))

    PHt = np.empty((15, 3))
    for r in range(15):
        for i in range(3):
            acc = P[r, 3 + i]
            for k in range(3):
                acc += P[r, 6 + k] * Ht[i, k] + P[r, 12 + k] * Hb[i, k]
            PHt[r, i] = acc
    S = np.empty((3, 3))
    for i in range(3):
        for l in range(3):
            acc = PHt[3 + i, l]
            for k in range(3):
                acc += Ht[i, k] * PHt[6 + k, l] + Hb[i, k] * PHt[12 + k, l]
            S[i, l] = acc + R_meas[i, l]
    S = 0.5 * (S + S.T)
    for i in range(3):
        for j in range(3):
            if not math.isfinite(S[i, j]):
                return CODE_SKIPPED, math.nan
    lo, hi = _sym3_eig_extremes(S)
    if lo <= 0.0 or hi / lo > max_cond:
        return CODE_SKIPPED, math.nan
    S_inv = _inv3(S)
    Sn = _mv(S_inv, nu)
    d2 = nu[0] * Sn[0] + nu[1] * Sn[1] + nu[2] * Sn[2]
    if d2 > gamma:
        return CODE_REJECTED, d2

    K = np.zeros((15, 3))
    for r in range(15):
        for i in range(3):
            K[r, i] = PHt[r, 0] * S_inv[0, i] + PHt[r, 1] * S_inv[1, i] + PHt[r, 2] * S_inv[2, i]
    dx = _mv(K, nu)
    # Joseph form (I - K H) P (I - K H)^T + K R K^T
    A = np.eye(15)
    for r in range(15):
        for i in range(3):
            A[r, 3 + i] -= K[r, i]
            for k in range(3):
                A[r, 6 + k] -= K[r, i] * Ht[i, k]
                A[r, 12 + k] -= K[r, i] * Hb[i, k]
    AP = np.zeros((15, 15))
    for r in range(15):
        for c in range(15):
            acc = 0.0
            for k in range(15):
                acc += A[r, k] * P[k, c]
            AP[r, c] = acc
    KR = _mm(K, R_meas)
    for r in range(15):
        for c in range(r, 15):
            acc = 0.0
            for k in range(15):
                acc += AP[r, k] * A[c, k]
            acc += KR[r, 0] * K[c, 0] + KR[r, 1] * K[c, 1] + KR[r, 2] * K[c, 2]
            P[r, c] = acc
    for r in range(15):
        for c in range(r):
            P[r, c] = P[c, r]
    for i in range(3):
        p[i] += dx[i]
        v[i] += dx[3 + i]
        b_a[i] += dx[9 + i]
        b_g[i] += dx[12 + i]
    R[:, :] = _mm(R, _exp(dx[6:9]))
    return CODE_ACCEPTED, d2


@njit(cache=True)
def leg_velocity(hip, lengths, signs, q, q_dot, omega, v, R):
    """Foot position (body), relative foot velocity (body) and world foot velocity."""
    l_hip, l_thigh, l_calf = lengths[0], lengths[1], lengths[2]
    s1, s2, s3 = signs[0], signs[1], signs[2]
    a = s1 * q[0]
    b = s2 * q[1]
    c = s3 * q[2]
    ca, sa = math.cos(a), math.sin(a)
    sb, cb = math.sin(b), math.cos(b)
    sbc, cbc = math.sin(b + c), math.cos(b + c)
    ly = s1 * l_hip
    ux = -l_thigh * sb - l_calf * sbc
    uz = -l_thigh * cb - l_calf * cbc
    pf = np.empty(3)
    pf[0] = hip[0] + ux
    pf[1] = hip[1] + ca * ly - sa * uz
    pf[2] = hip[2] + sa * ly + ca * uz
    dux_dc = -l_calf * cbc
    duz_dc = l_calf * sbc
    J = np.empty((3, 3))
    J[0, 0] = 0.0
    J[0, 1] = s2 * uz
    J[0, 2] = s3 * dux_dc
    J[1, 0] = s1 * (-sa * ly - ca * uz)
    J[1, 1] = s2 * (sa * ux)
    J[1, 2] = s3 * (-sa * duz_dc)
    J[2, 0] = s1 * (ca * ly - sa * uz)
    J[2, 1] = s2 * (-ca * ux)
    J[2, 2] = s3 * (ca * duz_dc)
    v_rel = np.empty(3)
    v_rel[0] = omega[1] * pf[2] - omega[2] * pf[1]
    v_rel[1] = omega[2] * pf[0] - omega[0] * pf[2]
    v_rel[2] = omega[0] * pf[1] - omega[1] * pf[0]
    v_rel += _mv(J, q_dot)
    h = v + _mv(R, v_rel)
    return pf, v_rel, h


@njit(cache=True)
def legs_kinematics(hips, lengths, signs, Q, QD, omega, v, R, max_speed):
    """``leg_velocity`` for four legs at once plus a per-leg sanity flag."""
    n = Q.shape[0]
    PF = np.empty((n, 3))
    VR = np.empty((n, 3))
    HW = np.empty((n, 3))
    ok = np.empty(n, dtype=np.bool_)
    for j in range(n):
        good = True
        for k in range(3):
            if not (math.isfinite(Q[j, k]) and math.isfinite(QD[j, k])) or abs(QD[j, k]) >= max_speed:
                good = False
        ok[j] = good
        if good:
            pf, vr, h = leg_velocity(hips[j], lengths[j], signs[j], Q[j], QD[j], omega, v, R)
            PF[j] = pf
            VR[j] = vr
            HW[j] = h
        else:
            PF[j] = np.nan
            VR[j] = np.nan
            HW[j] = np.nan
    return PF, VR, HW, ok


@njit(cache=True)
def zupt_legs(p, v, R, b_a, b_g, P, PF, VR, var, attempt, gamma, max_cond):
    """Sequential isotropic ZUPTs for the legs flagged in ``attempt``."""
    n = PF.shape[0]
    codes = np.zeros(n, dtype=np.int8)
    d2 = np.full(n, np.nan)
    for j in range(n):
        if attempt[j]:
            c, m = zupt_inplace(p, v, R, b_a, b_g, P, VR[j], PF[j], var[j] * np.eye(3), gamma, max_cond)
            codes[j] = c
            d2[j] = m
    return codes, d2
