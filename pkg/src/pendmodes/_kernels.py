"""Numba kernels for the hot integration loops.

All kernels work on the lumped model coefficients (a1, a2, b, g1, g2)
from PendulumParams.coeffs() and on flat float64 state vectors
x = (q1, q2, qd1, qd2).  They implement exactly the same closed forms as
the reference functions in `dynamics`; the test suite pins the two
implementations against each other.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _accel(a1, a2, b, g1, g2, q1, q2, qd1, qd2, t1, t2):
    c2 = np.cos(q2)
    s2 = np.sin(q2)
    m11 = a1 + a2 + 2.0 * b * c2
    m12 = a2 + b * c2
    m22 = a2
    det = m11 * m22 - m12 * m12
    s12 = np.sin(q1 + q2)
    gr1 = g1 * np.sin(q1) + g2 * s12
    gr2 = g2 * s12
    co1 = -b * s2 * (2.0 * qd1 * qd2 + qd2 * qd2)
    co2 = b * s2 * qd1 * qd1
    r1 = t1 - co1 - gr1
    r2 = t2 - co2 - gr2
    qdd1 = (m22 * r1 - m12 * r2) / det
    qdd2 = (m11 * r2 - m12 * r1) / det
    return qdd1, qdd2


@njit(cache=True)
def _vf(a1, a2, b, g1, g2, x, t1, t2, out):
    qdd1, qdd2 = _accel(a1, a2, b, g1, g2, x[0], x[1], x[2], x[3], t1, t2)
    out[0] = x[2]
    out[1] = x[3]
    out[2] = qdd1
    out[3] = qdd2


@njit(cache=True)
def _rk4_step(a1, a2, b, g1, g2, x, t1, t2, h):
    """One classical RK4 step with the torque held constant."""
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    y = np.empty(4)
    _vf(a1, a2, b, g1, g2, x, t1, t2, k1)
    for i in range(4):
        y[i] = x[i] + 0.5 * h * k1[i]
    _vf(a1, a2, b, g1, g2, y, t1, t2, k2)
    for i in range(4):
        y[i] = x[i] + 0.5 * h * k2[i]
    _vf(a1, a2, b, g1, g2, y, t1, t2, k3)
    for i in range(4):
        y[i] = x[i] + h * k3[i]
    _vf(a1, a2, b, g1, g2, y, t1, t2, k4)
    out = np.empty(4)
    for i in range(4):
        out[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out


@njit(cache=True)
def _flow_const(a1, a2, b, g1, g2, x0, t1, t2, h, n):
    x = x0.copy()
    for _ in range(n):
        x = _rk4_step(a1, a2, b, g1, g2, x, t1, t2, h)
    return x


@njit(cache=True)
def _flow_const_record(a1, a2, b, g1, g2, x0, t1, t2, h, n, stride, out):
    """Integrate n steps, storing the state every `stride` steps
    (n must be a multiple of stride; out has n//stride + 1 rows)."""
    x = x0.copy()
    out[0] = x
    j = 1
    for k in range(1, n + 1):
        x = _rk4_step(a1, a2, b, g1, g2, x, t1, t2, h)
        if k % stride == 0:
            out[j] = x
            j += 1
    return x


@njit(cache=True)
def _a_matrix(a1, a2, b, g1, g2, x, amat):
    """Jacobian A = d(vector field)/d(state) of the torque-free flow."""
    q1, q2, qd1, qd2 = x[0], x[1], x[2], x[3]
    c2 = np.cos(q2)
    s2 = np.sin(q2)
    m11 = a1 + a2 + 2.0 * b * c2
    m12 = a2 + b * c2
    m22 = a2
    det = m11 * m22 - m12 * m12
    i11 = m22 / det
    i12 = -m12 / det
    i22 = m11 / det

    s12 = np.sin(q1 + q2)
    c12 = np.cos(q1 + q2)
    gr1 = g1 * np.sin(q1) + g2 * s12
    gr2 = g2 * s12
    co1 = -b * s2 * (2.0 * qd1 * qd2 + qd2 * qd2)
    co2 = b * s2 * qd1 * qd1
    qdd1 = i11 * (-co1 - gr1) + i12 * (-co2 - gr2)
    qdd2 = i12 * (-co1 - gr1) + i22 * (-co2 - gr2)

    # d(g)/dq columns
    dg1_dq1 = g1 * np.cos(q1) + g2 * c12
    dg2_dq1 = g2 * c12
    dg1_dq2 = g2 * c12
    dg2_dq2 = g2 * c12

    # (dM/dq2) qdd + dc/dq2
    dm_qdd1 = -b * s2 * (2.0 * qdd1 + qdd2)
    dm_qdd2 = -b * s2 * qdd1
    dc1_dq2 = -b * c2 * (2.0 * qd1 * qd2 + qd2 * qd2)
    dc2_dq2 = b * c2 * qd1 * qd1
    f1_q2 = dm_qdd1 + dc1_dq2 + dg1_dq2
    f2_q2 = dm_qdd2 + dc2_dq2 + dg2_dq2

    # dc/dqd
    dc1_d1 = -2.0 * b * s2 * qd2
    dc1_d2 = -2.0 * b * s2 * (qd1 + qd2)
    dc2_d1 = 2.0 * b * s2 * qd1
    dc2_d2 = 0.0

    for i in range(4):
        for j in range(4):
            amat[i, j] = 0.0
    amat[0, 2] = 1.0
    amat[1, 3] = 1.0
    amat[2, 0] = -(i11 * dg1_dq1 + i12 * dg2_dq1)
    amat[3, 0] = -(i12 * dg1_dq1 + i22 * dg2_dq1)
    amat[2, 1] = -(i11 * f1_q2 + i12 * f2_q2)
    amat[3, 1] = -(i12 * f1_q2 + i22 * f2_q2)
    amat[2, 2] = -(i11 * dc1_d1 + i12 * dc2_d1)
    amat[3, 2] = -(i12 * dc1_d1 + i22 * dc2_d1)
    amat[2, 3] = -(i11 * dc1_d2 + i12 * dc2_d2)
    amat[3, 3] = -(i12 * dc1_d2 + i22 * dc2_d2)


@njit(cache=True)
def _aug_rhs(a1, a2, b, g1, g2, y, dy, amat):
    """RHS of the variational system: y = (x, vec(P)) with P row-major."""
    _vf(a1, a2, b, g1, g2, y[:4], 0.0, 0.0, dy[:4])
    _a_matrix(a1, a2, b, g1, g2, y[:4], amat)
    for i in range(4):
        for j in range(4):
            acc = 0.0
            for k in range(4):
                acc += amat[i, k] * y[4 + 4 * k + j]
            dy[4 + 4 * i + j] = acc


@njit(cache=True)
def _flow_var(a1, a2, b, g1, g2, x0, h, n):
    """Torque-free flow with the variational equations; returns the
    augmented end vector (x, vec(Phi))."""
    y = np.empty(20)
    y[:4] = x0
    for i in range(16):
        y[4 + i] = 0.0
    y[4] = 1.0
    y[9] = 1.0
    y[14] = 1.0
    y[19] = 1.0

    k1 = np.empty(20)
    k2 = np.empty(20)
    k3 = np.empty(20)
    k4 = np.empty(20)
    tmp = np.empty(20)
    amat = np.empty((4, 4))
    for _ in range(n):
        _aug_rhs(a1, a2, b, g1, g2, y, k1, amat)
        for i in range(20):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        _aug_rhs(a1, a2, b, g1, g2, tmp, k2, amat)
        for i in range(20):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        _aug_rhs(a1, a2, b, g1, g2, tmp, k3, amat)
        for i in range(20):
            tmp[i] = y[i] + h * k3[i]
        _aug_rhs(a1, a2, b, g1, g2, tmp, k4, amat)
        for i in range(20):
            y[i] = y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return y


@njit(cache=True)
def _energy(a1, a2, b, g1, g2, x):
    c2 = np.cos(x[1])
    m11 = a1 + a2 + 2.0 * b * c2
    m12 = a2 + b * c2
    kin = 0.5 * (m11 * x[2] * x[2] + 2.0 * m12 * x[2] * x[3] + a2 * x[3] * x[3])
    pot = g1 * (1.0 - np.cos(x[0])) + g2 * (1.0 - np.cos(x[0] + x[1]))
    return kin + pot
