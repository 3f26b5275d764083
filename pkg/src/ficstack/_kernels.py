"""Compiled inner loop of the plant integrator.

Mirrors ``forward_kinematics``, ``dynamics_terms`` and ``external_torques``
on flat arrays so that the 10 kHz physics loop runs without Python overhead.
The numpy versions stay the reference; tests compare the two.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def _rot(axis, angle):
    x, y, z = axis[0], axis[1], axis[2]
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    R = np.empty((3, 3))
    R[0, 0] = c + x * x * C
    R[0, 1] = x * y * C - z * s
    R[0, 2] = x * z * C + y * s
    R[1, 0] = y * x * C + z * s
    R[1, 1] = c + y * y * C
    R[1, 2] = y * z * C - x * s
    R[2, 0] = z * x * C - y * s
    R[2, 1] = z * y * C + x * s
    R[2, 2] = c + z * z * C
    return R


@njit(cache=True)
def fk(axes, org_R, org_p, is_rev, q):
    n = q.shape[0]
    RL = np.empty((n, 3, 3))
    PL = np.empty((n, 3))
    Z = np.empty((n, 3))
    O = np.empty((n, 3))
    R = np.eye(3)
    p = np.zeros(3)
    for i in range(n):
        p = R @ org_p[i] + p
        R = R @ org_R[i]
        Z[i] = R @ axes[i]
        O[i] = p
        if is_rev[i]:
            R = R @ _rot(axes[i], q[i])
        else:
            p = p + Z[i] * q[i]
        RL[i] = R
        PL[i] = p
    return RL, PL, Z, O


@njit(cache=True)
def point_jac(Z, O, is_rev, link, point):
    n = Z.shape[0]
    J = np.zeros((6, n))
    for j in range(link + 1):
        if is_rev[j]:
            v = _cross(Z[j], point - O[j])
            J[0:3, j] = v
            J[3:6, j] = Z[j]
        else:
            J[0:3, j] = Z[j]
    return J


@njit(cache=True)
def dyn(RL, PL, Z, O, is_rev, mass, com, inertia, gravity, qd):
    n = qd.shape[0]
    M = np.zeros((n, n))
    bias = np.zeros(n)
    # joint-origin velocities and axis rates
    zdot = np.empty((n, 3))
    odot = np.empty((n, 3))
    w_parent = np.zeros(3)
    v_parent = np.zeros(3)      # velocity of the link i-1 origin
    p_parent = np.zeros(3)
    for j in range(n):
        zdot[j] = _cross(w_parent, Z[j])
        odot[j] = v_parent + _cross(w_parent, O[j] - p_parent)
        if is_rev[j]:
            w_parent = w_parent + Z[j] * qd[j]
            v_parent = odot[j]
        else:
            v_parent = odot[j] + Z[j] * qd[j] + _cross(w_parent, PL[j] - O[j])
        p_parent = PL[j]
    w_link = np.zeros(3)
    for i in range(n):
        R = RL[i]
        c = PL[i] + R @ com[i]
        Iw = R @ inertia[i] @ R.T
        Jv = np.zeros((3, n))
        Jw = np.zeros((3, n))
        dJv = np.zeros((3, n))
        dJw = np.zeros((3, n))
        if is_rev[i]:
            w_link = w_link + Z[i] * qd[i]
        for j in range(i + 1):
            if is_rev[j]:
                Jv[:, j] = _cross(Z[j], c - O[j])
                Jw[:, j] = Z[j]
            else:
                Jv[:, j] = Z[j]
        cdot = Jv @ qd
        for j in range(i + 1):
            if is_rev[j]:
                dJv[:, j] = _cross(zdot[j], c - O[j]) + _cross(Z[j], cdot - odot[j])
                dJw[:, j] = zdot[j]
            else:
                dJv[:, j] = zdot[j]
        M += mass[i] * (Jv.T @ Jv) + Jw.T @ Iw @ Jw
        acc = dJv @ qd - gravity
        alpha = dJw @ qd
        Iom = Iw @ w_link
        mom = Iw @ alpha + _cross(w_link, Iom)
        bias += mass[i] * (Jv.T @ acc) + Jw.T @ mom
    M = 0.5 * (M + M.T)
    return M, bias


@njit(cache=True)
def integrate(axes, org_R, org_p, is_rev, mass, com, inertia, gravity,
              q, qd, t, tau_cmd, h, substeps, joint_damping,
              dist_link, dist_off, dist_wrench, dist_window,
              obs_kind, obs_geom, obs_normal, obs_kd, probe_obs, probe_link, probe_off):
    """``substeps`` semi-implicit Euler steps of size ``h``.

    Returns q, qd, t, last external torque, and per-probe (depth, force).
    """
    n = q.shape[0]
    q = q.copy()
    qd = qd.copy()
    n_probe = probe_obs.shape[0]
    depth_out = np.zeros(n_probe)
    force_out = np.zeros(n_probe)
    tau_ext = np.zeros(n)
    for _ in range(substeps):
        RL, PL, Z, O = fk(axes, org_R, org_p, is_rev, q)
        M, bias = dyn(RL, PL, Z, O, is_rev, mass, com, inertia, gravity, qd)
        tau_ext = np.zeros(n)
        for d in range(dist_link.shape[0]):
            if dist_window[d, 0] <= t and t < dist_window[d, 1]:
                L = dist_link[d]
                pt = RL[L] @ dist_off[d] + PL[L]
                J = point_jac(Z, O, is_rev, L, pt)
                tau_ext += J.T @ dist_wrench[d]
        for k in range(n_probe):
            L = probe_link[k]
            ob = probe_obs[k]
            pt = RL[L] @ probe_off[k] + PL[L]
            if obs_kind[ob] == 0:
                dvec = pt - obs_geom[ob, 0:3]
                dist = np.sqrt(dvec @ dvec)
                if dist > 0.0:
                    nrm = dvec / dist
                else:
                    nrm = np.array([0.0, 0.0, 1.0])
                depth = obs_geom[ob, 3] - dist
            else:
                nrm = obs_normal[ob]
                depth = -((pt - obs_geom[ob, 0:3]) @ nrm)
            depth_out[k] = depth
            force_out[k] = 0.0
            if depth > 0.0:
                Jl = point_jac(Z, O, is_rev, L, pt)[0:3]
                rate = -(nrm @ (Jl @ qd))
                f = obs_kd[ob, 0] * depth + obs_kd[ob, 1] * rate
                if f > 0.0:
                    tau_ext += Jl.T @ (f * nrm)
                    force_out[k] = f
        rhs = tau_cmd + tau_ext - bias - joint_damping * qd
        qdd = np.linalg.solve(M, rhs)
        qd = qd + h * qdd
        q = q + h * qd
        t += h
    return q, qd, t, tau_ext, depth_out, force_out
