"""Numba kernels for the per-tick hot path.

Everything here operates on plain float64 arrays so the control loop can run
thousands of ticks per second; the public modules wrap these in typed
containers. Chain description is modified Denavit-Hartenberg: row i holds
(alpha_{i-1}, a_{i-1}, d_i, theta_offset_i), all joints revolute about the
local z axis.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def link_transform(alpha, a, d, theta):
    """Relative rotation and origin offset of frame i in frame i-1."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    r = np.empty((3, 3))
    r[0, 0] = ct
    r[0, 1] = -st
    r[0, 2] = 0.0
    r[1, 0] = ca * st
    r[1, 1] = ca * ct
    r[1, 2] = -sa
    r[2, 0] = sa * st
    r[2, 1] = sa * ct
    r[2, 2] = ca
    p = np.empty(3)
    p[0] = a
    p[1] = -sa * d
    p[2] = ca * d
    return r, p


@njit(cache=True)
def frames(mdh, base_r, base_p, q):
    """World rotation and origin of the base frame and every joint frame.

    Returns (R_all, p_all) with shape (n+1, 3, 3) and (n+1, 3); index 0 is
    the base, index i the frame after joint i.
    """
    n = q.shape[0]
    r_all = np.empty((n + 1, 3, 3))
    p_all = np.empty((n + 1, 3))
    r_all[0] = base_r
    p_all[0] = base_p
    for i in range(n):
        rel_r, rel_p = link_transform(mdh[i, 0], mdh[i, 1], mdh[i, 2], mdh[i, 3] + q[i])
        r_all[i + 1] = r_all[i] @ rel_r
        p_all[i + 1] = p_all[i] + r_all[i] @ rel_p
    return r_all, p_all


@njit(cache=True)
def sphere_centers(r_all, p_all, sphere_link, sphere_local):
    """World positions of the bounding-sphere centers."""
    k = sphere_link.shape[0]
    out = np.empty((k, 3))
    for s in range(k):
        li = sphere_link[s]
        out[s] = p_all[li] + r_all[li] @ sphere_local[s]
    return out


@njit(cache=True)
def geometric_jacobian(r_all, p_all, p_ref):
    """6xn Jacobian at the reference point: rows 0-2 linear, 3-5 angular."""
    n = r_all.shape[0] - 1
    jac = np.zeros((6, n))
    for i in range(n):
        ax = r_all[i + 1][:, 2]
        rel = p_ref - p_all[i + 1]
        jac[0, i] = ax[1] * rel[2] - ax[2] * rel[1]
        jac[1, i] = ax[2] * rel[0] - ax[0] * rel[2]
        jac[2, i] = ax[0] * rel[1] - ax[1] * rel[0]
        jac[3, i] = ax[0]
        jac[4, i] = ax[1]
        jac[5, i] = ax[2]
    return jac


@njit(cache=True)
def point_jacobian(r_all, p_all, link, point):
    """3xn Jacobian of a world point rigidly attached to the given link."""
    n = r_all.shape[0] - 1
    jac = np.zeros((3, n))
    for i in range(min(link, n)):
        ax = r_all[i + 1][:, 2]
        rel = point - p_all[i + 1]
        jac[0, i] = ax[1] * rel[2] - ax[2] * rel[1]
        jac[1, i] = ax[2] * rel[0] - ax[0] * rel[2]
        jac[2, i] = ax[0] * rel[1] - ax[1] * rel[0]
    return jac


@njit(cache=True)
def rnea(mdh, mass, com, inertia, q, qd, qdd, g_base):
    """Recursive Newton-Euler inverse dynamics in link coordinates.

    Returns joint torques for the motion (q, qd, qdd) under base-frame
    gravity g_base; equals M(q) qdd + C(q, qd) qd + g(q).
    """
    n = q.shape[0]
    rel_r = np.empty((n, 3, 3))
    rel_p = np.empty((n, 3))
    for i in range(n):
        r, p = link_transform(mdh[i, 0], mdh[i, 1], mdh[i, 2], mdh[i, 3] + q[i])
        rel_r[i] = r
        rel_p[i] = p

    w = np.zeros(3)
    wd = np.zeros(3)
    vd = -g_base
    force = np.empty((n, 3))
    torque = np.empty((n, 3))
    for i in range(n):
        rt = rel_r[i].T
        w_in = rt @ w
        wd_in = rt @ wd
        vd_in = rt @ (vd + _cross(wd, rel_p[i]) + _cross(w, _cross(w, rel_p[i])))
        w_new = w_in.copy()
        w_new[2] += qd[i]
        wd_new = wd_in + _cross(w_in, np.array([0.0, 0.0, qd[i]]))
        wd_new[2] += qdd[i]
        vc = vd_in + _cross(wd_new, com[i]) + _cross(w_new, _cross(w_new, com[i]))
        force[i] = mass[i] * vc
        torque[i] = inertia[i] @ wd_new + _cross(w_new, inertia[i] @ w_new)
        w, wd, vd = w_new, wd_new, vd_in

    tau = np.empty(n)
    f = np.zeros(3)
    nn = np.zeros(3)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            f_child = rel_r[i + 1] @ f
            n_child = rel_r[i + 1] @ nn + _cross(rel_p[i + 1], f_child)
        else:
            f_child = np.zeros(3)
            n_child = np.zeros(3)
        f = f_child + force[i]
        nn = n_child + torque[i] + _cross(com[i], force[i])
        tau[i] = nn[2]
    return tau


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def mass_matrix(mdh, mass, com, inertia, q):
    """Joint-space inertia matrix via unit-acceleration Newton-Euler columns.

    Velocity terms vanish at qd = 0, so each column reduces to the linear
    acceleration recursion; the link transforms are shared across columns.
    """
    n = q.shape[0]
    rel_r = np.empty((n, 3, 3))
    rel_p = np.empty((n, 3))
    for i in range(n):
        r, p = link_transform(mdh[i, 0], mdh[i, 1], mdh[i, 2], mdh[i, 3] + q[i])
        rel_r[i] = r
        rel_p[i] = p
    m_out = np.empty((n, n))
    force = np.empty((n, 3))
    torque = np.empty((n, 3))
    for j in range(n):
        wd = np.zeros(3)
        vd = np.zeros(3)
        for i in range(n):
            rt = rel_r[i].T
            wd_in = rt @ wd
            if i >= j:
                vd = rt @ (vd + _cross(wd, rel_p[i]))
            wd = wd_in
            if i == j:
                wd[2] += 1.0
            if i >= j:
                vc = vd + _cross(wd, com[i])
                force[i] = mass[i] * vc
                torque[i] = inertia[i] @ wd
            else:
                force[i] = 0.0
                torque[i] = 0.0
        f = np.zeros(3)
        nn = np.zeros(3)
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                f_child = rel_r[i + 1] @ f
                n_child = rel_r[i + 1] @ nn + _cross(rel_p[i + 1], f_child)
            else:
                f_child = np.zeros(3)
                n_child = np.zeros(3)
            f = f_child + force[i]
            nn = n_child + torque[i] + _cross(com[i], force[i])
            m_out[i, j] = nn[2]
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (m_out[i, j] + m_out[j, i])
            m_out[i, j] = v
            m_out[j, i] = v
    return m_out


@njit(cache=True)
def segment_closest(a0, a1, b0, b1):
    """Closest-point parameters (s, t) and distance between two segments."""
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    aa = d1 @ d1
    ee = d2 @ d2
    ff = d2 @ r
    eps = 1e-12
    if aa <= eps and ee <= eps:
        s = 0.0
        t = 0.0
    elif aa <= eps:
        s = 0.0
        t = min(max(ff / ee, 0.0), 1.0)
    else:
        cc = d1 @ r
        if ee <= eps:
            t = 0.0
            s = min(max(-cc / aa, 0.0), 1.0)
        else:
            bb = d1 @ d2
            den = aa * ee - bb * bb
            if den > eps:
                s = min(max((bb * ff - cc * ee) / den, 0.0), 1.0)
            else:
                s = 0.0
            t = (bb * s + ff) / ee
            if t < 0.0:
                t = 0.0
                s = min(max(-cc / aa, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((bb - cc) / aa, 0.0), 1.0)
    pa = a0 + s * d1
    pb = b0 + t * d2
    diff = pa - pb
    return np.sqrt(diff @ diff), s, t


@njit(cache=True)
def min_sphere_obstacle(centers, radii, obs_centers, obs_radii):
    """Smallest signed sphere-to-obstacle clearance with lexicographic ties.

    Clearance is center distance minus both radii; returns (value, sphere
    index, obstacle index), preferring the lowest (sphere, obstacle) pair on
    ties.
    """
    best = np.inf
    bk = -1
    bo = -1
    for k in range(centers.shape[0]):
        for o in range(obs_centers.shape[0]):
            diff = centers[k] - obs_centers[o]
            d = np.sqrt(diff @ diff) - radii[k] - obs_radii[o]
            if d < best:
                best = d
                bk = k
                bo = o
    return best, bk, bo
