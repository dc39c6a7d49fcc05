"""numba-compiled kernels. Scalar loops; mirror :mod:`barplan.kernels.ref`."""

import math

import numpy as np

from barplan._accel import njit

_EPS = 1e-12


@njit
def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit
def seg_dist(p1, q1, p2, q2):
    d1x, d1y, d1z = q1[0] - p1[0], q1[1] - p1[1], q1[2] - p1[2]
    d2x, d2y, d2z = q2[0] - p2[0], q2[1] - p2[1], q2[2] - p2[2]
    rx, ry, rz = p1[0] - p2[0], p1[1] - p2[1], p1[2] - p2[2]
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    if a <= _EPS and e <= _EPS:
        s = 0.0
        t = 0.0
    elif a <= _EPS:
        s = 0.0
        t = _clamp01(f / e)
    else:
        c = d1x * rx + d1y * ry + d1z * rz
        if e <= _EPS:
            t = 0.0
            s = _clamp01(-c / a)
        else:
            b = d1x * d2x + d1y * d2y + d1z * d2z
            denom = a * e - b * b
            if denom > _EPS * a * e:
                s = _clamp01((b * f - c * e) / denom)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = _clamp01(-c / a)
            elif t > 1.0:
                t = 1.0
                s = _clamp01((b - c) / a)
    wx = rx + d1x * s - d2x * t
    wy = ry + d1y * s - d2y * t
    wz = rz + d1z * s - d2z * t
    return math.sqrt(wx * wx + wy * wy + wz * wz)


@njit
def segment_distance_batch(p1, q1, p2, q2):
    n = p1.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = seg_dist(p1[i], q1[i], p2[i], q2[i])
    return out


@njit
def _axis_rot4(axis, angle):
    x, y, z = axis[0], axis[1], axis[2]
    c = math.cos(angle)
    s = math.sin(angle)
    C = 1.0 - c
    m = np.eye(4)
    m[0, 0] = c + x * x * C
    m[0, 1] = x * y * C - z * s
    m[0, 2] = x * z * C + y * s
    m[1, 0] = y * x * C + z * s
    m[1, 1] = c + y * y * C
    m[1, 2] = y * z * C - x * s
    m[2, 0] = z * x * C - y * s
    m[2, 1] = z * y * C + x * s
    m[2, 2] = c + z * z * C
    return m


@njit
def chain_frames(origins, axes, base, q):
    n = q.shape[0]
    out = np.empty((n + 1, 4, 4))
    out[0] = base
    cur = base.copy()
    for i in range(n):
        cur = cur @ origins[i] @ _axis_rot4(axes[i], q[i])
        out[i + 1] = cur
    return out


@njit
def _xform(T, p, out):
    for r in range(3):
        out[r] = T[r, 0] * p[0] + T[r, 1] * p[1] + T[r, 2] * p[2] + T[r, 3]


@njit
def state_collides(
    q, origins, axes, base, tool,
    cap_link, cap_p, cap_r, cap_tool, cap_ground, self_pairs,
    obs_p, obs_r, obs_ignore,
    held_on, held_p, held_r,
    clearance, contact_tol,
):
    frames = chain_frames(origins, axes, base, q)
    L = cap_r.shape[0]
    wc = np.empty((L, 2, 3))
    lo = np.empty((L, 3))
    hi = np.empty((L, 3))
    for c in range(L):
        F = frames[cap_link[c]]
        _xform(F, cap_p[c, 0], wc[c, 0])
        _xform(F, cap_p[c, 1], wc[c, 1])
        for k in range(3):
            lo[c, k] = min(wc[c, 0, k], wc[c, 1, k]) - cap_r[c] - clearance
            hi[c, k] = max(wc[c, 0, k], wc[c, 1, k]) + cap_r[c] + clearance
        zmin = min(wc[c, 0, 2], wc[c, 1, 2])
        if cap_ground[c] == 1 and zmin - cap_r[c] < clearance:
            return True
        if cap_ground[c] == 2 and zmin < -contact_tol:
            return True

    for k in range(self_pairs.shape[0]):
        i = self_pairs[k, 0]
        j = self_pairs[k, 1]
        if seg_dist(wc[i, 0], wc[i, 1], wc[j, 0], wc[j, 1]) - cap_r[i] - cap_r[j] < clearance:
            return True

    M = obs_r.shape[0]
    for c in range(L):
        for o in range(M):
            if cap_tool[c] and obs_ignore[o]:
                continue
            skip = False
            for k in range(3):
                olo = min(obs_p[o, 0, k], obs_p[o, 1, k]) - obs_r[o]
                ohi = max(obs_p[o, 0, k], obs_p[o, 1, k]) + obs_r[o]
                if ohi < lo[c, k] or olo > hi[c, k]:
                    skip = True
                    break
            if skip:
                continue
            if seg_dist(wc[c, 0], wc[c, 1], obs_p[o, 0], obs_p[o, 1]) - cap_r[c] - obs_r[o] < clearance:
                return True

    if held_on:
        T = frames[frames.shape[0] - 1] @ tool
        h0 = np.empty(3)
        h1 = np.empty(3)
        _xform(T, held_p[0], h0)
        _xform(T, held_p[1], h1)
        if min(h0[2], h1[2]) < -contact_tol:
            return True
        for o in range(M):
            if obs_ignore[o]:
                continue
            if seg_dist(h0, h1, obs_p[o, 0], obs_p[o, 1]) - held_r - obs_r[o] < clearance:
                return True
        for c in range(L):
            if cap_tool[c]:
                continue
            if seg_dist(h0, h1, wc[c, 0], wc[c, 1]) - held_r - cap_r[c] < clearance:
                return True
    return False


@njit
def first_collision(
    configs, origins, axes, base, tool,
    cap_link, cap_p, cap_r, cap_tool, cap_ground, self_pairs,
    obs_p, obs_r, obs_ignore,
    held_on, held_p, held_r,
    clearance, contact_tol,
):
    for k in range(configs.shape[0]):
        if state_collides(
            configs[k], origins, axes, base, tool,
            cap_link, cap_p, cap_r, cap_tool, cap_ground, self_pairs,
            obs_p, obs_r, obs_ignore, held_on, held_p, held_r, clearance, contact_tol,
        ):
            return k
    return -1


@njit
def assemble_frame(coords, conn, props, gravity):
    n_nodes = coords.shape[0]
    K = np.zeros((6 * n_nodes, 6 * n_nodes))
    f = np.zeros(6 * n_nodes)
    k = np.zeros((12, 12))
    T = np.zeros((12, 12))
    fl = np.zeros(12)
    dofs = np.empty(12, dtype=np.int64)
    for e in range(conn.shape[0]):
        a = conn[e, 0]
        b = conn[e, 1]
        dx = coords[b] - coords[a]
        L = math.sqrt(dx[0] ** 2 + dx[1] ** 2 + dx[2] ** 2)
        ex = dx / L
        if abs(ex[2]) > 0.999:
            ref = np.array([1.0, 0.0, 0.0])
        else:
            ref = np.array([0.0, 0.0, 1.0])
        ey = np.cross(ref, ex)
        ey = ey / math.sqrt(ey[0] ** 2 + ey[1] ** 2 + ey[2] ** 2)
        ez = np.cross(ex, ey)

        T[:, :] = 0.0
        for blk in range(4):
            for c in range(3):
                T[3 * blk, 3 * blk + c] = ex[c]
                T[3 * blk + 1, 3 * blk + c] = ey[c]
                T[3 * blk + 2, 3 * blk + c] = ez[c]

        E, G, A, Iy, Iz, J, rho = props[e, 0], props[e, 1], props[e, 2], props[e, 3], props[e, 4], props[e, 5], props[e, 6]
        k[:, :] = 0.0
        ea = E * A / L
        gj = G * J / L
        z12, z6, z4, z2 = 12 * E * Iz / L**3, 6 * E * Iz / L**2, 4 * E * Iz / L, 2 * E * Iz / L
        y12, y6, y4, y2 = 12 * E * Iy / L**3, 6 * E * Iy / L**2, 4 * E * Iy / L, 2 * E * Iy / L
        entries = (
            (0, 0, ea), (6, 6, ea), (0, 6, -ea),
            (3, 3, gj), (9, 9, gj), (3, 9, -gj),
            (1, 1, z12), (7, 7, z12), (1, 7, -z12),
            (1, 5, z6), (1, 11, z6), (5, 7, -z6), (7, 11, -z6),
            (5, 5, z4), (11, 11, z4), (5, 11, z2),
            (2, 2, y12), (8, 8, y12), (2, 8, -y12),
            (2, 4, -y6), (2, 10, -y6), (4, 8, y6), (8, 10, y6),
            (4, 4, y4), (10, 10, y4), (4, 10, y2),
        )
        for i, j, v in entries:
            k[i, j] = v
            k[j, i] = v
        Kg = T.T @ k @ T

        w = rho * A * gravity
        qx = -w * ex[2]
        qy = -w * ey[2]
        qz = -w * ez[2]
        fl[0] = qx * L / 2
        fl[1] = qy * L / 2
        fl[2] = qz * L / 2
        fl[3] = 0.0
        fl[4] = -qz * L * L / 12
        fl[5] = qy * L * L / 12
        fl[6] = qx * L / 2
        fl[7] = qy * L / 2
        fl[8] = qz * L / 2
        fl[9] = 0.0
        fl[10] = qz * L * L / 12
        fl[11] = -qy * L * L / 12
        fg = T.T @ fl

        for i in range(6):
            dofs[i] = 6 * a + i
            dofs[6 + i] = 6 * b + i
        for i in range(12):
            f[dofs[i]] += fg[i]
            for j in range(12):
                K[dofs[i], dofs[j]] += Kg[i, j]
    return K, f


@njit
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit
def _norm3(v):
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


@njit
def rotation_log(Re):
    v = np.empty(3)
    v[0] = Re[2, 1] - Re[1, 2]
    v[1] = Re[0, 2] - Re[2, 0]
    v[2] = Re[1, 0] - Re[0, 1]
    cos = (Re[0, 0] + Re[1, 1] + Re[2, 2] - 1.0) / 2.0
    cos = min(1.0, max(-1.0, cos))
    angle = math.acos(cos)
    s = math.sin(angle)
    if s > 1e-6:
        return v * (angle / (2.0 * s))
    if cos > 0.0:
        return 0.5 * v
    d = np.empty(3)
    for i in range(3):
        d[i] = max((Re[i, i] + 1.0) / 2.0, 0.0)
    k = 0
    for i in range(1, 3):
        if d[i] > d[k]:
            k = i
    axis = np.empty(3)
    axis[k] = math.sqrt(d[k])
    for j in range(3):
        if j != k:
            axis[j] = (Re[k, j] + Re[j, k]) / (4.0 * axis[k])
    if v[0] * axis[0] + v[1] * axis[1] + v[2] * axis[2] < 0:
        axis = -axis
    return axis * angle


@njit
def tool_jacobian(frames, origins, axes, tool):
    n = axes.shape[0]
    tipT = frames[n] @ tool
    tip = tipT[:3, 3].copy()
    J = np.empty((6, n))
    for i in range(n):
        F = frames[i] @ origins[i]
        z = np.ascontiguousarray(F[:3, :3]) @ axes[i]
        c = _cross(z, tip - F[:3, 3])
        for r in range(3):
            J[r, i] = c[r]
            J[3 + r, i] = z[r]
    return J


@njit
def _dls_step(J, e, damping):
    A = J @ J.T
    for i in range(6):
        A[i, i] += damping * damping
    dq = J.T @ np.linalg.solve(A, e)
    m = 0.0
    for i in range(dq.shape[0]):
        m = max(m, abs(dq[i]))
    if m > 0.4:
        dq *= 0.4 / m
    return dq


@njit
def dls_ik(origins, axes, base, tool, q0, T_target, max_iter, damping, pos_tol, ori_tol):
    q = q0.copy()
    e = np.empty(6)
    pe = oe = np.inf
    Rt = np.ascontiguousarray(T_target[:3, :3])
    for it in range(max_iter + 1):
        frames = chain_frames(origins, axes, base, q)
        T = frames[-1] @ tool
        R = np.ascontiguousarray(T[:3, :3])
        eo = rotation_log(Rt @ R.T)
        for r in range(3):
            e[r] = T_target[r, 3] - T[r, 3]
            e[3 + r] = eo[r]
        pe = math.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
        oe = _norm3(eo)
        if pe <= 0.1 * pos_tol and oe <= 0.1 * ori_tol:
            return q, True
        if it == max_iter:
            break
        J = tool_jacobian(frames, origins, axes, tool)
        q = q + _dls_step(J, e, damping)
    return q, pe <= pos_tol and oe <= ori_tol


@njit
def dls_axis_ik(origins, axes, base, tool, q0, p_target, axis, max_iter, damping, pos_tol):
    q = q0.copy()
    e = np.empty(6)
    for it in range(max_iter):
        frames = chain_frames(origins, axes, base, q)
        T = frames[-1] @ tool
        z = T[:3, 2].copy()
        ep = p_target - T[:3, 3]
        ea = _cross(z, axis)
        za = z[0] * axis[0] + z[1] * axis[1] + z[2] * axis[2]
        if _norm3(ep) <= 0.1 * pos_tol and _norm3(ea) <= 1e-4 and za > 0:
            break
        if za < 0 and _norm3(ea) < 1e-3:
            side = np.zeros(3)
            if abs(z[0]) < 0.9:
                side[0] = 1.0
            else:
                side[1] = 1.0
            ea = _cross(z, side)
        J = tool_jacobian(frames, origins, axes, tool)
        for i in range(J.shape[1]):
            w = z[0] * J[3, i] + z[1] * J[4, i] + z[2] * J[5, i]
            for r in range(3):
                J[3 + r, i] -= z[r] * w
        for r in range(3):
            e[r] = ep[r]
            e[3 + r] = ea[r]
        q = q + _dls_step(J, e, damping)
    return q
