"""Pure-numpy reference kernels.

Same signatures as :mod:`barplan.kernels.jit`. These are vectorized over
capsule pairs / elements rather than written as scalar loops.
"""

import numpy as np

_EPS = 1e-12


def segment_distance(p1, q1, p2, q2):
    """Closest distance between segments ``p1q1`` and ``p2q2`` (broadcasting, ``(..., 3)``)."""
    p1, q1, p2, q2 = (np.asarray(a, dtype=float) for a in (p1, q1, p2, q2))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    f = np.einsum("...i,...i", d2, r)
    c = np.einsum("...i,...i", d1, r)
    b = np.einsum("...i,...i", d1, d2)
    a, e, f, c, b = np.broadcast_arrays(a, e, f, c, b)

    a_deg = a <= _EPS
    e_deg = e <= _EPS
    denom = a * e - b * b
    safe_a = np.where(a_deg, 1.0, a)
    safe_e = np.where(e_deg, 1.0, e)

    # general case
    s = np.where(denom > _EPS * a * e, np.clip((b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)

    # second segment degenerate
    s = np.where(e_deg, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(e_deg, 0.0, t)
    # first segment degenerate
    s = np.where(a_deg, 0.0, s)
    t = np.where(a_deg, np.where(e_deg, 0.0, np.clip(f / safe_e, 0.0, 1.0)), t)

    c1 = p1 + d1 * s[..., None]
    c2 = p2 + d2 * t[..., None]
    return np.sqrt(np.einsum("...i,...i", c1 - c2, c1 - c2))


def axis_rotation(axis, angle):
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def chain_frames(origins, axes, base, q):
    """World frames ``(n+1, 4, 4)``: index 0 is the base, ``i`` the frame after joint ``i``."""
    n = len(q)
    out = np.empty((n + 1, 4, 4))
    out[0] = base
    cur = base
    for i in range(n):
        rot = np.eye(4)
        rot[:3, :3] = axis_rotation(axes[i], q[i])
        cur = cur @ origins[i] @ rot
        out[i + 1] = cur
    return out


def _world_caps(frames, cap_link, cap_p):
    R = frames[cap_link, :3, :3]
    t = frames[cap_link, :3, 3]
    return np.einsum("kij,kpj->kpi", R, cap_p) + t[:, None, :]


def state_collides(
    q, origins, axes, base, tool,
    cap_link, cap_p, cap_r, cap_tool, cap_ground, self_pairs,
    obs_p, obs_r, obs_ignore,
    held_on, held_p, held_r,
    clearance, contact_tol,
):
    frames = chain_frames(origins, axes, base, q)
    wc = _world_caps(frames, cap_link, cap_p)
    zmin = wc[:, :, 2].min(axis=1)

    g1 = cap_ground == 1
    if np.any(zmin[g1] - cap_r[g1] < clearance):
        return True
    g2 = cap_ground == 2
    if np.any(zmin[g2] < -contact_tol):
        return True

    if len(self_pairs):
        i, j = self_pairs[:, 0], self_pairs[:, 1]
        d = segment_distance(wc[i, 0], wc[i, 1], wc[j, 0], wc[j, 1]) - cap_r[i] - cap_r[j]
        if np.any(d < clearance):
            return True

    m = len(obs_r)
    if m:
        d = segment_distance(
            wc[:, None, 0], wc[:, None, 1], obs_p[None, :, 0], obs_p[None, :, 1]
        ) - cap_r[:, None] - obs_r[None, :]
        mask = ~(cap_tool[:, None] & obs_ignore[None, :])
        if np.any((d < clearance) & mask):
            return True

    if held_on:
        T = frames[-1] @ tool
        hp = held_p @ T[:3, :3].T + T[:3, 3]
        if hp[:, 2].min() < -contact_tol:
            return True
        if m:
            d = segment_distance(hp[0], hp[1], obs_p[:, 0], obs_p[:, 1]) - held_r - obs_r
            if np.any((d < clearance) & ~obs_ignore):
                return True
        body = ~cap_tool
        if np.any(body):
            d = segment_distance(hp[0], hp[1], wc[body, 0], wc[body, 1]) - held_r - cap_r[body]
            if np.any(d < clearance):
                return True
    return False


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


def local_frame_matrices(coords, conn, props):
    """Per-element local stiffness ``(m,12,12)``, rotation ``(m,12,12)`` and lengths."""
    a = coords[conn[:, 0]]
    b = coords[conn[:, 1]]
    dx = b - a
    L = np.linalg.norm(dx, axis=1)
    ex = dx / L[:, None]
    vertical = np.abs(ex[:, 2]) > 0.999
    ref = np.where(vertical[:, None], np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    ey = np.cross(ref, ex)
    ey /= np.linalg.norm(ey, axis=1)[:, None]
    ez = np.cross(ex, ey)
    R = np.stack([ex, ey, ez], axis=1)

    m = len(L)
    T = np.zeros((m, 12, 12))
    for blk in range(4):
        T[:, 3 * blk:3 * blk + 3, 3 * blk:3 * blk + 3] = R

    E, G, A, Iy, Iz, J = (props[:, k] for k in range(6))
    k = np.zeros((m, 12, 12))
    ea = E * A / L
    gj = G * J / L
    z12, z6, z4, z2 = 12 * E * Iz / L**3, 6 * E * Iz / L**2, 4 * E * Iz / L, 2 * E * Iz / L
    y12, y6, y4, y2 = 12 * E * Iy / L**3, 6 * E * Iy / L**2, 4 * E * Iy / L, 2 * E * Iy / L

    def put(i, j, v):
        k[:, i, j] = v
        k[:, j, i] = v

    put(0, 0, ea); put(6, 6, ea); put(0, 6, -ea)
    put(3, 3, gj); put(9, 9, gj); put(3, 9, -gj)
    # bending in local x-y plane (v, theta_z)
    put(1, 1, z12); put(7, 7, z12); put(1, 7, -z12)
    put(1, 5, z6); put(1, 11, z6); put(5, 7, -z6); put(7, 11, -z6)
    put(5, 5, z4); put(11, 11, z4); put(5, 11, z2)
    # bending in local x-z plane (w, theta_y)
    put(2, 2, y12); put(8, 8, y12); put(2, 8, -y12)
    put(2, 4, -y6); put(2, 10, -y6); put(4, 8, y6); put(8, 10, y6)
    put(4, 4, y4); put(10, 10, y4); put(4, 10, y2)
    return k, T, L


def assemble_frame(coords, conn, props, gravity):
    """Global stiffness ``(6N, 6N)`` and self-weight load vector ``(6N,)``.

    ``props`` columns: E, G, A, Iy, Iz, J, density.
    """
    n_nodes = coords.shape[0]
    k, T, L = local_frame_matrices(coords, conn, props)
    Kg = np.einsum("mji,mjk,mkl->mil", T, k, T)
    dofs = np.concatenate(
        [6 * conn[:, 0:1] + np.arange(6), 6 * conn[:, 1:2] + np.arange(6)], axis=1
    )
    K = np.zeros((6 * n_nodes, 6 * n_nodes))
    np.add.at(K, (dofs[:, :, None], dofs[:, None, :]), Kg)

    w = props[:, 6] * props[:, 2] * gravity
    R = T[:, :3, :3]
    q = R @ np.array([0.0, 0.0, -1.0]) * w[:, None]  # local line load
    fl = np.zeros((len(L), 12))
    fl[:, 0:3] = q * L[:, None] / 2
    fl[:, 6:9] = q * L[:, None] / 2
    fl[:, 5] = q[:, 1] * L**2 / 12
    fl[:, 11] = -q[:, 1] * L**2 / 12
    fl[:, 4] = -q[:, 2] * L**2 / 12
    fl[:, 10] = q[:, 2] * L**2 / 12
    fg = np.einsum("mji,mj->mi", T, fl)
    f = np.zeros(6 * n_nodes)
    np.add.at(f, dofs, fg)
    return K, f


def rotation_log(Re):
    """Rotation vector of a rotation matrix, stable near 0 and pi."""
    v = np.array([Re[2, 1] - Re[1, 2], Re[0, 2] - Re[2, 0], Re[1, 0] - Re[0, 1]])
    cos = min(1.0, max(-1.0, (Re[0, 0] + Re[1, 1] + Re[2, 2] - 1.0) / 2.0))
    angle = np.arccos(cos)
    s = np.sin(angle)
    if s > 1e-6:
        return v * (angle / (2.0 * s))
    if cos > 0.0:
        return 0.5 * v
    # near pi: axis from the symmetric part
    d = np.clip((np.diag(Re) + 1.0) / 2.0, 0.0, None)
    k = int(np.argmax(d))
    axis = np.empty(3)
    axis[k] = np.sqrt(d[k])
    for j in range(3):
        if j != k:
            axis[j] = (Re[k, j] + Re[j, k]) / (4.0 * axis[k])
    if v @ axis < 0:
        axis = -axis
    return axis * angle


def tool_jacobian(frames, origins, axes, tool):
    """Geometric Jacobian (6, n) of the tool tip from precomputed frames."""
    n = len(axes)
    F = frames[:n] @ origins
    z = np.einsum("kij,kj->ki", F[:, :3, :3], axes)
    tip = (frames[n] @ tool)[:3, 3]
    return np.vstack([np.cross(z, tip - F[:, :3, 3]).T, z.T])


def _limit_step(dq, cap=0.4):
    m = np.abs(dq).max()
    return dq * (cap / m) if m > cap else dq


def dls_ik(origins, axes, base, tool, q0, T_target, max_iter, damping, pos_tol, ori_tol):
    """Damped least squares on full pose. Returns (q, converged)."""
    q = q0.astype(float).copy()
    lam = damping * damping * np.eye(6)
    for it in range(max_iter + 1):
        frames = chain_frames(origins, axes, base, q)
        T = frames[-1] @ tool
        ep = T_target[:3, 3] - T[:3, 3]
        eo = rotation_log(T_target[:3, :3] @ T[:3, :3].T)
        pe, oe = np.linalg.norm(ep), np.linalg.norm(eo)
        if pe <= 0.1 * pos_tol and oe <= 0.1 * ori_tol:
            return q, True
        if it == max_iter:
            break
        J = tool_jacobian(frames, origins, axes, tool)
        dq = J.T @ np.linalg.solve(J @ J.T + lam, np.concatenate([ep, eo]))
        q = q + _limit_step(dq)
    return q, bool(pe <= pos_tol and oe <= ori_tol)


def dls_axis_ik(origins, axes, base, tool, q0, p_target, axis, max_iter, damping, pos_tol):
    """Tip position plus tool z-axis direction, roll free. Returns the final q."""
    q = q0.astype(float).copy()
    lam = damping * damping * np.eye(6)
    for _ in range(max_iter):
        frames = chain_frames(origins, axes, base, q)
        T = frames[-1] @ tool
        z = T[:3, 2]
        ep = p_target - T[:3, 3]
        ea = np.cross(z, axis)
        if np.linalg.norm(ep) <= 0.1 * pos_tol and np.linalg.norm(ea) <= 1e-4 and z @ axis > 0:
            break
        if z @ axis < 0 and np.linalg.norm(ea) < 1e-3:
            # antiparallel: the cross product vanishes, push off sideways
            ea = np.cross(z, np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0]))
        J = tool_jacobian(frames, origins, axes, tool)
        P = np.eye(3) - np.outer(z, z)
        Jt = np.vstack([J[:3], P @ J[3:]])
        dq = Jt.T @ np.linalg.solve(Jt @ Jt.T + lam, np.concatenate([ep, ea]))
        q = q + _limit_step(dq)
    return q
