"""Motion primitives: RRT-Connect, Cartesian segments, extrude, pick and place."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from barplan.collision import (
    MAX_JOINT_STEP, Attachment, CollisionQuery, CollisionWorld, interpolate, resample,
)
from barplan.kinematics import IKFailure, RobotModel, ik_on_partial_constraint, inverse_kinematics, tool_transform
from barplan.model import BarStructure, PartialStructure

TRANSIT = "transit"
TRANSFER = "transfer"
EXTRUDE = "extrude"
EXTRUDE_APPROACH = "extrude-approach"
EXTRUDE_RETREAT = "extrude-retreat"
PICK_APPROACH = "pick-approach"
PICK_RETREAT = "pick-retreat"
PLACE_APPROACH = "place-approach"
PLACE_RETREAT = "place-retreat"
ATTACHED_KINDS = (TRANSFER, PICK_RETREAT, PLACE_APPROACH)


class MotionFailure(RuntimeError):
    def __init__(self, msg: str, index: int | None = None):
        super().__init__(msg)
        self.index = index


@dataclass(frozen=True)
class MotionConfig:
    max_joint_step: float = MAX_JOINT_STEP
    rrt_step: float = 0.25
    rrt_max_iters: int = 2000
    rrt_time_budget: float | None = None   # s; iteration budget alone keeps runs reproducible
    goal_bias: float = 0.1
    shortcut_attempts: int = 100
    ik_restarts: int = 20
    repair_attempts: int = 10
    jump_factor: float = 5.0
    cartesian_step: float = 0.01
    cartesian_angle_step: float = math.radians(3.0)
    extrude_step: float = 0.005
    cone_half_angle: float = math.radians(30.0)
    cone_azimuths: int = 8
    approach_distance: float = 0.08
    insertion_distance: float = 0.10
    insertion_directions: int = 8
    insertion_angles: tuple = (0.0, 15.0, -15.0, 30.0, -30.0)  # degrees
    grasp_rotations: int = 16
    grasp_sides: int = 2
    grasp_offsets: tuple = (0.0, 0.25, -0.25)   # along the bar, fraction of its length
    screw_about_bar_axis: bool = False


@dataclass
class Trajectory:
    waypoints: np.ndarray
    kind: str
    attached: tuple | None = None   # (element id, grasp 4x4)
    meta: dict = field(default_factory=dict)

    @property
    def start(self) -> np.ndarray:
        return self.waypoints[0]

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]

    def reversed(self, kind: str, attached=None) -> "Trajectory":
        return Trajectory(self.waypoints[::-1].copy(), kind, attached, dict(self.meta))


@dataclass(frozen=True)
class GraspCandidate:
    element: int
    grasp: np.ndarray              # tool frame in element frame
    approach_direction: np.ndarray  # element frame


def path_length(waypoints) -> float:
    w = np.asarray(waypoints)
    return float(np.linalg.norm(np.diff(w, axis=0), axis=1).sum()) if len(w) > 1 else 0.0


# -- frames -------------------------------------------------------------------

def element_frame(structure: BarStructure, element: int) -> np.ndarray:
    """Midpoint frame, x along the bar, z as close to world up as possible."""
    a, b = structure.endpoints(element)
    x = (b - a) / np.linalg.norm(b - a)
    up = np.array([0.0, 0.0, 1.0])
    if abs(x @ up) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    z = up - (up @ x) * x
    z /= np.linalg.norm(z)
    T = np.eye(4)
    T[:3, :3] = np.column_stack([x, np.cross(z, x), z])
    T[:3, 3] = (a + b) / 2
    return T


def _rot4(axis, angle) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = Rotation.from_rotvec(np.asarray(axis, float) * angle).as_matrix()
    return T


def _trans4(v) -> np.ndarray:
    T = np.eye(4)
    T[:3, 3] = v
    return T


def grasp_candidates(structure: BarStructure, element: int, cfg: MotionConfig = MotionConfig()) -> list[GraspCandidate]:
    """Grasps with the tool axis perpendicular to the bar; fixed order, midpoint and top-down first."""
    r = structure.elements[element].radius
    length = structure.length(element)
    out = []
    for frac in cfg.grasp_offsets:
        for k in range(cfg.grasp_rotations):
            ang = 2 * math.pi * k / cfg.grasp_rotations
            d = Rotation.from_rotvec([ang, 0, 0]).apply([0.0, 0.0, -1.0])
            for side in range(cfg.grasp_sides):
                tx = np.array([1.0, 0.0, 0.0]) if side == 0 else np.array([-1.0, 0.0, 0.0])
                ty = np.cross(d, tx)
                G = np.eye(4)
                G[:3, :3] = np.column_stack([tx, ty, d])
                G[:3, 3] = -r * d + np.array([frac * length, 0.0, 0.0])
                out.append(GraspCandidate(element, G, d))
    return out


# -- joint-space planning -------------------------------------------------------

def _shortcut(query: CollisionQuery, robot, path: list, rng, attempts: int, step: float) -> list:
    path = list(path)
    for _ in range(attempts):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        if query.segment_free(robot, path[i], path[j], step):
            path = path[: i + 1] + path[j:]
    return path


def plan_joint_motion(query: CollisionQuery, robot: RobotModel, q_start, q_goal, rng, kind: str = TRANSIT,
                      cfg: MotionConfig = MotionConfig(), attached=None) -> Trajectory:
    """RRT-Connect with goal bias, then random shortcutting."""
    qs = np.asarray(q_start, dtype=float)
    qg = np.asarray(q_goal, dtype=float)
    if np.array_equal(qs, qg):
        return Trajectory(qs[None, :].copy(), kind, attached)
    if query.collides(robot, qs):
        raise MotionFailure(f"{kind}: start in collision")
    if query.collides(robot, qg):
        raise MotionFailure(f"{kind}: goal in collision")
    step = cfg.max_joint_step
    if query.segment_free(robot, qs, qg, step):
        return Trajectory(resample([qs, qg], step), kind, attached, {"raw_length": path_length([qs, qg])})

    t0 = time.perf_counter()
    trees = [([qs], [-1]), ([qg], [-1])]
    arrs = [np.array([qs]), np.array([qg])]

    def add(t, q, parent):
        trees[t][0].append(q)
        trees[t][1].append(parent)
        arrs[t] = np.vstack([arrs[t], q])
        return len(trees[t][0]) - 1

    def nearest(t, q):
        return int(np.argmin(np.abs(arrs[t] - q).max(axis=1)))

    def extend(t, target):
        i = nearest(t, target)
        q_near = trees[t][0][i]
        d = target - q_near
        dist = np.abs(d).max()
        q_new = target if dist <= cfg.rrt_step else q_near + d * (cfg.rrt_step / dist)
        if not query.segment_free(robot, q_near, q_new, step):
            return None, False
        return add(t, q_new, i), dist <= cfg.rrt_step

    def connect(t, target):
        while True:
            idx, reached = extend(t, target)
            if idx is None:
                return None
            if reached:
                return idx

    def branch(t, idx):
        nodes, parents = trees[t]
        out = []
        while idx >= 0:
            out.append(nodes[idx])
            idx = parents[idx]
        return out

    a = 0
    for it in range(cfg.rrt_max_iters):
        if cfg.rrt_time_budget is not None and time.perf_counter() - t0 > cfg.rrt_time_budget:
            raise MotionFailure(f"{kind}: RRT time budget exceeded")
        b = 1 - a
        target = trees[b][0][0] if rng.random() < cfg.goal_bias else robot.random_configuration(rng)
        idx, _ = extend(a, target)
        if idx is not None:
            q_new = trees[a][0][idx]
            jdx = connect(b, q_new)
            if jdx is not None:
                pa, pb = branch(a, idx), branch(b, jdx)
                path = pa[::-1] + pb[1:] if a == 0 else pb[::-1] + pa[1:]
                raw = path_length(path)
                path = _shortcut(query, robot, path, rng, cfg.shortcut_attempts, step)
                return Trajectory(resample(path, step), kind, attached,
                                  {"raw_length": raw, "iterations": it + 1})
        a = b
    raise MotionFailure(f"{kind}: RRT iteration budget exhausted")


# -- Cartesian planning ---------------------------------------------------------

def _ik_free(robot, T, seed, rng, query, restarts) -> np.ndarray:
    """First collision-free IK solution from the seed and random restarts."""
    try:
        q = inverse_kinematics(robot, T, seed, rng, restarts=0)
        if not query.collides(robot, q):
            return q
    except IKFailure:
        pass
    for _ in range(restarts):
        try:
            q = inverse_kinematics(robot, T, robot.random_configuration(rng), rng, restarts=0)
        except IKFailure:
            continue
        if not query.collides(robot, q):
            return q
    raise IKFailure("no collision-free IK solution")


def plan_cartesian_segment(query: CollisionQuery, robot: RobotModel, tool_poses, seed, rng,
                           kind: str, cfg: MotionConfig = MotionConfig(), attached=None,
                           first_q=None) -> Trajectory:
    """Chain IK along a discretized tool path, repairing with randomized perturbations."""
    poses = [p if isinstance(p, np.ndarray) else p.matrix() for p in tool_poses]
    if len(poses) < 1:
        raise ValueError("empty tool path")
    if first_q is not None:
        q_prev = np.asarray(first_q, dtype=float)
    else:
        try:
            q_prev = _ik_free(robot, poses[0], seed, rng, query, cfg.ik_restarts)
        except IKFailure as exc:
            raise MotionFailure(f"{kind}: no start configuration", 0) from exc
    jump = cfg.jump_factor * cfg.max_joint_step
    out = [q_prev]
    for k in range(1, len(poses)):
        q_next = None
        seeds = [q_prev] + [q_prev + rng.normal(0.0, 0.1, robot.dof) for _ in range(cfg.repair_attempts)]
        for s in seeds:
            try:
                q = inverse_kinematics(robot, poses[k], s, rng, restarts=0, max_iter=50)
            except IKFailure:
                continue
            if np.abs(q - q_prev).max() > jump:
                continue
            if query.first_collision(robot, interpolate(q_prev, q, cfg.max_joint_step, include_start=False)) >= 0:
                continue
            q_next = q
            break
        if q_next is None:
            raise MotionFailure(f"{kind}: Cartesian path blocked at pose {k}", k)
        out.append(q_next)
        q_prev = q_next
    return Trajectory(resample(out, cfg.max_joint_step), kind, attached)


def _n_steps(distance: float, angle: float, cfg: MotionConfig) -> int:
    return max(1, math.ceil(distance / cfg.cartesian_step), math.ceil(abs(angle) / cfg.cartesian_angle_step))


def straight_tool_path(T_start: np.ndarray, offset: np.ndarray, cfg: MotionConfig) -> list[np.ndarray]:
    """Poses from ``T_start`` translated linearly by ``offset`` (world frame)."""
    n = _n_steps(float(np.linalg.norm(offset)), 0.0, cfg)
    out = []
    for i in range(n + 1):
        T = T_start.copy()
        T[:3, 3] += offset * (i / n)
        out.append(T)
    return out


# -- extrude ------------------------------------------------------------------

def anchored_nodes(structure: BarStructure, element: int, partial: PartialStructure) -> list[int]:
    present = {n for e in structure.closure(partial) for n in structure.elements[e].ends}
    return [n for n in structure.elements[element].ends if structure.nodes[n].supported or n in present]


def cone_directions(cfg: MotionConfig) -> list[np.ndarray]:
    """Tool z-axis candidates: straight down, then rings tilted within the cone."""
    down = np.array([0.0, 0.0, -1.0])
    out = [down]
    for tilt in (cfg.cone_half_angle / 2, cfg.cone_half_angle):
        for k in range(cfg.cone_azimuths):
            az = 2 * math.pi * k / cfg.cone_azimuths
            out.append(np.array([math.sin(tilt) * math.cos(az), math.sin(tilt) * math.sin(az), -math.cos(tilt)]))
    return out


def plan_extrude(world: CollisionWorld, robot: RobotModel, element: int, partial: PartialStructure, rng,
                 cfg: MotionConfig = MotionConfig(), seed=None) -> tuple[Trajectory, Trajectory, Trajectory]:
    """Lower the nozzle onto an anchored node, trace the element, lift off the far node.

    Orientation is held constant with the tool axis inside the downward cone.
    Returns (approach, extrude, retreat).
    """
    structure = world.structure
    if element in partial:
        raise ValueError("element already built")
    anchored = anchored_nodes(structure, element, partial)
    if not anchored:
        raise MotionFailure("extrude: element is not anchored to the partial structure")
    e = structure.elements[element]
    present = structure.closure(partial)
    ignore = world.touching(element, present)
    query = world.query(partial, ignore=ignore)
    query_after = world.query(partial.add(element), ignore=ignore | {element})
    seed = robot.home if seed is None else seed
    orders = [(n, e.end_b if n == e.end_a else e.end_a) for n in anchored]
    for start, end in orders:
        pa, pb = structure.nodes[start].position, structure.nodes[end].position
        n = max(1, math.ceil(np.linalg.norm(pb - pa) / cfg.extrude_step))
        pts = [pa + (pb - pa) * (i / n) for i in range(n + 1)]
        for axis in cone_directions(cfg):
            try:
                q0 = ik_on_partial_constraint(robot, pa, axis, seed, rng, restarts=3)
            except IKFailure:
                continue
            if query.collides(robot, q0):
                continue
            T0 = tool_transform(robot, q0)
            R = T0[:3, :3]
            lift = -R[:, 2] * cfg.approach_distance
            poses = []
            for p in pts:
                T = np.eye(4)
                T[:3, :3] = R
                T[:3, 3] = p
                poses.append(T)
            try:
                down = plan_cartesian_segment(query, robot, straight_tool_path(T0, lift, cfg), q0, rng,
                                              EXTRUDE_APPROACH, cfg, first_q=q0)
                traj = plan_cartesian_segment(query, robot, poses, q0, rng, EXTRUDE, cfg, first_q=q0)
                up = plan_cartesian_segment(query_after, robot, straight_tool_path(poses[-1], lift, cfg),
                                            traj.end, rng, EXTRUDE_RETREAT, cfg, first_q=traj.end)
            except MotionFailure:
                continue
            # transits meet these ends without any ignore set
            if world.query(partial).collides(robot, down.end) or \
                    world.query(partial.add(element)).collides(robot, up.end):
                continue
            meta = {"start_node": start, "end_node": end}
            traj.meta.update(meta)
            return down.reversed(EXTRUDE_APPROACH), traj, up
    raise MotionFailure("extrude: no feasible direction")


# -- pick and place -----------------------------------------------------------

def rack_frame(structure: BarStructure, default=None) -> np.ndarray:
    from barplan.kinematics import make_transform

    rack = structure.scene.get("rack") or default or {"xyz": [0.25, -0.55, 0.2], "rpy": [0, 0, 0]}
    return make_transform(rack["xyz"], rack.get("rpy", (0, 0, 0)))


def plan_pick(world: CollisionWorld, robot: RobotModel, element: int, rack_T: np.ndarray, grasp: GraspCandidate,
              partial: PartialStructure, rng, cfg: MotionConfig = MotionConfig(), seed=None):
    """Approach the element on the rack along the grasp axis, then retreat holding it."""
    structure = world.structure
    att = Attachment.for_element(structure, element, grasp.grasp)
    held = (element, grasp.grasp)
    T_grasp = rack_T @ grasp.grasp
    back = -rack_T[:3, :3] @ grasp.approach_direction * cfg.approach_distance
    path = straight_tool_path(T_grasp, back, cfg)
    query_free = world.query(partial)
    query_held = world.query(partial, held=att)
    seed = robot.home if seed is None else seed
    try:
        q_grasp = _ik_free(robot, T_grasp, seed, rng, query_held, cfg.ik_restarts)
    except IKFailure as exc:
        raise MotionFailure("pick: no grasp configuration") from exc
    retreat = plan_cartesian_segment(query_held, robot, path, seed, rng, PICK_RETREAT, cfg, held, first_q=q_grasp)
    approach = retreat.reversed(PICK_APPROACH)
    if query_free.first_collision(robot, approach.waypoints) >= 0:  # pragma: no cover - superset of free space
        raise MotionFailure("pick: approach collides")
    return approach, retreat


def insertion_paths(T_goal: np.ndarray, cfg: MotionConfig):
    """Yield (direction index, angle deg, element poses from goal outward to the standoff)."""
    for ang in cfg.insertion_angles:
        for j in range(cfg.insertion_directions):
            phi = 2 * math.pi * j / cfg.insertion_directions
            d = np.array([0.0, -math.sin(phi), math.cos(phi)])  # element frame, j=0 is +z
            if cfg.screw_about_bar_axis:
                n = np.array([1.0, 0.0, 0.0])
            else:
                n = np.cross(np.array([1.0, 0.0, 0.0]), d)
            theta = math.radians(ang)
            steps = _n_steps(cfg.insertion_distance, theta, cfg)
            poses = []
            for i in range(steps + 1):
                s = i / steps
                poses.append(T_goal @ _trans4(d * cfg.insertion_distance * s) @ _rot4(n, theta * s))
            yield j, ang, poses


def plan_place(world: CollisionWorld, robot: RobotModel, element: int, grasp: GraspCandidate,
               partial: PartialStructure, rng, cfg: MotionConfig = MotionConfig(), seed=None,
               candidates=None):
    """Insertion along a screw path into the design pose, then a straight retreat without the element."""
    structure = world.structure
    if element in partial:
        raise ValueError("element already placed")
    att = Attachment.for_element(structure, element, grasp.grasp)
    held = (element, grasp.grasp)
    T_goal = element_frame(structure, element)
    present = structure.closure(partial)
    ignore = world.touching(element, present)
    q_held = world.query(partial, held=att, ignore=ignore)
    after = partial.add(element)
    q_after = world.query(after, ignore=ignore | {element})
    seed = robot.home if seed is None else seed
    T_tool_goal = T_goal @ grasp.grasp
    try:
        q_goal = _ik_free(robot, T_tool_goal, seed, rng, q_held, cfg.ik_restarts)
    except IKFailure as exc:
        raise MotionFailure("place: no goal configuration") from exc
    back = -T_tool_goal[:3, :3] @ np.array([0.0, 0.0, 1.0]) * cfg.approach_distance
    try:
        retreat = plan_cartesian_segment(q_after, robot, straight_tool_path(T_tool_goal, back, cfg), q_goal, rng,
                                         PLACE_RETREAT, cfg, None, first_q=q_goal)
    except MotionFailure as exc:
        raise MotionFailure("place: retreat blocked") from exc
    if world.query(after).collides(robot, retreat.end):
        raise MotionFailure("place: retreat ends too close to the structure")
    for j, ang, elem_poses in (candidates if candidates is not None else insertion_paths(T_goal, cfg)):
        tool_poses = [T @ grasp.grasp for T in elem_poses]
        try:
            out = plan_cartesian_segment(q_held, robot, tool_poses, q_goal, rng, PLACE_APPROACH, cfg, held,
                                         first_q=q_goal)
        except MotionFailure:
            continue
        approach = out.reversed(PLACE_APPROACH, held)
        approach.meta.update({"direction": j, "angle_deg": ang, "ignore": sorted(ignore)})
        return approach, retreat
    raise MotionFailure("place: all insertion candidates exhausted")
