import math

import numpy as np
import pytest

from barplan.collision import Capsule, CollisionWorld, Attachment
from barplan.kinematics import tool_transform
from barplan.model import PartialStructure
from barplan.motion import (
    EXTRUDE, EXTRUDE_APPROACH, EXTRUDE_RETREAT, PLACE_APPROACH, PLACE_RETREAT, MotionConfig, MotionFailure,
    cone_directions, element_frame, grasp_candidates, insertion_paths, plan_cartesian_segment, plan_extrude,
    plan_joint_motion, plan_pick, plan_place, rack_frame, straight_tool_path,
)
from conftest import build

CFG = MotionConfig()


def _blocked_world(robot):
    s = build([(-0.3, -0.5, 0.0), (-0.3, -0.5, 0.05)], [(0, 1)])
    q_mid = robot.home + np.array([1.0, 0, 0, 0, 0, 0])
    tip = tool_transform(robot, q_mid)[:3, 3]
    wall = Capsule(tip - [0, 0, 0.15], tip + [0, 0, 0.15], 0.05)
    return CollisionWorld(s, [wall])


def _max_step(traj):
    return np.abs(np.diff(traj.waypoints, axis=0)).max(initial=0.0)


def test_rrt_goes_around_obstacle(robot):
    world = _blocked_world(robot)
    q = world.query(None)
    a, b = robot.home, robot.home + np.array([2.0, 0, 0, 0, 0, 0])
    assert not q.segment_free(robot, a, b)
    t = plan_joint_motion(q, robot, a, b, np.random.default_rng(0))
    assert np.array_equal(t.start, a) and np.array_equal(t.end, b)
    assert _max_step(t) <= CFG.max_joint_step + 1e-12
    assert q.first_collision(robot, t.waypoints) < 0
    again = plan_joint_motion(q, robot, a, b, np.random.default_rng(0))
    assert np.array_equal(t.waypoints, again.waypoints)


def test_rrt_rejects_colliding_endpoints(robot):
    world = _blocked_world(robot)
    q_mid = robot.home + np.array([1.0, 0, 0, 0, 0, 0])
    with pytest.raises(MotionFailure, match="goal in collision"):
        plan_joint_motion(world.query(None), robot, robot.home, q_mid, np.random.default_rng(0))


def test_rrt_budget_exhaustion(robot):
    world = _blocked_world(robot)
    cfg = MotionConfig(rrt_max_iters=1, rrt_step=0.01)
    with pytest.raises(MotionFailure, match="budget"):
        plan_joint_motion(world.query(None), robot, robot.home, robot.home + np.array([2.0, 0, 0, 0, 0, 0]),
                          np.random.default_rng(0), cfg=cfg)


def test_grasp_candidates_are_perpendicular_frames():
    s = build([(0.5, 0, 0), (0.5, 0, 0.1)], [(0, 1)], mode="assembly", radius=0.008)
    gs = grasp_candidates(s, 0)
    assert len(gs) == len(CFG.grasp_offsets) * CFG.grasp_rotations * CFG.grasp_sides
    for g in gs:
        R = g.grasp[:3, :3]
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12) and np.linalg.det(R) == pytest.approx(1.0)
        assert abs(R[0, 2]) < 1e-12            # tool axis normal to the bar axis
        # tool origin sits on the bar surface
        assert np.linalg.norm(g.grasp[1:3, 3]) == pytest.approx(0.008)


def test_cone_directions_inside_cone():
    dirs = cone_directions(CFG)
    assert len(dirs) == 1 + 2 * CFG.cone_azimuths
    for d in dirs:
        assert np.linalg.norm(d) == pytest.approx(1.0)
        assert math.acos(-d[2]) <= CFG.cone_half_angle + 1e-12


def test_cartesian_segment_tracks_straight_line(robot):
    s = build([(-0.3, -0.5, 0.0), (-0.3, -0.5, 0.05)], [(0, 1)])
    q = CollisionWorld(s).query(None)
    T0 = tool_transform(robot, robot.home)
    path = straight_tool_path(T0, np.array([0.0, 0.1, 0.0]), CFG)
    t = plan_cartesian_segment(q, robot, path, robot.home, np.random.default_rng(0), "probe", first_q=robot.home)
    assert np.allclose(tool_transform(robot, t.end)[:3, 3], T0[:3, 3] + [0, 0.1, 0], atol=1e-3)
    assert _max_step(t) <= CFG.max_joint_step + 1e-12
    for w in t.waypoints[:: max(1, len(t.waypoints) // 10)]:
        p = tool_transform(robot, w)[:3, 3]
        assert abs(p[0] - T0[0, 3]) < 5e-3 and abs(p[2] - T0[2, 3]) < 5e-3


def test_extrude_follows_element(robot, stack2):
    world = CollisionWorld.from_scene(stack2)
    a, t, r = plan_extrude(world, robot, 0, PartialStructure(), np.random.default_rng(0))
    assert (a.kind, t.kind, r.kind) == (EXTRUDE_APPROACH, EXTRUDE, EXTRUDE_RETREAT)
    assert np.array_equal(a.end, t.start) and np.array_equal(t.end, r.start)
    start = stack2.nodes[t.meta["start_node"]].position
    end = stack2.nodes[t.meta["end_node"]].position
    assert stack2.nodes[t.meta["start_node"]].supported
    assert np.allclose(tool_transform(robot, t.start)[:3, 3], start, atol=1e-3)
    assert np.allclose(tool_transform(robot, t.end)[:3, 3], end, atol=1e-3)
    for w in t.waypoints:
        z = tool_transform(robot, w)[:3, 2]
        assert math.acos(min(1.0, -z[2])) <= CFG.cone_half_angle + 1e-3
    plain = world.query(PartialStructure())
    assert not plain.collides(robot, a.start)
    assert not world.query(PartialStructure.of([0])).collides(robot, r.end)


def test_extrude_needs_anchor(robot):
    s = build([(0.5, 0, 0), (0.5, 0, 0.1), (0.5, 0, 0.2)], [(0, 1), (1, 2)])
    with pytest.raises(MotionFailure, match="not anchored"):
        plan_extrude(CollisionWorld.from_scene(s), robot, 1, PartialStructure(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        plan_extrude(CollisionWorld.from_scene(s), robot, 0, PartialStructure.of([0]), np.random.default_rng(0))


def test_insertion_paths_start_at_goal():
    T = np.eye(4)
    paths = list(insertion_paths(T, CFG))
    assert len(paths) == len(CFG.insertion_angles) * CFG.insertion_directions
    for j, ang, poses in paths:
        assert np.allclose(poses[0], T)
        assert np.linalg.norm(poses[-1][:3, 3]) == pytest.approx(CFG.insertion_distance)
        step = max(np.linalg.norm(b[:3, 3] - a[:3, 3]) for a, b in zip(poses, poses[1:]))
        assert step <= CFG.cartesian_step + 1e-12


def test_pick_and_place_single_post(robot):
    s = build([(0.5, 0, 0), (0.5, 0, 0.12)], [(0, 1)], mode="assembly", radius=0.008)
    world = CollisionWorld.from_scene(s)
    rng = np.random.default_rng(0)
    empty = PartialStructure()
    for g in grasp_candidates(s, 0):
        try:
            approach, retreat = plan_place(world, robot, 0, g, empty, rng)
            pick = plan_pick(world, robot, 0, rack_frame(s), g, empty, rng)
        except MotionFailure:
            continue
        break
    else:
        pytest.fail("no grasp worked for a single post")
    assert approach.kind == PLACE_APPROACH and retreat.kind == PLACE_RETREAT
    assert approach.attached[0] == 0 and retreat.attached is None
    assert np.allclose(tool_transform(robot, approach.end), element_frame(s, 0) @ g.grasp, atol=2e-3)
    assert np.array_equal(approach.end, retreat.start)
    att = Attachment.for_element(s, 0, g.grasp)
    assert world.query(empty, held=att).first_collision(robot, approach.waypoints[:-5]) < 0
    p_app, p_ret = pick
    assert np.allclose(tool_transform(robot, p_app.end), rack_frame(s) @ g.grasp, atol=2e-3)
    assert np.array_equal(p_app.end, p_ret.start)
