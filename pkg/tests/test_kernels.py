"""Compiled and numpy kernels must agree."""

import numpy as np
import pytest

from barplan.fixtures import load_fixture
from barplan.kernels import jit, ref
from barplan.stiffness import element_props

pytestmark = pytest.mark.filterwarnings("ignore::numba.NumbaPerformanceWarning")


def test_segment_distance_agrees(rng):
    pts = rng.normal(size=(500, 4, 3))
    pts[::7, 1] = pts[::7, 0]          # degenerate first segment
    pts[::11, 3] = pts[::11, 2]        # degenerate second segment
    pts[::13, 2:] = pts[::13, :2] + 0.1  # parallel segments
    a = ref.segment_distance(pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3])
    b = jit.segment_distance_batch(pts[:, 0].copy(), pts[:, 1].copy(), pts[:, 2].copy(), pts[:, 3].copy())
    assert np.abs(a - b).max() < 1e-12


def test_segment_distance_known_values():
    o = np.zeros(3)
    x = np.array([1.0, 0, 0])
    assert ref.segment_distance(o, x, np.array([0.5, 1, 0]), np.array([0.5, 1, 1])) == pytest.approx(1.0)
    assert ref.segment_distance(o, x, np.array([2.0, 0, 0]), np.array([3.0, 0, 0])) == pytest.approx(1.0)
    assert ref.segment_distance(o, x, np.array([0.5, -1, 0]), np.array([0.5, 1, 0])) == pytest.approx(0.0)
    assert ref.segment_distance(o, o, np.array([0, 0, 2.0]), np.array([0, 0, 2.0])) == pytest.approx(2.0)


def test_chain_frames_agree(robot, rng):
    for _ in range(20):
        q = robot.random_configuration(rng)
        a = ref.chain_frames(robot.origins, robot.axes, robot.base_frame, q)
        b = jit.chain_frames(robot.origins, robot.axes, robot.base_frame, q)
        assert np.abs(a - b).max() < 1e-12


def test_frame_assembly_agrees():
    s = load_fixture("arch")
    eids = s.closure(s.full)
    used = sorted({n for e in eids for n in s.elements[e].ends})
    local = {n: i for i, n in enumerate(used)}
    conn = np.array([[local[s.elements[e].end_a], local[s.elements[e].end_b]] for e in eids], dtype=np.int64)
    props = element_props(s, eids)
    Ka, fa = ref.assemble_frame(s.positions[used], conn, props, 9.81)
    Kb, fb = jit.assemble_frame(s.positions[used], conn, props, 9.81)
    assert np.abs(Ka - Kb).max() <= 1e-9 * np.abs(Ka).max()
    assert np.abs(fa - fb).max() <= 1e-12 * np.abs(fa).max()


def _collision_args(robot, world_p, world_r, held):
    ignore = np.zeros(len(world_r), dtype=bool)
    ignore[::3] = True
    hp = np.array([[-0.1, 0.0, 0.05], [0.1, 0.0, 0.05]])
    return (robot.origins, robot.axes, robot.base_frame, robot.tool_frame, robot.cap_link, robot.cap_p, robot.cap_r,
            robot.cap_tool, robot.cap_ground, robot.self_pairs, world_p, world_r, ignore, held, hp, 0.01,
            0.002, 0.001)


@pytest.mark.parametrize("held", [False, True])
def test_collision_verdicts_agree(robot, rng, held):
    world_p = np.ascontiguousarray(rng.uniform([0.2, -0.6, 0.05], [0.9, 0.6, 0.9], size=(6, 2, 3)))
    world_r = rng.uniform(0.005, 0.03, size=6)
    qs = robot.home + rng.normal(0.0, 0.5, size=(300, robot.dof))
    args = _collision_args(robot, world_p, world_r, held)
    a = [bool(ref.state_collides(q, *args)) for q in qs]
    b = [bool(jit.state_collides(q, *args)) for q in qs]
    assert a == b
    assert 0 < sum(a) < len(a)  # both outcomes exercised
    assert ref.first_collision(qs, *args) == jit.first_collision(qs, *args)


def test_ik_kernels_agree(robot, rng):
    for _ in range(20):
        q0 = robot.random_configuration(rng)
        T = ref.chain_frames(robot.origins, robot.axes, robot.base_frame, robot.random_configuration(rng))[-1] \
            @ robot.tool_frame
        a = ref.dls_ik(robot.origins, robot.axes, robot.base_frame, robot.tool_frame, q0, T, 40, 0.02, 1e-4, 1e-3)
        b = jit.dls_ik(robot.origins, robot.axes, robot.base_frame, robot.tool_frame, q0, T, 40, 0.02, 1e-4, 1e-3)
        assert a[1] == b[1]
        assert np.abs(a[0] - b[0]).max() < 1e-7
        p, axis = T[:3, 3], np.array([0.0, 0.0, -1.0])
        a = ref.dls_axis_ik(robot.origins, robot.axes, robot.base_frame, robot.tool_frame, q0, p, axis, 40, 0.02, 1e-4)
        b = jit.dls_axis_ik(robot.origins, robot.axes, robot.base_frame, robot.tool_frame, q0, p, axis, 40, 0.02, 1e-4)
        assert np.abs(a - b).max() < 1e-7


def test_rotation_log_near_pi_agrees():
    for axis in ([1, 0, 0], [0, 0.6, 0.8], [0.577, 0.577, 0.577]):
        axis = np.array(axis) / np.linalg.norm(axis)
        for ang in (np.pi, np.pi - 1e-7, 1e-9, 0.0):
            R = ref.axis_rotation(axis, ang)
            assert np.allclose(ref.rotation_log(R), jit.rotation_log(R), atol=1e-9)
            assert np.allclose(ref.axis_rotation(*_split(ref.rotation_log(R))), R, atol=1e-6)


def _split(v):
    n = np.linalg.norm(v)
    return (v / n if n > 0 else np.array([1.0, 0, 0])), n


def _run(code, **env):
    import os
    import subprocess
    import sys

    return subprocess.run([sys.executable, "-c", code], env=dict(os.environ, **env), capture_output=True,
                          text=True, check=True).stdout.strip()


def test_env_var_selects_backend():
    code = "from barplan import kernels; print(kernels.BACKEND)"
    assert _run(code, BARPLAN_DISABLE_NUMBA="1") == "numpy"
    assert _run(code, BARPLAN_DISABLE_NUMBA="0") == "numba"


def test_numpy_backend_plans_the_same_sequence():
    code = ("from barplan.fixtures import load_fixture; from barplan.kinematics import load_robot;"
            "from barplan.collision import CollisionWorld; from barplan.search import backward_plan;"
            "s = load_fixture('triangle'); w = CollisionWorld.from_scene(s);"
            "r = backward_plan(s, load_robot(), w, 0.005); print(r.plan.sequence, r.report.ok)")
    assert _run(code, BARPLAN_DISABLE_NUMBA="1") == _run(code, BARPLAN_DISABLE_NUMBA="0")


def test_benchmark_script_runs():
    from pathlib import Path

    bench = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    out = _run(f"import runpy, sys; sys.argv = ['b', '--repeat', '1', '--plan', '']; "
               f"runpy.run_path({str(bench)!r}, run_name='__main__')")
    assert "collision sweep" in out and "speedup" in out
