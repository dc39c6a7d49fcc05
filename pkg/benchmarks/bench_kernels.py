"""Time the numba kernels against the numpy reference kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one end-to-end plan under each backend by re-running this script
in a subprocess with BARPLAN_DISABLE_NUMBA set.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from barplan.collision import CollisionWorld
from barplan.fixtures import load_fixture
from barplan.kernels import jit, ref
from barplan.kinematics import load_robot
from barplan.stiffness import element_props


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(robot):
    rng = np.random.default_rng(0)
    arch = load_fixture("arch")
    world = CollisionWorld.from_scene(arch)
    q = world.query(arch.full)
    qs = robot.home + rng.normal(0.0, 0.02, size=(200, robot.dof))
    args = (robot.origins, robot.axes, robot.base_frame, robot.tool_frame, robot.cap_link, robot.cap_p,
            robot.cap_r, robot.cap_tool, robot.cap_ground, robot.self_pairs, q.obs_p, q.obs_r, q.obs_ignore,
            False, np.zeros((2, 3)), 0.0, 0.002, 0.001)

    eids = arch.closure(arch.full)
    used = sorted({n for e in eids for n in arch.elements[e].ends})
    local = {n: i for i, n in enumerate(used)}
    conn = np.array([[local[arch.elements[e].end_a], local[arch.elements[e].end_b]] for e in eids], dtype=np.int64)
    props = element_props(arch, eids)
    coords = arch.positions[used]

    T = ref.chain_frames(robot.origins, robot.axes, robot.base_frame, robot.home + 0.3)[-1] @ robot.tool_frame
    pts = [np.ascontiguousarray(rng.normal(size=(2000, 3))) for _ in range(4)]

    def seg(k):
        return lambda: k.segment_distance_batch(*pts) if k is jit else k.segment_distance(*pts)

    return {
        "segment distance x2000": seg,
        "chain FK x200": lambda k: lambda: [k.chain_frames(robot.origins, robot.axes, robot.base_frame, c) for c in qs],
        "collision sweep 200 states (arch)": lambda k: lambda: k.first_collision(qs, *args),
        "frame assembly (arch)": lambda k: lambda: k.assemble_frame(coords, conn, props, 9.81),
        "DLS IK x20": lambda k: lambda: [k.dls_ik(robot.origins, robot.axes, robot.base_frame, robot.tool_frame,
                                                  robot.home, T, 100, 0.02, 1e-4, 1e-3) for _ in range(20)],
    }


def end_to_end(fixture):
    code = ("import time; from barplan.fixtures import load_fixture; from barplan.kinematics import load_robot;"
            "from barplan.collision import CollisionWorld; from barplan.search import backward_plan;"
            f"s = load_fixture({fixture!r}); r = load_robot(); w = CollisionWorld.from_scene(s);"
            "t = time.perf_counter(); backward_plan(s, r, w, s.tolerance or 0.005); print(time.perf_counter() - t)")
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, BARPLAN_DISABLE_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        out[label] = float(r.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--plan", default="tetrahedron", help="fixture for the end-to-end timing ('' to skip)")
    args = ap.parse_args(argv)
    robot = load_robot()
    print(f"{'kernel':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, make in cases(robot).items():
        t_ref = best_of(make(ref), args.repeat)
        t_jit = best_of(make(jit), args.repeat)
        print(f"{name:36s} {t_ref * 1e3:10.3f} {t_jit * 1e3:10.3f} {t_ref / t_jit:8.1f}x")
    if args.plan:
        t = end_to_end(args.plan)
        print(f"{'plan ' + args.plan + ' (end to end, s)':36s} {t['numpy']:10.2f} {t['numba']:10.2f} "
              f"{t['numpy'] / t['numba']:8.1f}x")


if __name__ == "__main__":
    main()
