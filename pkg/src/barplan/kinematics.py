"""Serial-arm kinematics: forward kinematics, geometric Jacobian and numeric IK."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from barplan import kernels
from barplan.kernels import ref
from barplan.model import InputError

POS_TOL = 1e-4
ORI_TOL = 1e-3
AXIS_TOL = math.radians(2.0)


class IKFailure(RuntimeError):
    pass


class RobotFileError(InputError):
    pass


def make_transform(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = Rotation.from_euler("xyz", rpy).as_matrix()
    T[:3, 3] = xyz
    return T


@dataclass(frozen=True)
class Pose:
    """Position (m) and unit quaternion in scipy ``(x, y, z, w)`` order."""

    position: np.ndarray
    orientation: np.ndarray

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(np.array(T[:3, 3], dtype=float), Rotation.from_matrix(T[:3, :3]).as_quat())

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = Rotation.from_quat(self.orientation).as_matrix()
        T[:3, 3] = self.position
        return T


@dataclass(frozen=True)
class Joint:
    name: str
    origin: np.ndarray
    axis: np.ndarray
    lower: float
    upper: float


@dataclass(frozen=True)
class LinkCapsule:
    link: int          # 0 = base frame, i = frame after joint i
    p0: np.ndarray
    p1: np.ndarray
    radius: float
    tool: bool = False


@dataclass
class RobotModel:
    joints: list[Joint]
    capsules: list[LinkCapsule]
    tool_frame: np.ndarray
    base_frame: np.ndarray = field(default_factory=lambda: np.eye(4))
    home: np.ndarray | None = None
    name: str = "robot"

    def __post_init__(self):
        for j in self.joints:
            if not j.lower < j.upper:
                raise RobotFileError(f"joint {j.name}: limits must satisfy lo < hi")
        for c in self.capsules:
            if c.radius <= 0:
                raise RobotFileError("capsule radii must be positive")
        n = self.dof
        if self.home is None:
            self.home = np.zeros(n)
        self.home = np.asarray(self.home, dtype=float)
        self.lower = np.array([j.lower for j in self.joints])
        self.upper = np.array([j.upper for j in self.joints])
        self.origins = np.array([j.origin for j in self.joints])
        self.axes = np.array([j.axis / np.linalg.norm(j.axis) for j in self.joints])
        # kernel arrays
        self.cap_link = np.array([c.link for c in self.capsules], dtype=np.int64)
        self.cap_p = np.array([[c.p0, c.p1] for c in self.capsules], dtype=float)
        self.cap_r = np.array([c.radius for c in self.capsules])
        self.cap_tool = np.array([c.tool for c in self.capsules], dtype=bool)
        ground = [0 if c.link == 0 else (2 if c.tool else 1) for c in self.capsules]
        self.cap_ground = np.array(ground, dtype=np.int64)
        pairs = [
            (i, j)
            for i in range(len(self.capsules))
            for j in range(i + 1, len(self.capsules))
            if abs(self.capsules[i].link - self.capsules[j].link) >= 2
        ]
        self.self_pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    @property
    def dof(self) -> int:
        return len(self.joints)

    def within_limits(self, q) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.lower) and np.all(q <= self.upper))

    def random_configuration(self, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


def robot_from_dict(doc: dict) -> RobotModel:
    try:
        if int(doc.get("format_version", 1)) != 1:
            raise RobotFileError("unsupported robot format_version")
        joints = []
        for jd in doc["joints"]:
            if jd.get("type", "revolute") != "revolute":
                raise RobotFileError(f"joint {jd.get('name')}: only revolute joints are supported")
            o = jd.get("origin", {})
            lo, hi = jd["limits"]
            joints.append(Joint(jd.get("name", f"j{len(joints) + 1}"),
                                make_transform(o.get("xyz", (0, 0, 0)), o.get("rpy", (0, 0, 0))),
                                np.array(jd["axis"], dtype=float), float(lo), float(hi)))
        caps = []
        for ld in doc.get("links", []):
            for cd in ld["capsules"]:
                caps.append(LinkCapsule(int(ld["link"]), np.array(cd["p0"], float), np.array(cd["p1"], float),
                                        float(cd["radius"])))
        for cd in doc.get("tool_capsules", []):
            caps.append(LinkCapsule(len(joints), np.array(cd["p0"], float), np.array(cd["p1"], float),
                                    float(cd["radius"]), tool=True))
        if not joints:
            raise RobotFileError("robot has no joints")
        tf = doc.get("tool_frame", {})
        bf = doc.get("base_frame", {})
        home = doc.get("home")
        return RobotModel(
            joints, caps,
            make_transform(tf.get("xyz", (0, 0, 0)), tf.get("rpy", (0, 0, 0))),
            make_transform(bf.get("xyz", (0, 0, 0)), bf.get("rpy", (0, 0, 0))),
            None if home is None else np.array(home, dtype=float),
            doc.get("name", "robot"),
        )
    except RobotFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RobotFileError(f"malformed robot document: {exc!r}") from exc


def load_robot(path=None) -> RobotModel:
    """Load a robot file; the bundled 6R arm when ``path`` is None."""
    if path is None:
        text = resources.files("barplan.data").joinpath("robot_6r.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise RobotFileError(f"cannot read {path}: {exc}") from exc
    try:
        return robot_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise RobotFileError(f"invalid robot JSON: {exc}") from exc


def link_frames(robot: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (robot.dof,):
        raise ValueError(f"configuration has {q.shape} entries, robot has {robot.dof} joints")
    return kernels.chain_frames(robot.origins, robot.axes, robot.base_frame, q)


def forward_kinematics(robot: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Tool transform (4x4) and the world frames of every link."""
    frames = link_frames(robot, q)
    return frames[-1] @ robot.tool_frame, frames


def tool_transform(robot: RobotModel, q) -> np.ndarray:
    return link_frames(robot, q)[-1] @ robot.tool_frame


def jacobian(robot: RobotModel, q, frames=None) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows are linear then angular velocity of the tool tip."""
    if frames is None:
        frames = link_frames(robot, q)
    return ref.tool_jacobian(frames, robot.origins, robot.axes, robot.tool_frame)


def rotation_error(R_target: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Rotation vector (world frame) taking ``R`` to ``R_target``."""
    return ref.rotation_log(R_target @ R.T)


def wrap_to_limits(robot: RobotModel, q) -> np.ndarray | None:
    """Shift joints by multiples of 2*pi into their limits, or None if impossible."""
    q = np.array(q, dtype=float)
    for i in range(robot.dof):
        lo, hi = robot.lower[i], robot.upper[i]
        if q[i] < lo:
            q[i] += 2 * math.pi * math.ceil((lo - q[i]) / (2 * math.pi))
        elif q[i] > hi:
            q[i] -= 2 * math.pi * math.ceil((q[i] - hi) / (2 * math.pi))
        if not lo <= q[i] <= hi:
            return None
    return q


def _dls_full(robot, q, T_target, max_iter, damping):
    q, ok = kernels.dls_ik(robot.origins, robot.axes, robot.base_frame, robot.tool_frame,
                           np.asarray(q, dtype=float), np.ascontiguousarray(T_target, dtype=float),
                           int(max_iter), float(damping), POS_TOL, ORI_TOL)
    return q, bool(ok)


def _as_matrix(target) -> np.ndarray:
    return target.matrix() if isinstance(target, Pose) else np.asarray(target, dtype=float)


def inverse_kinematics(robot: RobotModel, target, seed, rng, restarts: int = 20,
                       max_iter: int = 100, damping: float = 0.02) -> np.ndarray:
    """Damped least squares from ``seed``, then up to ``restarts`` random starts.

    Raises :class:`IKFailure` if no in-limits solution meets the pose tolerances.
    """
    T_target = _as_matrix(target)
    if not np.all(np.isfinite(T_target)):
        raise ValueError("target must be finite")
    starts = [np.asarray(seed, dtype=float)]
    for attempt in range(restarts + 1):
        if attempt >= len(starts):
            starts.append(robot.random_configuration(rng))
        q, ok = _dls_full(robot, starts[attempt], T_target, max_iter, damping)
        if ok:
            qw = wrap_to_limits(robot, q)
            if qw is not None:
                return qw
    raise IKFailure("no IK solution")


def tool_axis(robot: RobotModel, q) -> np.ndarray:
    return tool_transform(robot, q)[:3, 2]


def _axis_ok(robot, q, target_position, axis):
    T = tool_transform(robot, q)
    return (np.linalg.norm(target_position - T[:3, 3]) <= POS_TOL
            and float(np.dot(T[:3, 2], axis)) >= math.cos(AXIS_TOL))


def ik_on_partial_constraint(robot: RobotModel, target_position, free_axis, seed, rng,
                             restarts: int = 20, max_iter: int = 100, damping: float = 0.02) -> np.ndarray:
    """IK for a tip position with the tool z-axis along ``free_axis`` (roll left free)."""
    p_t = np.asarray(target_position, dtype=float)
    a = np.asarray(free_axis, dtype=float)
    a = a / np.linalg.norm(a)
    seed = np.asarray(seed, dtype=float)
    if robot.within_limits(seed) and _axis_ok(robot, seed, p_t, a):
        return seed.copy()
    for attempt in range(restarts + 1):
        q0 = seed.copy() if attempt == 0 else robot.random_configuration(rng)
        q = kernels.dls_axis_ik(robot.origins, robot.axes, robot.base_frame, robot.tool_frame, q0, p_t, a,
                                int(max_iter), float(damping), POS_TOL)
        qw = wrap_to_limits(robot, q)
        if qw is not None and _axis_ok(robot, qw, p_t, a):
            return qw
    raise IKFailure("no partial-constraint IK solution")
