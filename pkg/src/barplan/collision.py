"""Capsule collision world for robot, structure and held-element queries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from barplan import kernels
from barplan.kernels import ref
from barplan.model import BarStructure, PartialStructure

CLEARANCE = 0.002
CONTACT_TOL = 0.001
MAX_JOINT_STEP = 0.02
GRID_THRESHOLD = 32


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def key(self) -> tuple:
        return (*map(float, self.p0), *map(float, self.p1), float(self.radius))


def capsule_distance(a: Capsule, b: Capsule) -> float:
    """Signed distance: axis segment distance minus both radii."""
    if b.key() < a.key():
        a, b = b, a
    return float(ref.segment_distance(a.p0, a.p1, b.p0, b.p1)) - a.radius - b.radius


@dataclass(frozen=True)
class Attachment:
    """Held element: capsule endpoints expressed in the tool frame."""

    element: int
    grasp: np.ndarray          # tool frame relative to element frame (4x4)
    p_tool: np.ndarray         # (2, 3)
    radius: float

    @classmethod
    def for_element(cls, structure: BarStructure, element: int, grasp: np.ndarray) -> "Attachment":
        half = structure.length(element) / 2
        inv = np.linalg.inv(grasp)
        pts = np.array([[-half, 0, 0, 1.0], [half, 0, 0, 1.0]]) @ inv.T
        return cls(element, np.asarray(grasp), pts[:, :3], structure.elements[element].radius)


class UniformGrid:
    """Uniform grid over capsule AABBs for neighborhood queries."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray, cell: float | None = None):
        self.lo_all, self.hi_all = lo, hi
        if cell is None:
            ext = np.maximum(hi.max(axis=0) - lo.min(axis=0), 1e-6)
            cell = max(float(np.max(ext)) / max(len(lo) ** (1 / 3), 1.0), 1e-3)
        self.cell = cell
        self.origin = lo.min(axis=0)
        self.cells: dict[tuple, list[int]] = {}
        for i, (a, b) in enumerate(zip(lo, hi)):
            for key in self._keys(a, b):
                self.cells.setdefault(key, []).append(i)

    def _keys(self, a, b):
        ia = np.floor((a - self.origin) / self.cell).astype(int)
        ib = np.floor((b - self.origin) / self.cell).astype(int)
        for x in range(ia[0], ib[0] + 1):
            for y in range(ia[1], ib[1] + 1):
                for z in range(ia[2], ib[2] + 1):
                    yield (x, y, z)

    def query(self, lo, hi) -> list[int]:
        found: set[int] = set()
        for key in self._keys(np.asarray(lo), np.asarray(hi)):
            found.update(self.cells.get(key, ()))
        return sorted(i for i in found if np.all(self.lo_all[i] <= hi) and np.all(self.hi_all[i] >= lo))


class CollisionWorld:
    """Static obstacles plus the capsules of one structure.

    Queries select which structure elements are present (a partial structure
    closure) and which are ignored for the end effector and held element.
    """

    def __init__(self, structure: BarStructure, obstacles=(), clearance: float = CLEARANCE,
                 contact_tol: float = CONTACT_TOL):
        self.structure = structure
        self.static_obstacles = list(obstacles)
        self.clearance = clearance
        self.contact_tol = contact_tol
        self.element_caps = {
            e.id: Capsule(*structure.endpoints(e.id), e.radius) for e in structure.elements
        }
        p = np.array([[c.p0, c.p1] for c in self.element_caps.values()])
        r = np.array([c.radius for c in self.element_caps.values()])
        self._elem_p = p
        self._elem_r = r
        lo = p.min(axis=1) - r[:, None]
        hi = p.max(axis=1) + r[:, None]
        self.grid = UniformGrid(lo, hi) if len(r) > GRID_THRESHOLD else None
        self._lo, self._hi = lo, hi
        self._static_p = np.array([[c.p0, c.p1] for c in self.static_obstacles], dtype=float).reshape(-1, 2, 3)
        self._static_r = np.array([c.radius for c in self.static_obstacles], dtype=float)

    @classmethod
    def from_scene(cls, structure: BarStructure, **kw) -> "CollisionWorld":
        obs = [Capsule(np.array(o["p0"], float), np.array(o["p1"], float), float(o["radius"]))
               for o in structure.scene.get("obstacles", [])]
        return cls(structure, obs, **kw)

    def near_elements(self, capsule: Capsule, margin: float) -> list[int]:
        lo = np.minimum(capsule.p0, capsule.p1) - capsule.radius - margin
        hi = np.maximum(capsule.p0, capsule.p1) + capsule.radius + margin
        if self.grid is not None:
            return self.grid.query(lo, hi)
        mask = np.all(self._lo <= hi, axis=1) & np.all(self._hi >= lo, axis=1)
        return [int(i) for i in np.nonzero(mask)[0]]

    def touching(self, element: int, present) -> set[int]:
        """Present elements sharing a node with ``element`` or within contact tolerance of it."""
        present = set(present)
        out = {o for o in self.structure.adjacency[element] if o in present}
        cap = self.element_caps[element]
        for o in self.near_elements(cap, self.contact_tol):
            if o in present and o != element and capsule_distance(cap, self.element_caps[o]) <= self.contact_tol:
                out.add(o)
        return out

    def query(self, partial: PartialStructure | None, held: Attachment | None = None,
              ignore=(), extra=()) -> "CollisionQuery":
        elems = self.structure.closure(partial) if partial is not None else []
        elems = sorted(set(elems) | set(extra))
        ignore = set(ignore)
        obs_p = np.concatenate([self._static_p, self._elem_p[elems].reshape(-1, 2, 3)])
        obs_r = np.concatenate([self._static_r, self._elem_r[elems]])
        obs_ignore = np.array([False] * len(self._static_r) + [e in ignore for e in elems], dtype=bool)
        return CollisionQuery(self, np.ascontiguousarray(obs_p), obs_r, obs_ignore, held)

    def scene_records(self, partial: PartialStructure | None = None):
        elems = self.structure.closure(partial) if partial is not None else sorted(self.element_caps)
        for c in self.static_obstacles:
            yield {"type": "obstacle", "p0": c.p0.tolist(), "p1": c.p1.tolist(), "radius": c.radius}
        for e in elems:
            c = self.element_caps[e]
            yield {"type": "element", "id": e, "p0": c.p0.tolist(), "p1": c.p1.tolist(), "radius": c.radius}


class CollisionQuery:
    """Kernel-ready snapshot of one world configuration."""

    def __init__(self, world: CollisionWorld, obs_p, obs_r, obs_ignore, held: Attachment | None):
        self.world = world
        self.obs_p, self.obs_r, self.obs_ignore = obs_p, obs_r, obs_ignore
        self.held = held
        if held is None:
            self._held = (False, np.zeros((2, 3)), 1.0)
        else:
            self._held = (True, np.ascontiguousarray(held.p_tool, dtype=float), float(held.radius))

    def first_collision(self, robot, configs, clearance: float | None = None) -> int:
        configs = np.ascontiguousarray(np.atleast_2d(configs), dtype=float)
        c = self.world.clearance if clearance is None else clearance
        return int(kernels.first_collision(
            configs, robot.origins, robot.axes, robot.base_frame, robot.tool_frame,
            robot.cap_link, robot.cap_p, robot.cap_r, robot.cap_tool, robot.cap_ground, robot.self_pairs,
            self.obs_p, self.obs_r, self.obs_ignore,
            self._held[0], self._held[1], self._held[2], c, self.world.contact_tol,
        ))

    def collides(self, robot, q, clearance: float | None = None) -> bool:
        return self.first_collision(robot, q, clearance) >= 0

    def segment_free(self, robot, qa, qb, max_step: float = MAX_JOINT_STEP) -> bool:
        return self.first_collision(robot, interpolate(qa, qb, max_step)) < 0


def _subdivisions(delta: float, max_step: float) -> int:
    if delta <= max_step:
        return 1
    return 1 << math.ceil(math.log2(delta / max_step))


def interpolate(qa, qb, max_step: float = MAX_JOINT_STEP, include_start: bool = True) -> np.ndarray:
    """Straight joint-space segment; power-of-two subdivisions so halving the step nests samples."""
    qa, qb = np.asarray(qa, float), np.asarray(qb, float)
    n = _subdivisions(float(np.abs(qb - qa).max(initial=0.0)), max_step)
    t = np.arange(0 if include_start else 1, n + 1) / n
    out = qa + t[:, None] * (qb - qa)
    out[-1] = qb  # exact endpoint so adjacent segments share boundaries bit-for-bit
    return out


def resample(trajectory, max_step: float = MAX_JOINT_STEP) -> np.ndarray:
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if len(traj) <= 1:
        return traj.copy()
    parts = [traj[:1]]
    for a, b in zip(traj[:-1], traj[1:]):
        parts.append(interpolate(a, b, max_step, include_start=False))
    return np.concatenate(parts)


def state_in_collision(world: CollisionWorld, robot, q, partial: PartialStructure | None,
                       held: Attachment | None = None, ignore=(), clearance: float | None = None) -> bool:
    return world.query(partial, held, ignore).collides(robot, q, clearance)


def trajectory_in_collision(world: CollisionWorld, robot, trajectory, partial: PartialStructure | None,
                            held: Attachment | None = None, ignore=(), max_step: float = MAX_JOINT_STEP,
                            clearance: float | None = None) -> int | None:
    """Index of the first colliding configuration of ``resample(trajectory, max_step)``, or None."""
    dense = resample(trajectory, max_step)
    k = world.query(partial, held, ignore).first_collision(robot, dense, clearance)
    return None if k < 0 else k


def dump_scene(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
