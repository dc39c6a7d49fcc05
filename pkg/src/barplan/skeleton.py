"""Action templates, plan skeletons and per-element geometric evaluation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from barplan.collision import Attachment, CollisionWorld
from barplan.kinematics import RobotModel
from barplan.model import ASSEMBLY, EXTRUSION, PartialStructure
from barplan.motion import (
    EXTRUDE, TRANSFER, TRANSIT, MotionConfig, MotionFailure, Trajectory, grasp_candidates,
    plan_extrude, plan_joint_motion, plan_pick, plan_place, rack_frame,
)

PICK = "pick"
PLACE = "place"

# parameter slots per template
TEMPLATE_SLOTS = {
    TRANSIT: ("partial", "previous_trajectory", "next_trajectory", "transit_trajectory"),
    EXTRUDE: ("partial", "element", "extrude_trajectory"),
    PICK: ("partial", "element", "grasp", "pick_trajectory"),
    TRANSFER: ("partial", "element", "grasp", "pick_trajectory", "place_trajectory", "transfer_trajectory"),
    PLACE: ("partial", "element", "grasp", "place_trajectory"),
}

SKELETONS = {
    EXTRUSION: (TRANSIT, EXTRUDE),
    ASSEMBLY: (TRANSIT, PICK, TRANSFER, PLACE),
}


class GeometricInfeasibility(RuntimeError):
    pass


class SpliceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionTemplate:
    kind: str

    @property
    def slots(self) -> tuple:
        return TEMPLATE_SLOTS[self.kind]


@dataclass(frozen=True)
class PlanSkeleton:
    mode: str

    @property
    def templates(self) -> tuple:
        return SKELETONS[self.mode]

    def expand(self, n: int) -> list[str]:
        return list(self.templates) * n + [TRANSIT]

    def pattern(self) -> re.Pattern:
        unit = "".join(f"{k};" for k in self.templates)
        return re.compile(f"^(?:{unit})*{TRANSIT};$")

    def matches(self, kinds: list[str]) -> bool:
        return bool(self.pattern().match("".join(f"{k};" for k in kinds)))


@dataclass
class Action:
    kind: str
    element: int | None
    trajectories: list[Trajectory]
    grasp: np.ndarray | None = None

    @property
    def start(self):
        return self.trajectories[0].start

    @property
    def end(self):
        return self.trajectories[-1].end


@dataclass
class ElementStep:
    element: int
    partial: PartialStructure   # structure the element is built onto
    actions: list[Action]

    @property
    def entry(self):
        return self.actions[0].start

    @property
    def exit(self):
        return self.actions[-1].end

    def trajectories(self) -> list[Trajectory]:
        return [t for a in self.actions for t in a.trajectories]


@dataclass
class ConstructionPlan:
    mode: str
    steps: list[ElementStep]
    final_transit: Action
    home: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def sequence(self) -> list[int]:
        return [s.element for s in self.steps]

    def actions(self) -> list[Action]:
        return [a for s in self.steps for a in s.actions] + [self.final_transit]

    def action_kinds(self) -> list[str]:
        return [a.kind for a in self.actions()]


def evaluate_element(mode: str, world: CollisionWorld, robot: RobotModel, partial: PartialStructure,
                     element: int, q_entry, rng, cfg: MotionConfig = MotionConfig()) -> ElementStep:
    """Plan every primitive needed to build ``element`` on top of ``partial``."""
    if element in partial:
        raise ValueError("element already in partial")
    q_entry = np.asarray(q_entry, dtype=float)
    query = world.query(partial)
    if mode == EXTRUSION:
        try:
            ext = plan_extrude(world, robot, element, partial, rng, cfg)
            transit = plan_joint_motion(query, robot, q_entry, ext[0].start, rng, TRANSIT, cfg)
        except MotionFailure as exc:
            raise GeometricInfeasibility(f"element {element}: {exc}") from exc
        return ElementStep(element, partial, [
            Action(TRANSIT, element, [transit]),
            Action(EXTRUDE, element, list(ext)),
        ])

    structure = world.structure
    rack = rack_frame(structure)
    last = None
    for grasp in grasp_candidates(structure, element, cfg):
        try:
            pick_app, pick_ret = plan_pick(world, robot, element, rack, grasp, partial, rng, cfg)
            place_app, place_ret = plan_place(world, robot, element, grasp, partial, rng, cfg)
            att = Attachment.for_element(structure, element, grasp.grasp)
            ignore = set(place_app.meta.get("ignore", ()))
            transfer = plan_joint_motion(world.query(partial, held=att, ignore=ignore), robot,
                                         pick_ret.end, place_app.start, rng, TRANSFER, cfg,
                                         attached=(element, grasp.grasp))
            transit = plan_joint_motion(query, robot, q_entry, pick_app.start, rng, TRANSIT, cfg)
        except MotionFailure as exc:
            last = exc
            continue
        return ElementStep(element, partial, [
            Action(TRANSIT, element, [transit]),
            Action(PICK, element, [pick_app, pick_ret], grasp.grasp),
            Action(TRANSFER, element, [transfer], grasp.grasp),
            Action(PLACE, element, [place_app, place_ret], grasp.grasp),
        ])
    raise GeometricInfeasibility(f"element {element}: all grasps exhausted ({last})")


def splice(steps: list[ElementStep], q_home, world: CollisionWorld, robot: RobotModel, rng,
           cfg: MotionConfig = MotionConfig()) -> ConstructionPlan:
    """Chain per-element steps in build order, re-planning transits between them."""
    if not steps:
        raise ValueError("no steps")
    mode = world.structure.mode
    built = PartialStructure()
    q_prev = np.asarray(q_home, dtype=float)
    out = []
    for i, step in enumerate(steps):
        if step.partial != built:
            raise ValueError(f"step {i} (element {step.element}) is out of construction order")
        transit = step.actions[0]
        if not np.array_equal(transit.start, q_prev):
            try:
                traj = plan_joint_motion(world.query(built), robot, q_prev, step.actions[1].start, rng, TRANSIT, cfg)
            except MotionFailure as exc:
                raise SpliceError(f"bridging transit before element {step.element} failed: {exc}") from exc
            transit = Action(TRANSIT, step.element, [traj])
        out.append(ElementStep(step.element, step.partial, [transit] + step.actions[1:]))
        built = built.add(step.element)
        q_prev = step.exit
    try:
        home = plan_joint_motion(world.query(built), robot, q_prev, q_home, rng, TRANSIT, cfg)
    except MotionFailure as exc:
        raise SpliceError(f"final transit home failed: {exc}") from exc
    plan = ConstructionPlan(mode, out, Action(TRANSIT, None, [home]), np.asarray(q_home, dtype=float))
    if not PlanSkeleton(mode).matches(plan.action_kinds()):
        raise SpliceError("spliced plan does not match the skeleton")
    return plan
