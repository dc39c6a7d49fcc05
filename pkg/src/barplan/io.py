"""Run configuration and the versioned plan / stats / deformation file formats."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from barplan.model import FORMAT_VERSION, BarStructure, InputError, PartialStructure
from barplan.motion import MotionConfig, Trajectory
from barplan.search import STIFFPLAN
from barplan.skeleton import Action, ConstructionPlan, ElementStep

DEFAULT_TOLERANCE = 0.005
_STEP_FIELDS = {"max_joint_step", "rrt_step", "cartesian_step", "cartesian_angle_step", "extrude_step",
                "approach_distance", "insertion_distance", "rrt_max_iters", "insertion_directions",
                "grasp_rotations", "grasp_sides", "cone_azimuths"}


class PlanFileError(InputError):
    pass


@dataclass(frozen=True)
class Config:
    """Everything that changes planner output, besides the input files."""

    tolerance: float | None = None        # m; None -> the structure's own, else DEFAULT_TOLERANCE
    clearance: float = 0.002              # m
    contact_tol: float = 0.001            # m
    heuristic: str = STIFFPLAN
    seed: int = 0
    direction: str = "backward"
    max_time: float | None = 600.0        # s, whole search
    max_expansions: int | None = None
    motion: MotionConfig = field(default_factory=MotionConfig)

    def __post_init__(self):
        for name in ("tolerance", "clearance", "contact_tol", "max_time", "max_expansions"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InputError(f"config: {name} must be positive")
        for f in dataclasses.fields(self.motion):
            v = getattr(self.motion, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                continue
            if v < 0 or (v == 0 and f.name in _STEP_FIELDS):
                raise InputError(f"config: motion.{f.name} out of range")

    def resolve_tolerance(self, structure: BarStructure) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return structure.tolerance if structure.tolerance is not None else DEFAULT_TOLERANCE

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["motion"]["insertion_angles"] = list(self.motion.insertion_angles)
        d["motion"]["grasp_offsets"] = list(self.motion.grasp_offsets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        d = dict(d)
        try:
            motion = dict(d.pop("motion", {}) or {})
            if "insertion_angles" in motion:
                motion["insertion_angles"] = tuple(float(a) for a in motion["insertion_angles"])
            if "grasp_offsets" in motion:
                motion["grasp_offsets"] = tuple(float(a) for a in motion["grasp_offsets"])
            return cls(motion=MotionConfig(**motion), **d)
        except TypeError as exc:
            raise InputError(f"config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Config":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc

    def replace(self, **kw) -> "Config":
        motion_kw = {k[len("motion."):]: kw.pop(k) for k in list(kw) if k.startswith("motion.")}
        motion = dataclasses.replace(self.motion, **motion_kw) if motion_kw else self.motion
        return dataclasses.replace(self, motion=motion, **kw)


def _plain(x):
    """JSON-safe copy with numpy scalars and arrays turned into Python values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _traj_to_dict(t: Trajectory) -> dict:
    att = None if t.attached is None else {"element": int(t.attached[0]), "grasp": t.attached[1].tolist()}
    return {"kind": t.kind, "attached": att, "waypoints": t.waypoints.tolist(), "meta": _plain(t.meta)}


def _traj_from_dict(d: dict) -> Trajectory:
    att = d.get("attached")
    attached = None if att is None else (int(att["element"]), np.array(att["grasp"], dtype=float))
    return Trajectory(np.array(d["waypoints"], dtype=float), d["kind"], attached, dict(d.get("meta", {})))


def _action_to_dict(a: Action) -> dict:
    return {
        "kind": a.kind, "element": a.element,
        "grasp": None if a.grasp is None else a.grasp.tolist(),
        "trajectories": [_traj_to_dict(t) for t in a.trajectories],
    }


def _action_from_dict(d: dict) -> Action:
    grasp = d.get("grasp")
    return Action(d["kind"], d["element"], [_traj_from_dict(t) for t in d["trajectories"]],
                  None if grasp is None else np.array(grasp, dtype=float))


def plan_to_dict(plan: ConstructionPlan, structure: BarStructure, config: Config) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "structure_hash": structure.source_hash,
        "mode": plan.mode,
        "sequence": [int(e) for e in plan.sequence],
        "seed": config.seed,
        "config": config.to_dict(),
        "home": plan.home.tolist(),
        "steps": [{"element": int(s.element), "actions": [_action_to_dict(a) for a in s.actions]}
                  for s in plan.steps],
        "final_transit": _action_to_dict(plan.final_transit),
        "meta": _plain(plan.meta),
    }


def plan_from_dict(d: dict, structure: BarStructure | None = None) -> tuple[ConstructionPlan, Config]:
    try:
        if int(d["format_version"]) != FORMAT_VERSION:
            raise PlanFileError(f"unsupported plan format_version {d['format_version']}")
        if structure is not None and d["structure_hash"] != structure.source_hash:
            raise PlanFileError("plan was made for a different structure (hash mismatch)")
        steps = []
        built = PartialStructure()
        for s in d["steps"]:
            steps.append(ElementStep(int(s["element"]), built, [_action_from_dict(a) for a in s["actions"]]))
            built = built.add(int(s["element"]))
        plan = ConstructionPlan(d["mode"], steps, _action_from_dict(d["final_transit"]),
                                np.array(d["home"], dtype=float), dict(d.get("meta", {})))
        if [int(e) for e in d["sequence"]] != plan.sequence:
            raise PlanFileError("sequence does not match the steps")
        return plan, Config.from_dict(d.get("config", {}))
    except PlanFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise PlanFileError(f"malformed plan file: {exc!r}") from exc


def dumps_plan(plan: ConstructionPlan, structure: BarStructure, config: Config) -> str:
    return json.dumps(plan_to_dict(plan, structure, config), sort_keys=True, separators=(",", ":")) + "\n"


def write_plan(path, plan: ConstructionPlan, structure: BarStructure, config: Config) -> None:
    Path(path).write_text(dumps_plan(plan, structure, config))


def read_plan(path, structure: BarStructure | None = None) -> tuple[ConstructionPlan, Config]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PlanFileError(f"cannot read plan {path}: {exc}") from exc
    return plan_from_dict(doc, structure)


def stats_document(stats, structure: BarStructure, config: Config, outcome: str, tolerance: float,
                   extra: dict | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "structure": structure.name,
        "structure_hash": structure.source_hash,
        "elements": structure.num_bars,
        "mode": structure.mode,
        "outcome": outcome,
        "tolerance": tolerance,
        "seed": config.seed,
        "stats": stats.to_dict() if stats is not None else None,
    }
    if extra:
        doc.update(_plain(extra))
    return doc


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(_plain(doc), indent=1, sort_keys=True) + "\n")


DEFORMATION_COLUMNS = ("step", "element", "max_translation_norm", "argmax_node")


def write_deformation_csv(fh, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DEFORMATION_COLUMNS)
    for r in rows:
        w.writerow([r["step"], r["element"], repr(float(r["max_translation_norm"])), r["argmax_node"]])


def read_deformation_csv(fh) -> list[dict]:
    out = []
    for r in csv.DictReader(fh):
        out.append({"step": int(r["step"]), "element": int(r["element"]),
                    "max_translation_norm": float(r["max_translation_norm"]), "argmax_node": int(r["argmax_node"])})
    return out
