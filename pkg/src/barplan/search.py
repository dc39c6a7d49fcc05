"""Backward state-space search over partial structures, plus oracles and plan validation."""

from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from barplan.collision import Attachment, CollisionWorld, resample
from barplan.kinematics import RobotModel
from barplan.model import (
    BarStructure, PartialStructure, addition_candidates, grounded_connected, removal_candidates,
)
from barplan.motion import (
    ATTACHED_KINDS, EXTRUDE, EXTRUDE_APPROACH, EXTRUDE_RETREAT, PICK_RETREAT, PLACE_RETREAT, MotionConfig,
)
from barplan.skeleton import (
    ConstructionPlan, ElementStep, GeometricInfeasibility, PlanSkeleton, SpliceError, evaluate_element, splice,
)
from barplan.stiffness import NoSequenceFound, StiffnessChecker, greedy_stiffness_sequence

log = logging.getLogger(__name__)

EUCLIDEAN = "euclidean-dist"
STIFFPLAN = "stiff-plan"
BACKWARD = "backward"
FORWARD = "forward"
BRUTEFORCE_LIMIT = 8


class SearchFailure(RuntimeError):
    """Search space exhausted under the configured candidate sets and budgets."""

    def __init__(self, msg, stats=None, deepest=None):
        super().__init__(msg)
        self.stats = stats
        self.deepest = deepest or []


class SearchTimeout(SearchFailure):
    pass


@dataclass
class Heuristic:
    name: str
    values: dict[int, float]

    def __call__(self, e: int) -> float:
        return self.values[e]


@dataclass
class SearchStats:
    direction: str = BACKWARD
    heuristic: str = ""
    states_expanded: int = 0
    queue_pops: int = 0
    stiffness_checks: int = 0
    geometric_checks: int = 0
    dead_ends: int = 0
    backtracks: int = 0
    reexpansions: int = 0
    wall_time: dict = field(default_factory=dict)

    def to_dict(self, timings: bool = True) -> dict:
        d = asdict(self)
        d["constraint_checks"] = {"stiffness": d.pop("stiffness_checks"), "geometric": d.pop("geometric_checks")}
        if not timings:
            d.pop("wall_time")
        return d


def heuristic_euclidean(structure: BarStructure) -> Heuristic:
    """Lower value = farther from the ground = removed earlier."""
    return Heuristic(EUCLIDEAN, {e: -abs(float(structure.midpoint(e)[2])) for e in structure.bar_ids})


def heuristic_stiffplan(structure: BarStructure, tolerance: float, checker: StiffnessChecker | None = None) -> Heuristic:
    """h(S[i]) = -i for a stiffness-only greedy forward sequence S."""
    try:
        seq = greedy_stiffness_sequence(structure, tolerance, checker)
    except NoSequenceFound:
        log.warning("stiff-plan precomputation failed; falling back to %s", EUCLIDEAN)
        return heuristic_euclidean(structure)
    h = Heuristic(STIFFPLAN, {e: -float(i) for i, e in enumerate(seq)})
    h.sequence = seq
    return h


def make_heuristic(name: str, structure: BarStructure, tolerance: float, checker=None) -> Heuristic:
    if name == EUCLIDEAN:
        return heuristic_euclidean(structure)
    if name == STIFFPLAN:
        return heuristic_stiffplan(structure, tolerance, checker)
    raise ValueError(f"unknown heuristic {name!r}")


def derived_rng(seed: int, partial: PartialStructure, element: int) -> np.random.Generator:
    """Independent stream per (partial, element) so geometric verdicts do not depend on visit order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(element), int(partial.bits)]))


class GeometryOracle:
    """Deterministic, memoized ``evaluate_element`` for one world."""

    def __init__(self, world: CollisionWorld, robot: RobotModel, seed: int, cfg: MotionConfig = MotionConfig()):
        self.world = world
        self.robot = robot
        self.seed = seed
        self.cfg = cfg
        self.mode = world.structure.mode
        self._memo: dict[tuple, ElementStep | None] = {}
        self.evaluations = 0

    def __call__(self, partial: PartialStructure, element: int) -> ElementStep | None:
        key = (partial.bits, element)
        if key in self._memo:
            return self._memo[key]
        self.evaluations += 1
        try:
            step = evaluate_element(self.mode, self.world, self.robot, partial, element, self.robot.home,
                                    derived_rng(self.seed, partial, element), self.cfg)
        except GeometricInfeasibility as exc:
            log.debug("geometric check failed: %s", exc)
            step = None
        self._memo[key] = step
        return step


class PriorityQueue:
    """Min-heap on (key..., element) with an optional audit of the pop discipline."""

    def __init__(self, audit: bool = False):
        self._heap = []
        self._count = itertools.count()
        self.audit = audit
        self.audit_violations = 0

    def push(self, key: tuple, item) -> None:
        heapq.heappush(self._heap, (key, next(self._count), item))

    def pop(self):
        if self.audit:
            smallest = min(k for k, _, _ in self._heap)
        key, _, item = heapq.heappop(self._heap)
        if self.audit and key != smallest:
            self.audit_violations += 1
        return key, item

    def __len__(self):
        return len(self._heap)


@dataclass
class SearchResult:
    sequence: list[int]
    steps: list[ElementStep] | None
    stats: SearchStats


def best_first(structure: BarStructure, checker: StiffnessChecker, heuristic: Heuristic,
               oracle: GeometryOracle | None = None, direction: str = BACKWARD,
               max_time: float | None = None, max_expansions: int | None = None,
               audit: bool = False) -> SearchResult:
    """Greedy best-first search over partial structures.

    Queue entries are transitions keyed by (elements left to go, h(e), e):
    the number of remaining elements after a removal when going backward,
    the number still unbuilt after an addition when going forward. A
    transition is admitted when the resulting partial passes the stiffness
    check and the element is constructible on the smaller of the two
    partials. Successful partials are never expanded twice.
    """
    t0 = time.perf_counter()
    stats = SearchStats(direction=direction, heuristic=heuristic.name)
    n = structure.num_bars
    full = structure.full
    root = full if direction == BACKWARD else PartialStructure()
    goal_len = 0 if direction == BACKWARD else n

    if direction == BACKWARD and not checker(full).ok:
        stats.stiffness_checks = checker.evaluations
        raise SearchFailure("full structure violates the deflection tolerance", stats)

    def successors(P):
        if direction == BACKWARD:
            return [(P.remove(e), e) for e in removal_candidates(structure, P)]
        return [(P.add(e), e) for e in addition_candidates(structure, P)]

    def key_of(S, e):
        left = len(S) if direction == BACKWARD else n - len(S)
        return (left, heuristic(e), e)

    queue = PriorityQueue(audit)
    parent: dict[int, tuple] = {root.bits: (None, None, None)}
    expanded: set[int] = set()
    pending: dict[int, int] = {}
    admitted_children: dict[int, int] = {}
    deepest = root
    last_expanded = None

    def expand(P):
        nonlocal last_expanded
        if P.bits in expanded:
            stats.reexpansions += 1
            return
        expanded.add(P.bits)
        stats.states_expanded += 1
        last_expanded = P.bits
        succ = successors(P)
        pending[P.bits] = len(succ)
        admitted_children[P.bits] = 0
        if not succ:
            stats.dead_ends += 1
        for S, e in succ:
            queue.push(key_of(S, e), (P, S, e))

    def finish():
        stats.wall_time["search"] = time.perf_counter() - t0
        stats.stiffness_checks = checker.evaluations
        stats.geometric_checks = oracle.evaluations if oracle else 0

    expand(root)
    goal = root if len(root) == goal_len else None
    while goal is None:
        if not queue:
            finish()
            raise SearchFailure("search space exhausted", stats, _trace(parent, deepest))
        if max_time is not None and time.perf_counter() - t0 > max_time:
            finish()
            raise SearchTimeout("search budget exceeded", stats, _trace(parent, deepest))
        if max_expansions is not None and stats.states_expanded >= max_expansions:
            finish()
            raise SearchTimeout("expansion budget exceeded", stats, _trace(parent, deepest))
        _, (P, S, e) = queue.pop()
        stats.queue_pops += 1
        if P.bits != last_expanded:
            stats.backtracks += 1
            last_expanded = P.bits
        pending[P.bits] -= 1
        ok = False
        step = None
        if S.bits not in parent:
            if checker(S).ok:
                small = S if direction == BACKWARD else P
                if oracle is None:
                    ok = True
                else:
                    step = oracle(small, e)
                    ok = step is not None
        if ok:
            parent[S.bits] = (P, e, step)
            admitted_children[P.bits] += 1
            if abs(len(S) - goal_len) < abs(len(deepest) - goal_len):
                deepest = S
            if len(S) == goal_len:
                goal = S
                break
            expand(S)
        if pending[P.bits] == 0 and admitted_children[P.bits] == 0:
            stats.dead_ends += 1

    finish()
    order, steps = [], []
    cur = goal
    while parent[cur.bits][0] is not None:
        P, e, step = parent[cur.bits]
        order.append(e)
        steps.append(step)
        cur = P
    if direction == FORWARD:
        order.reverse()
        steps.reverse()
    return SearchResult(order, steps if oracle is not None else None, stats)


def _trace(parent, state) -> list[int]:
    out = []
    cur = state
    while cur is not None and parent.get(cur.bits, (None,))[0] is not None:
        P, e, _ = parent[cur.bits]
        out.append(e)
        cur = P
    return out


@dataclass
class PlanResult:
    plan: ConstructionPlan
    stats: SearchStats
    report: "ValidationReport"


def backward_plan(structure: BarStructure, robot: RobotModel, world: CollisionWorld, tolerance: float,
                  heuristic: Heuristic | str = STIFFPLAN, seed: int = 0, cfg: MotionConfig = MotionConfig(),
                  max_time: float | None = None, max_expansions: int | None = None, audit: bool = False,
                  direction: str = BACKWARD) -> PlanResult:
    """Search, splice into a full plan and forward-validate it."""
    t0 = time.perf_counter()
    checker = StiffnessChecker(structure, tolerance)
    if isinstance(heuristic, str):
        heuristic = make_heuristic(heuristic, structure, tolerance, checker)
    t_h = time.perf_counter() - t0
    oracle = GeometryOracle(world, robot, seed, cfg)
    res = best_first(structure, checker, heuristic, oracle, direction, max_time, max_expansions, audit)
    res.stats.wall_time["heuristic"] = t_h
    t1 = time.perf_counter()
    plan = splice(res.steps, robot.home, world, robot, np.random.default_rng([seed, 1]), cfg)
    res.stats.wall_time["splice"] = time.perf_counter() - t1
    plan.meta.update({"heuristic": heuristic.name, "seed": seed, "direction": direction})
    t2 = time.perf_counter()
    report = validate_plan(structure, robot, world, tolerance, plan, cfg.max_joint_step)
    res.stats.wall_time["validate"] = time.perf_counter() - t2
    return PlanResult(plan, res.stats, report)


def forward_bruteforce(structure: BarStructure, tolerance: float, oracle: GeometryOracle | None = None,
                       first_only: bool = False, checker: StiffnessChecker | None = None) -> list[list[int]]:
    """Every valid construction sequence by depth-first enumeration (small structures only)."""
    if structure.num_bars > BRUTEFORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTEFORCE_LIMIT} elements")
    checker = checker or StiffnessChecker(structure, tolerance)
    n = structure.num_bars
    found: list[list[int]] = []

    def rec(built: PartialStructure, seq: list[int]) -> bool:
        if len(seq) == n:
            found.append(list(seq))
            return first_only
        for e in structure.bar_ids:
            if e in built:
                continue
            nxt = built.add(e)
            if not grounded_connected(structure, nxt) or not checker(nxt).ok:
                continue
            if oracle is not None and oracle(built, e) is None:
                continue
            seq.append(e)
            if rec(nxt, seq):
                return True
            seq.pop()
        return False

    rec(PartialStructure(), [])
    return found


# -- validation -------------------------------------------------------------------

@dataclass
class Violation:
    step: int
    kind: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    deflections: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, step, kind, message):
        self.violations.append(Violation(step, kind, message))

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": [asdict(v) for v in self.violations]}


def validate_plan(structure: BarStructure, robot: RobotModel | None, world: CollisionWorld | None,
                  tolerance: float, plan: ConstructionPlan, max_joint_step: float = 0.02,
                  check_step: float | None = None) -> ValidationReport:
    """Replay a plan forward and list every violated constraint with its step index.

    Waypoint spacing is held to ``max_joint_step``; collisions are sampled at
    ``check_step`` (defaults to the same value, pass a smaller one to look
    for misses between samples).
    """
    rep = ValidationReport()
    steps = (max_joint_step, check_step or max_joint_step)
    mode = structure.mode
    if plan.mode != mode:
        rep.add(-1, "mode", f"plan mode {plan.mode} != structure mode {mode}")
    if not PlanSkeleton(mode).matches(plan.action_kinds()):
        rep.add(-1, "skeleton", "action sequence does not match the plan skeleton")
    seq = plan.sequence
    seen: set[int] = set()
    for i, e in enumerate(seq):
        if e not in structure.full:
            rep.add(i, "element", f"element {e} is not a buildable element")
        if e in seen:
            rep.add(i, "monotonic", f"element {e} built twice")
        seen.add(e)
    missing = set(structure.bar_ids) - seen
    if missing:
        rep.add(len(seq), "incomplete", f"elements never built: {sorted(missing)}")

    checker = StiffnessChecker(structure, tolerance)
    built = PartialStructure()
    for i, step in enumerate(plan.steps):
        e = step.element
        if step.partial != built:
            rep.add(i, "bookkeeping", "step partial does not match the replayed prefix")
        after = built.add(e)
        if not grounded_connected(structure, after):
            rep.add(i, "connectivity", f"element {e} is not connected to grounded structure")
            rep.deflections.append(float("nan"))
        else:
            res = checker(after)
            rep.deflections.append(res.max_translation_norm)
            if not res.ok:
                rep.add(i, "stiffness", f"deflection {res.max_translation_norm:.6g} m exceeds {tolerance:.6g} m")
        if robot is not None and world is not None:
            _check_step_geometry(rep, i, step, built, structure, robot, world, steps)
        built = after

    if robot is not None and world is not None:
        trajs = [t for a in plan.actions() for t in a.trajectories]
        if trajs:
            if not np.array_equal(trajs[0].start, plan.home):
                rep.add(0, "continuity", "plan does not start at home")
            if not np.array_equal(trajs[-1].end, plan.home):
                rep.add(len(plan.steps), "continuity", "plan does not end at home")
        for k in range(len(trajs) - 1):
            if not np.array_equal(trajs[k].end, trajs[k + 1].start):
                rep.add(_step_of(plan, k), "continuity", f"trajectory {k} -> {k + 1} is discontinuous")
        final = plan.final_transit.trajectories[0]
        _check_traj(rep, len(plan.steps), final, world.query(built), robot, steps)
        if final.attached is not None:
            rep.add(len(plan.steps), "attachment", "final transit carries an attachment")
    return rep


def _step_of(plan, traj_index) -> int:
    k = 0
    for i, s in enumerate(plan.steps):
        k += len(s.trajectories())
        if traj_index < k:
            return i
    return len(plan.steps)


def _check_traj(rep, i, traj, query, robot, steps):
    max_joint_step, check_step = steps
    w = traj.waypoints
    if not all(robot.within_limits(q) for q in w):
        rep.add(i, "limits", f"{traj.kind} leaves joint limits")
    if len(w) > 1 and np.abs(np.diff(w, axis=0)).max() > max_joint_step + 1e-12:
        rep.add(i, "resolution", f"{traj.kind} waypoint spacing exceeds {max_joint_step}")
    k = query.first_collision(robot, resample(w, check_step))
    if k >= 0:
        rep.add(i, "collision", f"{traj.kind} collides at sample {k}")


def _check_step_geometry(rep, i, step, built, structure, robot, world, steps):
    e = step.element
    present = structure.closure(built)
    ignore = world.touching(e, present)
    for action in step.actions:
        if action.element != e:
            rep.add(i, "bookkeeping", f"{action.kind} bound to element {action.element}, expected {e}")
        att = Attachment.for_element(structure, e, action.grasp) if action.grasp is not None else None
        for traj in action.trajectories:
            expect_attached = traj.kind in ATTACHED_KINDS
            if expect_attached:
                if traj.attached is None or traj.attached[0] != e or action.grasp is None \
                        or not np.array_equal(traj.attached[1], action.grasp):
                    rep.add(i, "attachment", f"{traj.kind} must carry element {e} with the action grasp")
            elif traj.attached is not None:
                rep.add(i, "attachment", f"{traj.kind} must not carry an attachment")
            if traj.kind in (PLACE_RETREAT, EXTRUDE_RETREAT):
                query = world.query(built.add(e), ignore=ignore | {e})
            elif traj.kind in (EXTRUDE, EXTRUDE_APPROACH):
                query = world.query(built, ignore=ignore)
            elif expect_attached:
                query = world.query(built, held=att, ignore=ignore if traj.kind != PICK_RETREAT else ())
            else:
                query = world.query(built)
            _check_traj(rep, i, traj, query, robot, steps)
