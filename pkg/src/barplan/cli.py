"""Command-line entry point: plan, simulate, validate, stats, fixtures."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from barplan import io
from barplan.collision import CollisionWorld, dump_scene
from barplan.fixtures import FIXTURES, fixture_path
from barplan.kinematics import load_robot
from barplan.model import InputError, PartialStructure, grounded_connected, load_structure
from barplan.search import SearchFailure, SearchTimeout, backward_plan, validate_plan
from barplan.skeleton import SpliceError
from barplan.stiffness import SingularSystemError, deformation

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_TIMEOUT = 2
EXIT_INPUT = 3

log = logging.getLogger("barplan")


def _structure(arg: str):
    p = Path(arg)
    if not p.exists() and arg in FIXTURES:
        p = fixture_path(arg)
    return load_structure(p)


def _config(args) -> io.Config:
    cfg = io.Config.load(args.config) if getattr(args, "config", None) else io.Config()
    kw = {}
    for name in ("tolerance", "heuristic", "seed", "direction", "max_time", "max_expansions", "clearance"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return cfg.replace(**kw) if kw else cfg


def _world(structure, cfg: io.Config) -> CollisionWorld:
    return CollisionWorld.from_scene(structure, clearance=cfg.clearance, contact_tol=cfg.contact_tol)


def _emit(doc: dict, path) -> None:
    if path:
        io.write_json(path, doc)
    else:
        print(json.dumps(doc, indent=1, sort_keys=True))


def cmd_plan(args) -> int:
    structure = _structure(args.structure)
    robot = load_robot(args.robot)
    cfg = _config(args)
    tol = cfg.resolve_tolerance(structure)
    world = _world(structure, cfg)
    outcome, code, plan, stats, extra = "plan", EXIT_OK, None, None, {}
    try:
        res = backward_plan(structure, robot, world, tol, cfg.heuristic, cfg.seed, cfg.motion,
                            max_time=cfg.max_time, max_expansions=cfg.max_expansions, direction=cfg.direction)
        plan, stats = res.plan, res.stats
        if not res.report.ok:
            outcome, code = "invalid", EXIT_INFEASIBLE
            extra["violations"] = res.report.to_dict()["violations"]
    except SearchTimeout as exc:
        outcome, code, stats = "timeout", EXIT_TIMEOUT, exc.stats
        extra["deepest"] = exc.deepest
        print(f"timeout: {exc}", file=sys.stderr)
    except SearchFailure as exc:
        outcome, code, stats = "infeasible", EXIT_INFEASIBLE, exc.stats
        extra["deepest"] = exc.deepest
        print(f"infeasible under the configured candidates and budgets: {exc}", file=sys.stderr)
    except SpliceError as exc:
        outcome, code = "splice-failure", EXIT_INFEASIBLE
        extra["error"] = str(exc)
        print(f"plan assembly failed: {exc}", file=sys.stderr)
    if plan is not None:
        extra["sequence"] = plan.sequence
        if code == EXIT_OK:
            io.write_plan(args.output, plan, structure, cfg)
            print(f"wrote {args.output}: {len(plan.sequence)} elements, sequence {plan.sequence}")
    if args.stats:
        extra["heuristic"] = cfg.heuristic
        extra["direction"] = cfg.direction
        io.write_json(args.stats, io.stats_document(stats, structure, cfg, outcome, tol, extra))
    if args.scene and plan is not None:
        dump_scene(args.scene, _scene_records(world, plan))
    return code


def _scene_records(world: CollisionWorld, plan):
    yield from world.scene_records(world.structure.full)
    for i, step in enumerate(plan.steps):
        for a in step.actions:
            for t in a.trajectories:
                yield {"type": "trajectory", "step": i, "element": step.element, "action": a.kind, "kind": t.kind,
                       "attached": None if t.attached is None else int(t.attached[0]),
                       "waypoints": t.waypoints.tolist()}
    for t in plan.final_transit.trajectories:
        yield {"type": "trajectory", "step": len(plan.steps), "element": None, "action": "transit",
               "kind": t.kind, "attached": None, "waypoints": t.waypoints.tolist()}


def deformation_history(structure, sequence) -> list[dict]:
    rows = []
    built = PartialStructure()
    for i, e in enumerate(sequence):
        built = built.add(e)
        if not grounded_connected(structure, built):
            raise InputError(f"step {i}: element {e} is not connected to grounded structure")
        res = deformation(structure, built)
        rows.append({"step": i, "element": e, "max_translation_norm": res.max_translation_norm,
                     "argmax_node": res.argmax_node})
    return rows


def cmd_simulate(args) -> int:
    structure = _structure(args.structure)
    plan, _ = io.read_plan(args.plan, structure)
    try:
        rows = deformation_history(structure, plan.sequence)
    except SingularSystemError as exc:
        raise InputError(f"cannot analyse plan prefix: {exc}") from exc
    if args.output:
        with open(args.output, "w", newline="") as fh:
            io.write_deformation_csv(fh, rows)
    else:
        io.write_deformation_csv(sys.stdout, rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    structure = _structure(args.structure)
    plan, plan_cfg = io.read_plan(args.plan, structure)
    cfg = _config(args) if (args.config or args.tolerance) else plan_cfg
    robot = load_robot(args.robot)
    tol = cfg.resolve_tolerance(structure)
    report = validate_plan(structure, robot, _world(structure, cfg), tol, plan, cfg.motion.max_joint_step)
    doc = report.to_dict()
    doc["tolerance"] = tol
    _emit(doc, args.output)
    return EXIT_OK if report.ok else EXIT_INFEASIBLE


STAT_COLUMNS = ("structure", "heuristic", "direction", "seed", "outcome", "states_expanded", "dead_ends",
                "backtracks", "stiffness", "geometric", "wall_time")


def stats_rows(docs: list[dict]) -> list[dict]:
    rows = []
    for d in docs:
        if d.get("format_version") != 1 or "stats" not in d:
            raise InputError("not a stats file (format_version 1)")
        s = d["stats"] or {}
        cc = s.get("constraint_checks", {})
        rows.append({
            "structure": d.get("structure", ""), "heuristic": d.get("heuristic", s.get("heuristic", "")),
            "direction": d.get("direction", s.get("direction", "")), "seed": d.get("seed"),
            "outcome": d.get("outcome"), "states_expanded": s.get("states_expanded"),
            "dead_ends": s.get("dead_ends"), "backtracks": s.get("backtracks"),
            "stiffness": cc.get("stiffness"), "geometric": cc.get("geometric"),
            "wall_time": round(sum(s.get("wall_time", {}).values()), 3),
        })
    return rows


def format_table(rows: list[dict]) -> str:
    cells = [list(STAT_COLUMNS)] + [[str(r[c]) for c in STAT_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(STAT_COLUMNS))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells)


def cmd_stats(args) -> int:
    docs = []
    for p in args.files:
        try:
            docs.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read {p}: {exc}") from exc
    rows = stats_rows(docs)
    print(format_table(rows))
    if args.json:
        io.write_json(args.json, {"format_version": 1, "rows": rows})
    return EXIT_OK


def cmd_fixtures(args) -> int:
    for name in FIXTURES:
        print(f"{name}\t{fixture_path(name)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="barplan", description="Construction sequence and motion planning for bar structures.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, robot=True):
        sp.add_argument("structure", help="structure JSON file or bundled fixture name")
        if robot:
            sp.add_argument("--robot", help="robot JSON file (default: bundled 6-axis arm)")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--tolerance", type=float, help="deflection tolerance in metres")

    sp = sub.add_parser("plan", help="search for a construction plan")
    common(sp)
    sp.add_argument("-o", "--output", default="plan.json")
    sp.add_argument("--stats", help="write search statistics JSON here")
    sp.add_argument("--scene", help="write a JSON-lines scene dump here")
    sp.add_argument("--heuristic", choices=["stiff-plan", "euclidean-dist"])
    sp.add_argument("--direction", choices=["backward", "forward"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--clearance", type=float)
    sp.add_argument("--max-time", type=float, dest="max_time")
    sp.add_argument("--max-expansions", type=int, dest="max_expansions")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="deformation history of a plan as CSV")
    sp.add_argument("structure")
    sp.add_argument("plan")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="replay a plan and report violations")
    common(sp)
    sp.add_argument("plan")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("stats", help="compare search statistics files")
    sp.add_argument("files", nargs="+")
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("fixtures", help="list bundled example structures")
    sp.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
