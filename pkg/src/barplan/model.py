"""Bar structures, partial structures and connectivity bookkeeping."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

FORMAT_VERSION = 1
GROUND_EPSILON = 1e-6

EXTRUSION = "extrusion"
ASSEMBLY = "assembly"
MODES = (EXTRUSION, ASSEMBLY)

EXTRUDED_BAR = "extruded-bar"
ASSEMBLED_BAR = "assembled-bar"
CONNECTOR = "connector"
KINDS = (EXTRUDED_BAR, ASSEMBLED_BAR, CONNECTOR)


class InputError(Exception):
    """Bad user input (structure, robot or plan file)."""


class StructureParseError(InputError):
    pass


class StructureValidationError(InputError):
    pass


@dataclass(frozen=True)
class Section:
    area: float
    Iy: float
    Iz: float
    J: float

    @classmethod
    def solid_circle(cls, radius: float) -> "Section":
        I = math.pi * radius**4 / 4
        return cls(math.pi * radius**2, I, I, 2 * I)

    @classmethod
    def tube(cls, outer_radius: float, wall: float) -> "Section":
        ri = outer_radius - wall
        I = math.pi * (outer_radius**4 - ri**4) / 4
        return cls(math.pi * (outer_radius**2 - ri**2), I, I, 2 * I)


@dataclass(frozen=True)
class Material:
    name: str
    youngs_modulus: float
    shear_modulus: float
    density: float
    section: Section | None = None  # None: solid circle from the element radius

    def __post_init__(self):
        vals = [self.youngs_modulus, self.shear_modulus, self.density]
        if self.section is not None:
            vals += [self.section.area, self.section.Iy, self.section.Iz, self.section.J]
        if not all(v > 0 for v in vals):
            raise StructureValidationError(f"material {self.name!r}: all properties must be positive")


# PVC-like; Poisson ratio 0.38
DEFAULT_MATERIAL = Material("default-pvc", 3.0e9, 3.0e9 / (2 * 1.38), 1400.0)


@dataclass(frozen=True)
class Node:
    id: int
    position: np.ndarray
    grounded: bool = False
    # per-DOF support flags (ux, uy, uz, rx, ry, rz); all six when grounded
    fixity: tuple = (False,) * 6

    @property
    def supported(self) -> bool:
        return any(self.fixity)


@dataclass(frozen=True)
class BarElement:
    id: int
    end_a: int
    end_b: int
    radius: float
    kind: str = EXTRUDED_BAR
    material: Material = DEFAULT_MATERIAL
    bars: tuple = ()  # parent bars, connectors only

    @property
    def is_connector(self) -> bool:
        return self.kind == CONNECTOR

    @property
    def ends(self) -> tuple[int, int]:
        return (self.end_a, self.end_b)

    def section(self) -> Section:
        return self.material.section or Section.solid_circle(self.radius)


@dataclass(frozen=True)
class PartialStructure:
    """Set of buildable element ids, stored as an int bit set."""

    bits: int = 0

    @classmethod
    def of(cls, ids: Iterable[int]) -> "PartialStructure":
        b = 0
        for i in ids:
            b |= 1 << i
        return cls(b)

    def __contains__(self, e: int) -> bool:
        return bool(self.bits >> e & 1)

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __iter__(self) -> Iterator[int]:
        b, i = self.bits, 0
        while b:
            if b & 1:
                yield i
            b >>= 1
            i += 1

    def ids(self) -> list[int]:
        return list(self)

    def add(self, e: int) -> "PartialStructure":
        return PartialStructure(self.bits | (1 << e))

    def remove(self, e: int) -> "PartialStructure":
        return PartialStructure(self.bits & ~(1 << e))

    def issubset(self, other: "PartialStructure") -> bool:
        return self.bits & ~other.bits == 0

    def __repr__(self):
        return f"PartialStructure({self.ids()})"


@dataclass
class BarStructure:
    nodes: list[Node]
    elements: list[BarElement]
    mode: str = EXTRUSION
    name: str = ""
    ground_epsilon: float = GROUND_EPSILON
    scene: dict = field(default_factory=dict)
    source_hash: str = ""
    tolerance: float | None = None   # suggested deflection limit (m), if the file states one

    def __post_init__(self):
        self._validate_basic()
        self.adjacency = self._node_adjacency()
        self.bar_ids = [e.id for e in self.elements if not e.is_connector]
        self.connector_ids = [e.id for e in self.elements if e.is_connector]
        self.full = PartialStructure.of(self.bar_ids)
        self.bar_neighbors = self._bar_neighbors()
        self.positions = np.array([n.position for n in self.nodes], dtype=float)
        self._validate_topology()

    # -- validation -----------------------------------------------------
    def _validate_basic(self):
        if self.mode not in MODES:
            raise StructureValidationError(f"unknown mode {self.mode!r}")
        if [n.id for n in self.nodes] != list(range(len(self.nodes))):
            raise StructureValidationError("node ids must be dense 0..n-1 in order")
        if [e.id for e in self.elements] != list(range(len(self.elements))):
            raise StructureValidationError("element ids must be dense 0..m-1 in order")
        if not self.elements:
            raise StructureValidationError("structure has no elements")
        for e in self.elements:
            if e.kind not in KINDS:
                raise StructureValidationError(f"element {e.id}: unknown kind {e.kind!r}")
            if e.end_a == e.end_b:
                raise StructureValidationError(f"element {e.id}: identical end nodes")
            for n in e.ends:
                if not 0 <= n < len(self.nodes):
                    raise StructureValidationError(f"element {e.id}: unknown node {n}")
            if self.length(e.id) <= 0:
                raise StructureValidationError(f"element {e.id}: zero length")
            if e.radius <= 0:
                raise StructureValidationError(f"element {e.id}: radius must be positive")
            if e.is_connector and self.mode != ASSEMBLY:
                raise StructureValidationError(f"element {e.id}: connectors need assembly mode")
        for e in self.elements:
            if e.is_connector:
                if len(e.bars) != 2 or any(self.elements[b].is_connector for b in e.bars):
                    raise StructureValidationError(f"connector {e.id}: needs two parent bars")

    def _validate_topology(self):
        if not any(n.supported for n in self.nodes):
            raise StructureValidationError("no grounded node")
        if not grounded_connected(self, self.full):
            raise StructureValidationError("design is not a single grounded connected component")

    # -- derived data ---------------------------------------------------
    def _node_adjacency(self) -> dict[int, frozenset]:
        by_node: dict[int, set] = {}
        for e in self.elements:
            for n in e.ends:
                by_node.setdefault(n, set()).add(e.id)
        adj = {e.id: set() for e in self.elements}
        for ids in by_node.values():
            for i in ids:
                adj[i] |= ids - {i}
        return {k: frozenset(v) for k, v in adj.items()}

    def _bar_neighbors(self) -> dict[int, frozenset]:
        out = {b: set() for b in self.bar_ids}
        for b in self.bar_ids:
            for o in self.adjacency[b]:
                if self.elements[o].is_connector:
                    out[b] |= set(self.elements[o].bars) - {b}
                else:
                    out[b].add(o)
        return {k: frozenset(v) for k, v in out.items()}

    # -- queries --------------------------------------------------------
    @property
    def num_bars(self) -> int:
        return len(self.bar_ids)

    def length(self, eid: int) -> float:
        e = self.elements[eid]
        return float(np.linalg.norm(self.nodes[e.end_b].position - self.nodes[e.end_a].position))

    def endpoints(self, eid: int) -> tuple[np.ndarray, np.ndarray]:
        e = self.elements[eid]
        return self.nodes[e.end_a].position, self.nodes[e.end_b].position

    def midpoint(self, eid: int) -> np.ndarray:
        a, b = self.endpoints(eid)
        return (a + b) / 2

    def closure(self, partial: PartialStructure) -> list[int]:
        """Included bars plus every connector whose two parent bars are included."""
        out = [i for i in partial]
        out += [c for c in self.connector_ids if all(b in partial for b in self.elements[c].bars)]
        return sorted(out)

    def grounded_node(self, nid: int) -> bool:
        return self.nodes[nid].supported


def grounded_connected(structure: BarStructure, partial: PartialStructure) -> bool:
    """True iff every element of ``partial`` reaches a supported node through ``partial``."""
    elems = structure.closure(partial)
    if not elems:
        return True
    parent: dict[int, int] = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for eid in elems:
        e = structure.elements[eid]
        ra, rb = find(e.end_a), find(e.end_b)
        if ra != rb:
            parent[ra] = rb
    grounded_roots = {find(n) for n in parent if structure.nodes[n].supported}
    return all(find(structure.elements[eid].end_a) in grounded_roots for eid in elems)


def removal_candidates(structure: BarStructure, partial: PartialStructure) -> list[int]:
    """Elements whose removal keeps the rest grounded-connected, ascending id."""
    return [e for e in partial if grounded_connected(structure, partial.remove(e))]


def addition_candidates(structure: BarStructure, built: PartialStructure) -> list[int]:
    """Unbuilt bars that keep the built set grounded-connected when added, ascending id."""
    return [
        e for e in structure.bar_ids
        if e not in built and grounded_connected(structure, built.add(e))
    ]


def components(structure: BarStructure, partial: PartialStructure) -> list[frozenset]:
    """Connected components of the included elements (sharing nodes), as sets of bar ids."""
    elems = structure.closure(partial)
    seen: set[int] = set()
    comps = []
    for start in elems:
        if start in seen:
            continue
        stack, comp = [start], set()
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            comp.add(x)
            stack.extend(o for o in structure.adjacency[x] if o in elems and o not in seen)
        comps.append(frozenset(c for c in comp if not structure.elements[c].is_connector))
    return [c for c in comps if c]


# -- file I/O ---------------------------------------------------------------

def _parse_material(name: str, d: dict) -> Material:
    section = None
    sec = d.get("section")
    if sec is not None:
        shape = sec.get("shape", "explicit")
        if shape == "tube":
            section = Section.tube(float(sec["outer_radius"]), float(sec["wall"]))
        elif shape == "solid":
            section = Section.solid_circle(float(sec["radius"]))
        else:
            section = Section(float(sec["area"]), float(sec["Iy"]), float(sec["Iz"]), float(sec["J"]))
    E = float(d["youngs_modulus"])
    G = float(d.get("shear_modulus", E / (2 * (1 + float(d.get("poisson_ratio", 0.38))))))
    return Material(name, E, G, float(d["density"]), section)


def structure_from_dict(doc: dict) -> BarStructure:
    try:
        version = int(doc.get("format_version", FORMAT_VERSION))
        if version != FORMAT_VERSION:
            raise StructureParseError(f"unsupported format_version {version}")
        mode = doc["mode"]
        eps = float(doc.get("ground_epsilon", GROUND_EPSILON))
        materials = {k: _parse_material(k, v) for k, v in doc.get("materials", {}).items()}
        nodes = []
        for nd in doc["nodes"]:
            xyz = np.array(nd["xyz"], dtype=float)
            if xyz.shape != (3,) or not np.all(np.isfinite(xyz)):
                raise StructureParseError(f"node {nd.get('id')}: bad xyz")
            grounded = nd.get("grounded")
            if grounded is None:
                grounded = bool(xyz[2] <= eps)
            if "fixity" in nd:
                fixity = tuple(bool(v) for v in nd["fixity"])
                if len(fixity) != 6:
                    raise StructureParseError(f"node {nd['id']}: fixity needs 6 flags")
            else:
                fixity = (bool(grounded),) * 6
            nodes.append(Node(int(nd["id"]), xyz, bool(grounded), fixity))
        nodes.sort(key=lambda n: n.id)
        default_kind = EXTRUDED_BAR if mode == EXTRUSION else ASSEMBLED_BAR
        elements = []
        for ed in doc["elements"]:
            ref = ed.get("material_ref")
            if ref is not None and ref not in materials:
                raise StructureParseError(f"element {ed.get('id')}: unknown material {ref!r}")
            a, b = ed["ends"]
            elements.append(BarElement(
                int(ed["id"]), int(a), int(b), float(ed["radius"]),
                ed.get("kind", default_kind),
                materials[ref] if ref is not None else DEFAULT_MATERIAL,
                tuple(int(x) for x in ed.get("bars", ())),
            ))
        elements.sort(key=lambda e: e.id)
        tol = doc.get("tolerance")
        tol = float(tol) if tol is not None else None
        if tol is not None and not tol > 0:
            raise StructureParseError("tolerance must be positive")
    except StructureParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise StructureParseError(f"malformed structure document: {exc!r}") from exc
    digest = hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
    return BarStructure(nodes, elements, mode, doc.get("name", ""), eps, doc.get("scene", {}), digest, tol)


def load_structure(path) -> BarStructure:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise StructureParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StructureParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise StructureParseError(f"{path}: top level must be an object")
    return structure_from_dict(doc)
