"""Builders for the bundled example structures.

``python -m barplan.fixtures [outdir]`` regenerates the JSON files shipped in
``barplan/data/fixtures``.
"""

from __future__ import annotations

import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from barplan.model import ASSEMBLY, EXTRUSION, FORMAT_VERSION, load_structure

PVC_TUBE = {
    "youngs_modulus": 3.0e9, "poisson_ratio": 0.38, "density": 1400.0,
    "section": {"shape": "tube", "outer_radius": 0.008, "wall": 0.0015},
}
PLA = {"youngs_modulus": 3.5e9, "poisson_ratio": 0.36, "density": 1250.0}


class _Builder:
    def __init__(self, name: str, mode: str, **extra):
        self.doc = {"format_version": FORMAT_VERSION, "name": name, "mode": mode, "nodes": [], "elements": []}
        self.doc.update(extra)
        self._keys: dict[tuple, int] = {}

    def node(self, xyz, grounded=None, fixity=None) -> int:
        xyz = [round(float(v), 9) for v in xyz]
        key = tuple(xyz)
        if key in self._keys:
            return self._keys[key]
        nid = len(self.doc["nodes"])
        nd = {"id": nid, "xyz": xyz}
        if grounded is not None:
            nd["grounded"] = grounded
        if fixity is not None:
            nd["fixity"] = list(fixity)
        self.doc["nodes"].append(nd)
        self._keys[key] = nid
        return nid

    def bar(self, a: int, b: int, radius: float, **kw) -> int:
        eid = len(self.doc["elements"])
        self.doc["elements"].append({"id": eid, "ends": [a, b], "radius": radius, **kw})
        return eid


def stack2() -> dict:
    """Two collinear vertical bars; only lower-then-upper is buildable."""
    b = _Builder("stack2", EXTRUSION)
    n0, n1, n2 = (b.node([0.5, 0.0, z]) for z in (0.0, 0.1, 0.2))
    b.bar(n0, n1, 0.004)
    b.bar(n1, n2, 0.004)
    return b.doc


def triangle() -> dict:
    """Tripod: three short grounded legs meeting at an apex."""
    b = _Builder("triangle", EXTRUSION)
    apex = b.node([0.5, 0.0, 0.09])
    for k in range(3):
        a = 2 * math.pi * k / 3
        foot = b.node([0.5 + 0.08 * math.cos(a), 0.08 * math.sin(a), 0.0])
        b.bar(foot, apex, 0.003)
    return b.doc


def floating() -> dict:
    """A bar hovering above the ground: rejected on load."""
    b = _Builder("floating", EXTRUSION)
    b.bar(b.node([0.5, 0.0, 0.1]), b.node([0.5, 0.0, 0.2]), 0.004)
    return b.doc


def tetrahedron(trim: float = 0.03) -> dict:
    """Six assembled bars, trimmed short of the vertices and joined by connectors."""
    b = _Builder("tetrahedron", ASSEMBLY, materials={"pvc": PVC_TUBE}, tolerance=0.005)
    side = 0.22
    c = np.array([0.5, 0.0, 0.0])
    base = [c + side / math.sqrt(3) * np.array([math.cos(a), math.sin(a), 0.0])
            for a in (0.0, 2 * math.pi / 3, 4 * math.pi / 3)]
    apex = c + np.array([0.0, 0.0, side * math.sqrt(2 / 3)])
    verts = base + [apex]
    ends_at: dict[int, list[tuple[int, int]]] = {i: [] for i in range(4)}
    for i in range(4):
        for j in range(i + 1, 4):
            u = (verts[j] - verts[i]) / np.linalg.norm(verts[j] - verts[i])
            pa, pb = verts[i] + trim * u, verts[j] - trim * u
            na, nb = b.node(pa), b.node(pb)
            e = b.bar(na, nb, 0.008, material_ref="pvc")
            ends_at[i].append((na, e))
            ends_at[j].append((nb, e))
    for i in range(4):
        pts = ends_at[i]
        for k in range(len(pts)):
            (na, ea), (nb, eb) = pts[k], pts[(k + 1) % len(pts)]
            b.bar(na, nb, 0.005, kind="connector", bars=[ea, eb], material_ref="pvc")
    return b.doc


def shell() -> dict:
    """Cage with a pyramid roof around a short inner post.

    Building the roof before the post leaves the post unreachable, which is
    the dead end a forward search walks into.
    """
    b = _Builder("shell", EXTRUSION, tolerance=0.01)
    r, h, cx = 0.002, 0.15, 0.5
    s = 0.08
    corners = [(cx - s, -s), (cx + s, -s), (cx + s, s), (cx - s, s)]
    feet = [b.node([x, y, 0.0]) for x, y in corners]
    tops = [b.node([x, y, h]) for x, y in corners]
    apex = b.node([cx, 0.0, h + 0.05])
    for f, t in zip(feet, tops):
        b.bar(f, t, r)
    for k in range(4):
        b.bar(tops[k], tops[(k + 1) % 4], r)
    for t in tops:
        b.bar(t, apex, r)
    b.bar(b.node([cx, 0.0, 0.0]), b.node([cx, 0.0, 0.06]), r)
    return b.doc


def pocket(gap: float = 0.004) -> dict:
    """A long bar whose design pose is boxed in on every translational way in.

    Blockers sit a few millimetres away: one above the +x end, one below the
    -x end, and two posts on either side. Every node is a support so each
    blocker stands alone.
    """
    b = _Builder("pocket", ASSEMBLY, tolerance=0.005)
    r = 0.006
    cx, z0, half = 0.5, 0.2, 0.3
    # goal bar along world y so the robot sees it broadside
    def g(xyz):
        return b.node(xyz, grounded=True)

    goal = b.bar(g([cx, -half, z0]), g([cx, half, z0]), r)
    off = 2 * r + gap
    b.bar(g([cx - 0.08, half - 0.02, z0 + off]), g([cx + 0.08, half - 0.02, z0 + off]), r)      # above +end
    b.bar(g([cx - 0.08, -half + 0.02, z0 - off]), g([cx + 0.08, -half + 0.02, z0 - off]), r)    # below -end
    for y in (-0.1, 0.1):
        for side in (-1, 1):
            b.bar(g([cx + side * off, y, z0 - 0.06]), g([cx + side * off, y, z0 + 0.06]), r)
    b.doc["goal_element"] = goal
    return b.doc


def arch(segments: int = 10, radius: float = 0.45, half_width: float = 0.05) -> dict:
    """Two semicircular rails tied by rungs and diagonals (39 bars for 10 segments)."""
    b = _Builder("arch", ASSEMBLY, materials={"pvc": PVC_TUBE}, tolerance=0.005)
    x0 = 0.5
    rails = []
    for x in (x0 - half_width, x0 + half_width):
        rails.append([b.node([x, -radius * math.cos(math.pi * i / segments),
                              radius * math.sin(math.pi * i / segments)]) for i in range(segments + 1)])
    rr = 0.008
    for rail in rails:
        for i in range(segments):
            b.bar(rail[i], rail[i + 1], rr, material_ref="pvc")
    for i in range(1, segments):
        b.bar(rails[0][i], rails[1][i], rr, material_ref="pvc")
    for i in range(segments):
        a, c = (0, 1) if i % 2 == 0 else (1, 0)
        b.bar(rails[a][i], rails[c][i + 1], rr, material_ref="pvc")
    return b.doc


def vault(mode: str, n: int = 6) -> dict:
    """Doubly curved grid shell on a square footprint, boundary supported."""
    if mode == EXTRUSION:
        span, height, r, tol, mat = 0.35, 0.12, 0.0015, 0.0015, {"pla": PLA}
    else:
        span, height, r, tol, mat = 0.55, 0.16, 0.008, 0.003, {"pvc": PVC_TUBE}
    ref = next(iter(mat))
    b = _Builder(f"vault-{mode}", mode, materials=mat, tolerance=tol)
    cx = 0.55
    ids = {}
    t = np.linspace(-1.0, 1.0, n)
    for i, u in enumerate(t):
        for j, v in enumerate(t):
            z = height * (1 - u * u) * (1 - v * v)
            ids[i, j] = b.node([cx + span / 2 * u, span / 2 * v, z if z > 1e-12 else 0.0])

    def boundary(i, j):
        return i in (0, n - 1) or j in (0, n - 1)

    for i in range(n):
        for j in range(n):
            for di, dj in ((1, 0), (0, 1)):
                k, l = i + di, j + dj
                if k < n and l < n and not (boundary(i, j) and boundary(k, l)):
                    b.bar(ids[i, j], ids[k, l], r, material_ref=ref)
    for i in range(n - 1):
        for j in range(n - 1):
            if (i + j) % 2 == 0:
                b.bar(ids[i, j], ids[i + 1, j + 1], r, material_ref=ref)
            else:
                b.bar(ids[i + 1, j], ids[i, j + 1], r, material_ref=ref)
    return b.doc


FIXTURES = {
    "stack2": stack2,
    "triangle": triangle,
    "floating": floating,
    "tetrahedron": tetrahedron,
    "shell": shell,
    "pocket": pocket,
    "arch": arch,
    "vault-extrusion": lambda: vault(EXTRUSION),
    "vault-assembly": lambda: vault(ASSEMBLY),
}


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("barplan.data") / "fixtures" / f"{name}.json"))


def load_fixture(name: str):
    return load_structure(fixture_path(name))


def random_small_structure(rng: np.random.Generator, mode: str = EXTRUSION, max_elements: int = 6) -> dict:
    """Random desk-scale structure of at most ``max_elements`` bars.

    Mixes grounded posts, stacked segments and triangulating braces over a
    small lattice in front of the robot.
    """
    b = _Builder("random", mode, tolerance=float(rng.choice([1e-7, 1e-5, 0.002, 0.01])))
    cx = 0.5
    pitch = 0.07
    r = 0.003 if mode == EXTRUSION else 0.006
    n = int(rng.integers(1, max_elements + 1))
    lattice = [(i, j) for i in range(-1, 2) for j in range(-1, 2)]
    used = []
    while len(b.doc["elements"]) < n:
        kind = rng.choice(["post", "stack", "brace", "beam"]) if used else "post"
        if kind == "post":
            i, j = lattice[int(rng.integers(len(lattice)))]
            lo = b.node([cx + i * pitch, j * pitch, 0.0])
            hi = b.node([cx + i * pitch, j * pitch, 0.08])
        elif kind == "stack":
            lo = used[int(rng.integers(len(used)))]
            p = b.doc["nodes"][lo]["xyz"]
            if p[2] > 0.2:
                continue
            hi = b.node([p[0], p[1], p[2] + 0.08])
        else:
            tops = [u for u in used if b.doc["nodes"][u]["xyz"][2] > 0]
            if kind == "brace" or len(tops) < 2:
                lo = tops[int(rng.integers(len(tops)))] if tops else used[0]
                p = b.doc["nodes"][lo]["xyz"]
                d = rng.choice([-1, 1]) * pitch
                hi = b.node([p[0] + d, p[1], 0.0]) if rng.random() < 0.5 else b.node([p[0], p[1] + d, 0.0])
            else:
                i, k = rng.choice(len(tops), size=2, replace=False)
                lo, hi = tops[int(i)], tops[int(k)]
        if lo == hi or any(set(e["ends"]) == {lo, hi} for e in b.doc["elements"]):
            continue
        b.bar(lo, hi, r)
        used += [lo, hi]
    return b.doc


def write_all(outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for name, make in FIXTURES.items():
        (outdir / f"{name}.json").write_text(json.dumps(make(), indent=1) + "\n")


if __name__ == "__main__":
    write_all(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "data" / "fixtures")
