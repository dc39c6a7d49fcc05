"""Linear-elastic 3D frame analysis under self-weight and the deflection constraint."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from barplan import kernels
from barplan.model import BarStructure, PartialStructure, addition_candidates, grounded_connected

log = logging.getLogger(__name__)

GRAVITY = 9.80665
DENSE_LIMIT = 600
MAX_CONDITION = 1e15
RESIDUAL_TOL = 1e-9


class SingularSystemError(RuntimeError):
    """The stiffness system cannot be solved (under-constrained partial)."""


class NoSequenceFound(RuntimeError):
    def __init__(self, msg, deepest: list[int]):
        super().__init__(msg)
        self.deepest = deepest


@dataclass
class FrameModel:
    node_ids: np.ndarray      # local index -> structure node id
    coords: np.ndarray
    conn: np.ndarray          # local node indices per element
    element_ids: list[int]
    props: np.ndarray         # E, G, A, Iy, Iz, J, density
    K: np.ndarray
    load: np.ndarray
    fixed_dofs: np.ndarray
    free_dofs: np.ndarray

    @property
    def total_vertical_load(self) -> float:
        return float(self.load[2::6].sum())


@dataclass
class DeformationResult:
    displacements: np.ndarray  # (n_nodes, 6), local node order
    node_ids: np.ndarray
    max_translation_norm: float
    argmax_node: int
    residual: float

    def nodal_displacements(self) -> dict[int, np.ndarray]:
        return {int(n): self.displacements[i] for i, n in enumerate(self.node_ids)}


@dataclass(frozen=True)
class StiffnessCheck:
    ok: bool
    max_translation_norm: float
    argmax_node: int = -1
    error: str | None = None


def element_props(structure: BarStructure, eids) -> np.ndarray:
    rows = []
    for eid in eids:
        e = structure.elements[eid]
        s = e.section()
        m = e.material
        rows.append((m.youngs_modulus, m.shear_modulus, s.area, s.Iy, s.Iz, s.J, m.density))
    return np.array(rows, dtype=float)


def assemble(structure: BarStructure, partial: PartialStructure, gravity: float = GRAVITY) -> FrameModel:
    if len(partial) == 0:
        raise SingularSystemError("empty partial structure")
    if not grounded_connected(structure, partial):
        raise SingularSystemError("partial structure is not grounded-connected")
    eids = structure.closure(partial)
    used = sorted({n for eid in eids for n in structure.elements[eid].ends})
    local = {n: i for i, n in enumerate(used)}
    conn = np.array([[local[structure.elements[e].end_a], local[structure.elements[e].end_b]] for e in eids],
                    dtype=np.int64)
    coords = structure.positions[used]
    props = element_props(structure, eids)
    K, f = kernels.assemble_frame(coords, conn, props, gravity)
    fixity = np.array([structure.nodes[n].fixity for n in used], dtype=bool).reshape(-1)
    dofs = np.arange(6 * len(used))
    return FrameModel(np.array(used), coords, conn, eids, props, K, f, dofs[fixity], dofs[~fixity])


def solve(model: FrameModel) -> DeformationResult:
    free = model.free_dofs
    Kff = model.K[np.ix_(free, free)]
    ff = model.load[free]
    if len(free) == 0:
        # every node is fully supported: nothing can move
        uf = np.zeros(0)
    elif len(free) <= DENSE_LIMIT:
        try:
            c, lower = scipy.linalg.cho_factor(Kff, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError("stiffness matrix not positive definite") from exc
        d = np.abs(np.diag(c))
        if d.min() <= 0 or (d.max() / d.min()) ** 2 > MAX_CONDITION:
            raise SingularSystemError("stiffness matrix is numerically singular")
        uf = scipy.linalg.cho_solve((c, lower), ff, check_finite=False)
    else:
        uf = scipy.sparse.linalg.spsolve(scipy.sparse.csc_matrix(Kff), ff)
        if not np.all(np.isfinite(uf)):
            raise SingularSystemError("sparse solve failed")
    fnorm = np.linalg.norm(ff)
    residual = float(np.linalg.norm(Kff @ uf - ff) / fnorm) if fnorm > 0 else 0.0
    if residual > RESIDUAL_TOL:
        raise SingularSystemError(f"solve residual {residual:.2e} too large")
    u = np.zeros(model.K.shape[0])
    u[free] = uf
    disp = u.reshape(-1, 6)
    norms = np.linalg.norm(disp[:, :3], axis=1)
    i = int(np.argmax(norms))
    return DeformationResult(disp, model.node_ids, float(norms[i]), int(model.node_ids[i]), residual)


def deformation(structure: BarStructure, partial: PartialStructure) -> DeformationResult:
    return solve(assemble(structure, partial))


class StiffnessChecker:
    """Memoized deflection constraint for one structure and tolerance."""

    def __init__(self, structure: BarStructure, tolerance: float):
        self.structure = structure
        self.tolerance = tolerance
        self._memo: dict[int, StiffnessCheck] = {}
        self.evaluations = 0
        self.hits = 0

    def evaluate(self, partial: PartialStructure) -> StiffnessCheck:
        """Uncached evaluation."""
        self.evaluations += 1
        if len(partial) == 0:
            return StiffnessCheck(True, 0.0)
        try:
            res = deformation(self.structure, partial)
        except SingularSystemError as exc:
            log.info("FEA failed for %s: %s", partial, exc)
            return StiffnessCheck(False, float("inf"), -1, str(exc))
        return StiffnessCheck(res.max_translation_norm <= self.tolerance, res.max_translation_norm, res.argmax_node)

    def __call__(self, partial: PartialStructure) -> StiffnessCheck:
        hit = self._memo.get(partial.bits)
        if hit is not None:
            self.hits += 1
            return hit
        out = self.evaluate(partial)
        self._memo[partial.bits] = out
        return out


def check_stiffness(structure: BarStructure, partial: PartialStructure, tolerance: float,
                    checker: StiffnessChecker | None = None) -> StiffnessCheck:
    checker = checker or StiffnessChecker(structure, tolerance)
    return checker(partial)


def greedy_stiffness_sequence(structure: BarStructure, tolerance: float,
                              checker: StiffnessChecker | None = None) -> list[int]:
    """Forward depth-first sequence ignoring the robot, least deflection first.

    Candidates at each step are the unbuilt bars that keep the built set
    grounded-connected; ties break on element id. Backtracks on dead ends.
    """
    checker = checker or StiffnessChecker(structure, tolerance)
    if not checker(structure.full).ok:
        raise NoSequenceFound("full structure violates the deflection tolerance", [])
    n = structure.num_bars
    dead: set[int] = set()
    deepest: list[int] = []
    seq: list[int] = []

    def options(built: PartialStructure):
        scored = []
        for e in addition_candidates(structure, built):
            nxt = built.add(e)
            if nxt.bits in dead:
                continue
            res = checker(nxt)
            if res.ok:
                scored.append((res.max_translation_norm, e))
        scored.sort()
        return [e for _, e in scored]

    stack = [(PartialStructure(), iter(options(PartialStructure())))]
    while stack:
        built, it = stack[-1]
        e = next(it, None)
        if e is None:
            dead.add(built.bits)
            stack.pop()
            if seq:
                seq.pop()
            continue
        seq.append(e)
        if len(seq) > len(deepest):
            deepest = list(seq)
        nxt = built.add(e)
        if len(nxt) == n:
            return seq
        stack.append((nxt, iter(options(nxt))))
    raise NoSequenceFound("no stiffness-feasible sequence", deepest)
