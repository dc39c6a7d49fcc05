import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from barplan.fixtures import load_fixture
from barplan.model import DEFAULT_MATERIAL, PartialStructure, Section, grounded_connected, structure_from_dict
from barplan.stiffness import (
    GRAVITY, NoSequenceFound, StiffnessChecker, assemble, check_stiffness, deformation, greedy_stiffness_sequence,
)
from conftest import build

R = 0.004
SEC = Section.solid_circle(R)
E, RHO = DEFAULT_MATERIAL.youngs_modulus, DEFAULT_MATERIAL.density
W = RHO * SEC.area * GRAVITY          # self-weight per metre


def beam(L, n, fix_first, fix_last=None, z=1.0):
    nodes = [{"id": i, "xyz": [L * i / n, 0.0, z], "grounded": False} for i in range(n + 1)]
    nodes[0].update(grounded=True, fixity=list(fix_first))
    if fix_last is not None:
        nodes[-1].update(grounded=True, fixity=list(fix_last))
    elems = [{"id": i, "ends": [i, i + 1], "radius": R} for i in range(n)]
    return structure_from_dict({"format_version": 1, "mode": "extrusion", "nodes": nodes, "elements": elems})


@pytest.mark.parametrize("n", [1, 3, 8])
def test_cantilever_tip_matches_closed_form(n):
    L = 0.3
    s = beam(L, n, [1] * 6)
    res = deformation(s, s.full)
    expected = W * L**4 / (8 * E * SEC.Iy)
    tip = res.nodal_displacements()[n]
    assert abs(tip[2]) == pytest.approx(expected, rel=1e-9)
    assert tip[2] < 0
    assert res.argmax_node == n


def test_simply_supported_midspan():
    L = 0.4
    s = beam(L, 2, [1, 1, 1, 1, 0, 0], [0, 1, 1, 0, 0, 0])
    mid = deformation(s, s.full).nodal_displacements()[1]
    assert abs(mid[2]) == pytest.approx(5 * W * L**4 / (384 * E * SEC.Iy), rel=1e-9)


def test_axial_self_weight_shortening():
    L = 0.25
    s = build([(0, 0, 0), (0, 0, L)], [(0, 1)], radius=R)
    top = deformation(s, s.full).nodal_displacements()[1]
    assert -top[2] == pytest.approx(RHO * GRAVITY * L**2 / (2 * E), rel=1e-9)
    assert np.abs(top[[0, 1, 3, 4, 5]]).max() < 1e-15


def test_stiffness_matrix_symmetric_and_rigid_modes():
    s = load_fixture("tetrahedron")
    m = assemble(s, s.full)
    assert np.allclose(m.K, m.K.T, atol=1e-6 * np.abs(m.K).max())
    u = np.zeros(m.K.shape[0])
    u[0::6] = 1.0  # rigid translation along x
    assert np.abs(m.K @ u).max() < 1e-6 * np.abs(m.K).max()


def test_load_vector_carries_total_weight():
    s = load_fixture("arch")
    m = assemble(s, s.full)
    weight = sum(e.material.density * e.section().area * s.length(e.id) for e in s.elements) * GRAVITY
    assert -m.total_vertical_load == pytest.approx(weight, rel=1e-12)


@given(st.floats(0.1, 10.0))
@settings(max_examples=20, deadline=None)
def test_deflection_scales_inversely_with_modulus(k):
    L = 0.3
    base = beam(L, 2, [1] * 6)
    d0 = deformation(base, base.full).max_translation_norm
    doc = {"format_version": 1, "mode": "extrusion",
           "materials": {"m": {"youngs_modulus": E * k, "shear_modulus": DEFAULT_MATERIAL.shear_modulus * k,
                               "density": RHO}},
           "nodes": [{"id": 0, "xyz": [0, 0, 1], "grounded": True}, {"id": 1, "xyz": [L / 2, 0, 1], "grounded": False},
                     {"id": 2, "xyz": [L, 0, 1], "grounded": False}],
           "elements": [{"id": i, "ends": [i, i + 1], "radius": R, "material_ref": "m"} for i in range(2)]}
    s = structure_from_dict(doc)
    assert deformation(s, s.full).max_translation_norm == pytest.approx(d0 / k, rel=1e-9)


def test_rotated_copy_has_same_deflection():
    L = 0.3
    a = beam(L, 3, [1] * 6)
    c, sn = np.cos(0.7), np.sin(0.7)
    nodes = [{"id": i, "xyz": [L * i / 3 * c, L * i / 3 * sn, 1.0], "grounded": i == 0} for i in range(4)]
    b = structure_from_dict({"format_version": 1, "mode": "extrusion", "nodes": nodes,
                             "elements": [{"id": i, "ends": [i, i + 1], "radius": R} for i in range(3)]})
    assert deformation(b, b.full).max_translation_norm == pytest.approx(
        deformation(a, a.full).max_translation_norm, rel=1e-9)


def test_checker_memoizes_and_counts(stack2):
    ch = StiffnessChecker(stack2, 1e-3)
    assert ch(stack2.full).ok
    ch(stack2.full)
    assert ch.evaluations == 1 and ch.hits == 1
    assert ch(PartialStructure()).max_translation_norm == 0.0


def test_disconnected_partial_fails_check(stack2):
    res = check_stiffness(stack2, PartialStructure.of([1]), 1.0)
    assert not res.ok and res.error


def test_tolerance_boundary():
    s = beam(0.3, 2, [1] * 6)
    d = deformation(s, s.full).max_translation_norm
    assert check_stiffness(s, s.full, d).ok
    assert not check_stiffness(s, s.full, d * (1 - 1e-9)).ok


def test_greedy_sequence_prefixes_are_stiff():
    s = load_fixture("arch")
    tol = s.tolerance
    seq = greedy_stiffness_sequence(s, tol)
    assert sorted(seq) == s.bar_ids
    built = PartialStructure()
    for e in seq:
        built = built.add(e)
        assert grounded_connected(s, built)
        assert check_stiffness(s, built, tol).ok


def test_greedy_sequence_reports_impossible_tolerance():
    s = load_fixture("arch")
    with pytest.raises(NoSequenceFound):
        greedy_stiffness_sequence(s, 1e-9)
