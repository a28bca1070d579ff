import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cutwave import geometry as geo
from cutwave.errors import MaxLevelExceeded, TangentialContact
from cutwave.mesh import CartesianMesh, build_induced_mesh, build_mesh

DOMAIN = (-2.0, -2.0, 2.0, 2.0)


@pytest.fixture(scope="module")
def tc_mesh():
    return build_induced_mesh(DOMAIN, 28, geo.two_circles(), eta0=0.05, p=2)


def _area(box):
    return (box[2] - box[0]) * (box[3] - box[1])


def test_uniform_face_counts():
    n = 5
    m = build_induced_mesh((0, 0, 1, 1), n)
    assert m.n_elements == n * n
    assert len(m.faces_of_kind("side")) == 2 * n * (n - 1)
    assert len(m.faces_of_kind("boundary")) == 4 * n
    assert not m.faces_of_kind("interface")


def test_straight_interface_needs_no_refinement():
    m = build_mesh((0, 0, 1, 1), 4, geo.line(1.0, 0.3, -0.57), eta0=0.05)
    assert m.max_level == 0


def test_hanging_face_split():
    cm = CartesianMesh((0, 0, 2, 1), 2, 1)
    cm.refine([(0, 1, 0)])
    assert cm.is_balanced()
    nbrs = cm.neighbors((0, 0, 0), 1)
    assert sorted(nbrs) == [(1, 2, 0), (1, 2, 1)]


def test_refined_neighbor_gives_two_subfaces():
    m = build_induced_mesh((0, 0, 2, 2), 2, geo.circle(1.5, 1.5, 0.2), eta0=0.5)
    for f in m.faces_of_kind("side"):
        a, b = m.elements[f.minus], m.elements[f.plus]
        assert f.length <= min(a.h, b.h) + 1e-14


def test_cut_face_partial_lengths():
    ls = geo.line(1.0, 0.0, -0.3)                # x = 0.3 crosses the bottom side at 0.3
    m = build_induced_mesh((0, 0, 2, 2), 2, ls, eta0=0.5, delta0=0.1)
    bottom = [f for f in m.faces_of_kind("boundary")
              if f.normal == (0.0, -1.0) and f.segments[0][0][0] < 0.5]
    assert len(bottom) == 1
    lengths = {sub: float(np.hypot(*(b - a))) for a, b, sub in bottom[0].segments}
    assert lengths[1] == pytest.approx(0.3, abs=1e-12)
    assert lengths[2] == pytest.approx(0.7, abs=1e-12)


def test_sliver_row_merges_downward():
    n = 5
    h = 1.0 / n
    y_cut = 2 * h + 0.02 * h                     # just above the bottom of row 2
    m = build_induced_mesh((0, 0, 1, 1), n, geo.line(0.0, 1.0, -y_cut), eta0=0.5, delta0=0.1)
    merged = [e for e in m.elements if len(e.leaves) > 1]
    assert len(merged) == n
    for e in merged:
        assert e.is_cut
        assert e.box[1] == pytest.approx(h) and e.box[3] == pytest.approx(3 * h)
        large = geo.is_large_element(e.topo, 0.1)
        assert large == {1: True, 2: True}


def test_tiles_domain_and_large(tc_mesh):
    assert sum(_area(e.box) for e in tc_mesh.elements) == pytest.approx(16.0, rel=1e-12)
    for e in tc_mesh.elements:
        assert geo.is_large_element(e.topo, 0.1) == {1: True, 2: True}
        if e.is_cut:
            assert e.topo.cut_sides[0] != e.topo.cut_sides[1]
            assert e.topo.eta <= 0.5
    assert tc_mesh.c0 <= 2.0 + 1e-12


def test_each_leaf_in_one_element(tc_mesh):
    owners = {}
    for e in tc_mesh.elements:
        for k in e.leaves:
            assert k not in owners
            owners[k] = e.id
    assert owners == tc_mesh.leaf_to_element


def test_interface_faces_one_per_cut_element(tc_mesh):
    iface = tc_mesh.faces_of_kind("interface")
    cut = [e.id for e in tc_mesh.elements if e.is_cut]
    assert sorted(f.minus for f in iface) == cut
    for f in iface:
        assert f.minus == f.plus
        assert f.h_e == pytest.approx(tc_mesh.elements[f.minus].topo.chord)


def test_side_faces_consistent(tc_mesh):
    seen = set()
    for f in tc_mesh.faces_of_kind("side"):
        key = tuple(np.round(np.concatenate([f.segments[0][0], f.segments[-1][1]]), 12))
        assert key not in seen
        seen.add(key)
        a, b = tc_mesh.elements[f.minus].box, tc_mesh.elements[f.plus].box
        if f.normal == (1.0, 0.0):
            assert a[2] == pytest.approx(b[0])
        else:
            assert f.normal == (0.0, 1.0)
            assert a[3] == pytest.approx(b[1])
    # boundary length equals the domain perimeter
    assert sum(f.length for f in tc_mesh.faces_of_kind("boundary")) == pytest.approx(16.0)


def test_eta_bound_respected(tc_mesh):
    leaf_cut = [e for e in tc_mesh.elements if e.is_cut and len(e.leaves) == 1]
    assert all(e.topo.eta <= 0.05 + 1e-12 for e in leaf_cut)


def test_coarser_eta0_never_finer():
    a = build_induced_mesh(DOMAIN, 20, geo.two_circles(), eta0=0.05, p=1)
    b = build_induced_mesh(DOMAIN, 20, geo.two_circles(), eta0=0.3, p=1)
    assert b.h_min >= a.h_min
    assert b.stats["n_leaves"] <= a.stats["n_leaves"]


def test_refinement_confined_near_interface():
    m = build_induced_mesh(DOMAIN, 36, geo.two_circles(), eta0=0.05, p=2)
    for e in m.elements:
        if e.h < 4 / 36 - 1e-12:
            cx, cy = (e.box[0] + e.box[2]) / 2, (e.box[1] + e.box[3]) / 2
            assert abs(geo.two_circles()(cx, cy)) < 0.3


def test_max_level_exceeded():
    with pytest.raises(MaxLevelExceeded):
        build_induced_mesh(DOMAIN, 4, geo.two_circles(), eta0=0.05, max_levels=0)


@given(st.integers(2, 12), st.floats(0.3, 1.4), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
@settings(max_examples=15, deadline=None)
def test_random_circles_tile_and_balance(n, R, cx, cy):
    try:
        m = build_induced_mesh(DOMAIN, n, geo.circle(cx, cy, R), eta0=0.3, max_levels=5)
    except (MaxLevelExceeded, TangentialContact):
        return
    assert sum(_area(e.box) for e in m.elements) == pytest.approx(16.0, rel=1e-12)
    levels = m.leaf_level
    for f in m.faces_of_kind("side"):
        la = min(levels[k] for k in m.elements[f.minus].leaves)
        lb = min(levels[k] for k in m.elements[f.plus].leaves)
        assert abs(la - lb) <= 1
