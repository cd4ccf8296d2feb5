import itertools

import numpy as np
import pytest

from homogcur.chains import boundary, mass
from homogcur.geometry import (Cube, GeometryError, LatticeGraph, build_lattice,
                               lattice_segment, rotation_for, spacing_denominator,
                               staircase_line, stencil_offsets)


def test_rotation_identity_for_e1():
    rot = rotation_for([1.0, 0.0, 0.0])
    assert np.array_equal(rot.matrix, np.eye(3))


def test_rotation_e2_columns():
    rot = rotation_for([0.0, 1.0])
    assert np.allclose(rot.matrix[:, 0], [0, 1], atol=1e-12)
    assert np.allclose(rot.matrix[:, 1], [-1, 0], atol=1e-12)
    assert np.allclose(rot.matrix @ np.array([1.0, 0.0]), [0, 1], atol=1e-12)


def test_rotation_gram_diagonal_3d():
    t = np.ones(3) / np.sqrt(3)
    rot = rotation_for(t)
    gram = rot.matrix.T @ rot.matrix
    assert np.abs(gram - np.eye(3)).max() < 1e-12
    assert np.allclose(rot.matrix[:, 0], t, atol=1e-12)
    assert abs(np.linalg.det(rot.matrix) - 1.0) < 1e-10


def test_rotation_rejects_non_unit():
    with pytest.raises(GeometryError, match="normalize"):
        rotation_for([1.0, 1.0])


def test_rotation_deterministic_bits():
    t = np.array([0.3, 0.4, np.sqrt(1 - 0.25)])
    a = rotation_for(t).matrix
    b = rotation_for(t).matrix
    assert a.tobytes() == b.tobytes()


def brute_force_edges(coords, r):
    """Independent enumeration oracle: unordered pairs with |d|_inf <= r."""
    index = {tuple(c): i for i, c in enumerate(coords)}
    count = 0
    for c in coords:
        for d in itertools.product(range(-r, r + 1), repeat=len(c)):
            if all(x == 0 for x in d):
                continue
            nbr = tuple(a + b for a, b in zip(c, d))
            if nbr in index and nbr > tuple(c):
                count += 1
    return count


def test_lattice_grid_counts_r1():
    g = build_lattice(Cube([1.0, 0.0], 2.0), 1.0, 1)
    assert g.num_nodes == 25  # 5x5 with margin 1
    coords = [tuple(int(x) for x in row) for row in g.coords]
    assert g.num_edges == brute_force_edges(coords, 1)
    lens = np.unique(np.round(g.edge_len, 12))
    assert lens.max() <= 1 * 1.0 * np.sqrt(2) + 1e-12  # none beyond the stencil reach


def test_lattice_r2_adds_diagonal_and_knight_edges():
    g1 = build_lattice(Cube([1.0, 0.0], 2.0), 1.0, 1)
    g2 = build_lattice(Cube([1.0, 0.0], 2.0), 1.0, 2)
    coords = [tuple(int(x) for x in row) for row in g2.coords]
    assert g2.num_edges == brute_force_edges(coords, 2)
    pairs1 = {(int(g1.edge_u[e]), int(g1.edge_v[e])) for e in range(g1.num_edges)}
    assert len(pairs1) < g2.num_edges
    # knight step within radius-2 stencil
    u, v = g2.node_id((0, 0)), g2.node_id((1, 2))
    eid, sign = g2.edge_id(u, v)
    assert g2.edge_len[eid] == pytest.approx(np.sqrt(5.0))
    with pytest.raises(GeometryError):
        g1.edge_id(g1.node_id((0, 0)), g1.node_id((1, 2)))


def test_spacing_must_be_unit_fraction():
    with pytest.raises(GeometryError):
        build_lattice(Cube([1.0, 0.0], 2.0), 0.3, 1)
    assert spacing_denominator("1/4") == 4


def test_node_cap_refused_with_count():
    with pytest.raises(GeometryError, match="cap"):
        build_lattice(Cube([1.0, 0.0], 6.0), "1/4", 1, node_cap=10)


def test_stencil_offsets_canonical_half():
    offs = stencil_offsets(2, 1)
    assert (1, 0) in offs and (0, 1) in offs and (1, 1) in offs and (1, -1) in offs
    assert all(next(x for x in d if x != 0) > 0 for d in offs)
    assert len(offs) == 4  # half of the 8 moves


def test_staircase_axis_mass_and_boundary():
    cube = Cube([1.0, 0.0], 4.0)
    g = build_lattice(cube, "1/2", 1)
    c = staircase_line([1], [1.0, 0.0], cube, g)
    assert mass(c, "euclid", cube) == pytest.approx(4.0, abs=1e-12)
    # all edges horizontal on the axis
    for e in c.edges():
        d = g.coords[int(g.edge_v[e])] - g.coords[int(g.edge_u[e])]
        assert tuple(d) == (1, 0)
    bnd = boundary(c)
    pts = g.points[bnd.nodes()]
    span = 4.0 / 2 + g.r * g.h
    assert sorted(pts[:, 0]) == pytest.approx([-span, span])


def test_staircase_diagonal_is_exact_direction():
    t = np.array([1.0, 1.0]) / np.sqrt(2)
    cube = Cube(t, 4.0)
    g = build_lattice(cube, "1/2", 2)
    c = staircase_line([1], t, cube, g)
    total = mass(c, "euclid")
    proj = sorted(g.points[v] @ t for v in boundary(c).nodes())
    covered = proj[1] - proj[0]
    assert total / covered == pytest.approx(1.0, abs=1e-12)  # no stretch on the diagonal


def stretch_ratio(b, t, side, h, r):
    t = np.asarray(t, dtype=float)
    t = t / np.linalg.norm(t)
    cube = Cube(t, side)
    g = build_lattice(cube, h, r)
    c = staircase_line(b, t, cube, g)
    total = mass(c, "euclid")
    proj = sorted(g.points[v] @ t for v in boundary(c).nodes())
    return total / (proj[1] - proj[0])


def test_staircase_slope_2_stretch_bounded_by_l1():
    t = np.array([1.0, 2.0]) / np.sqrt(5.0)
    ratio = stretch_ratio([1], t, 4.0, "1/2", 1)
    l1_over_l2 = np.sum(np.abs(t))  # 3/sqrt(5)
    assert ratio <= l1_over_l2 + 1e-9
    assert ratio > 1.0  # genuinely a staircase at r=1


def test_staircase_stretch_monotone_in_r():
    for t in ([1.0, 2.0], [2.0, 3.0], [0.3, 1.1]):
        ratios = [stretch_ratio([1], t, 4.0, "1/2", r) for r in (1, 2, 3)]
        assert ratios[0] >= ratios[1] - 1e-12
        assert ratios[1] >= ratios[2] - 1e-12


def test_staircase_boundary_antisymmetry():
    t = np.array([1.0, 2.0]) / np.sqrt(5.0)
    cube = Cube(t, 4.0)
    g = build_lattice(cube, "1/2", 2)
    plus = boundary(staircase_line([2], t, cube, g))
    minus = boundary(staircase_line([-2], t, cube, g))
    assert plus == -minus


def test_staircase_hausdorff_within_bound():
    t = np.array([np.cos(0.3), np.sin(0.3)])
    cube = Cube(t, 4.0)
    g = build_lattice(cube, "1/2", 2)
    c = staircase_line([1], t, cube, g)
    rel = g.points[c.nodes()] - cube.center
    perp = np.linalg.norm(rel - np.outer(rel @ t, t), axis=1)
    assert perp.max() <= g.r * g.h * np.sqrt(2) + 1e-9


def test_graph_roundtrip_bit_exact(tmp_path):
    g = build_lattice(Cube([1.0, 0.0], 2.0), "1/2", 2)
    text = g.dumps()
    g2 = LatticeGraph.loads(text)
    assert g2.dumps() == text
    path = tmp_path / "g.graph"
    g.save(path)
    assert LatticeGraph.load(path).dumps() == text
    assert g2.num_nodes == g.num_nodes and g2.num_edges == g.num_edges


def test_lattice_segment_runs_endpoint_to_endpoint():
    g = build_lattice(Cube([1.0, 0.0], 6.0), "1/2", 1)
    c = lattice_segment([1], (0.0, 0.0), (2.0, 0.0), g)
    bnd = boundary(c)
    got = sorted(tuple(g.coords[v]) for v in bnd.nodes())
    assert got == [(0, 0), (4, 0)]
    assert mass(c, "euclid") == pytest.approx(2.0)
