import numpy as np
import pytest

from homogcur.chains import mass, push_forward
from homogcur.energy import (EnergyDensity, EnergyError, EnergyQuery, chain_energy,
                             edge_cost, energy, make_density, parse_density_config,
                             segment_cost, validate_growth)
from homogcur.geometry import Cube, build_lattice, staircase_line
from homogcur.verify import random_chain


def test_validate_growth_unit_ratios_one(unit1):
    rep = validate_growth(unit1, samples=100, seed=1)
    assert rep.ok
    assert rep.worst_lower == pytest.approx(1.0)
    assert rep.worst_upper == pytest.approx(1.0)


def test_validate_growth_checker_pass(checker3):
    rep = validate_growth(checker3, samples=300, seed=2)
    assert rep.ok


def test_validate_growth_checker_understated_c1_fails():
    bad = make_density({"kind": "checker", "a": 3, "c1": 2})
    rep = validate_growth(bad, samples=300, seed=2)
    assert not rep.ok
    y, theta, tau = rep.witness_upper
    assert bad.psi(np.array(y), np.array(theta), np.array(tau)) > 2 * np.linalg.norm(theta)
    assert int(np.sum(np.floor(2 * np.array(y)))) % 2 == 1  # expensive half-cell


def test_edge_cost_unit_is_weighted_length(grid10, unit1):
    eid = 0
    for theta in ([1], [3], [-2]):
        assert edge_cost(unit1, grid10, eid, theta, 0.37) == pytest.approx(
            abs(theta[0]) * grid10.edge_len[eid]
        )


def test_edge_cost_checker_split_cell(checker3):
    # unit-length axis edge crossing the wall x=0 halfway: cells carry w=3 and w=1
    cost = segment_cost(checker3, [-0.5, 0.5], [0.5, 0.5], [1], 1.0)
    assert cost == pytest.approx(0.5 * 3 + 0.5 * 1)


def test_edge_cost_channels_half_cells():
    ch = make_density({"kind": "channels", "a": 3})
    cost = segment_cost(ch, [0.0, 0.0], [0.0, 1.0], [1], 1.0)
    assert cost == pytest.approx(0.5 * 1 + 0.5 * 3)


def test_edge_cost_requires_nonzero_theta(checker3):
    with pytest.raises(EnergyError):
        segment_cost(checker3, [0, 0], [1, 0], [0], 1.0)


def test_quadrature_matches_exact_within_5pc(checker3):
    # 8-point midpoint vs exact intersection lengths.  One short edge split by
    # a cell wall can be off by a full sub-interval, so the 5% figure holds at
    # the chain level (phases cancel across the edge population) and per edge
    # whenever the walls are commensurate with the quadrature grid.
    rough = EnergyDensity("checker-quad", checker3._psi, "smooth", 1, 3,
                          m=1, n=2, subcells=(1, 1))
    g = build_lattice(Cube([1.0, 0.0], 6.0), "1/2", 2)
    for eps in (1.0, 0.5, 1 / 3, 1 / 5):
        exact = quad = 0.0
        for e in range(g.num_edges):
            a, b = g.points[int(g.edge_u[e])], g.points[int(g.edge_v[e])]
            exact += segment_cost(checker3, a, b, [2], eps)
            quad += segment_cost(rough, a, b, [2], eps)
        assert quad == pytest.approx(exact, rel=0.05)
    # commensurate scales: every edge agrees exactly, as does the exact path
    for e in range(0, g.num_edges, 7):
        a, b = g.points[int(g.edge_u[e])], g.points[int(g.edge_v[e])]
        assert segment_cost(rough, a, b, [2], 1.0) == pytest.approx(
            segment_cost(checker3, a, b, [2], 1.0), abs=1e-12
        )


def test_energy_straight_segment_all_eps(unit1):
    cube = Cube([1.0, 0.0], 4.0)
    g = build_lattice(cube, "1/2", 1)
    c = staircase_line([3], [1.0, 0.0], cube, g)
    for eps in (1.0, 0.5, 1 / 7):
        val = energy(EnergyQuery(c, unit1, eps, cube))
        assert val == pytest.approx(3 * 4.0, abs=1e-9)


def test_energy_rescaling_identity(checker3):
    # energy at eps of c equals eps * energy at 1 of the chain dilated by 1/eps
    eps = 0.5
    cube = Cube([1.0, 0.0], 4.0)
    g = build_lattice(cube, "1/2", 1)
    c = staircase_line([1], [1.0, 0.0], cube, g)
    big = build_lattice(Cube([1.0, 0.0], 8.0), "1/1", 1)
    dilated = push_forward(c, lambda nid: big.node_id(tuple(g.coords[nid])), target=big)
    lhs = chain_energy(c, checker3, eps)
    rhs = eps * chain_energy(dilated, checker3, 1.0)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_energy_periodicity_translation(checker3):
    eps = 0.5
    cube = Cube([1.0, 0.0], 4.0)
    g = build_lattice(cube, "1/2", 1)
    c = staircase_line([1], [1.0, 0.0], cube, g)
    # eps * (integer vector) = one lattice step here
    shifted = push_forward(c, lambda nid: g.node_id(tuple(g.coords[nid] + np.array([0, 1]))))
    assert chain_energy(c, checker3, eps) == pytest.approx(
        chain_energy(shifted, checker3, eps), abs=1e-12
    )


def test_energy_additivity_and_growth(grid10, checker3):
    rng = np.random.default_rng(9)
    for _ in range(20):
        c = random_chain(grid10, rng, m=1, edges=6)
        if not c.data:
            continue
        val = chain_energy(c, checker3, 1.0)
        me = mass(c, "euclid")
        assert checker3.c0 * me - 1e-9 <= val <= checker3.c1 * me + 1e-9
    c1 = random_chain(grid10, np.random.default_rng(1), m=1, edges=5)
    shift = lambda nid: grid10.node_id(tuple(grid10.coords[nid] + np.array([0, 3])))
    c2 = push_forward(c1, shift)
    assert chain_energy(c1 + c2, checker3, 1.0) == pytest.approx(
        chain_energy(c1, checker3, 1.0) + chain_energy(c2, checker3, 1.0)
    )


def test_cheap_cells_beat_straight_staircase(checker3, path_chain):
    g = build_lattice(Cube([1.0, 0.0], 10.0), "1/4", 1)
    xs = np.arange(0, 17)  # lattice units of h=1/4: straight run [0,4] at y=0
    straight = path_chain(g, [(x, 0) for x in xs], [1])
    # gridline runs on cheap half-columns, V-dips through cheap half-cells
    period = [(1, 0), (2, 0), (3, -1), (4, 0)]
    zig = [(0, 0)] + [(x + shift, y) for shift in (0, 4, 8, 12) for x, y in period]
    cheap = path_chain(g, zig, [1])
    e_cheap = chain_energy(cheap, checker3, 1.0)
    e_straight = chain_energy(straight, checker3, 1.0)
    assert e_cheap < e_straight
    assert e_cheap == pytest.approx(4 * (1 + np.sqrt(2)) / 2, abs=1e-9)
    assert e_straight == pytest.approx(4 * 2.0, abs=1e-9)


def test_split2_requires_m2():
    with pytest.raises(EnergyError):
        make_density({"kind": "split2", "a": 3, "m": 1})


def test_density_config_parse_and_reject():
    cfg = parse_density_config("kind = checker\na = 3\nm = 1\n# comment\n")
    assert cfg == {"kind": "checker", "a": 3, "m": 1}
    with pytest.raises(EnergyError, match="unknown"):
        parse_density_config("kind = unit\nwobble = 2\n")
    with pytest.raises(EnergyError, match="kind"):
        parse_density_config("a = 3\n")
    with pytest.raises(EnergyError):
        make_density({"kind": "mystery"})


def test_aniso_depends_only_on_direction():
    an = make_density({"kind": "aniso", "kappa": 1.0})
    horiz = segment_cost(an, [0, 0], [1, 0], [1], 1.0)
    vert = segment_cost(an, [0, 0], [0, 1], [1], 1.0)
    diag = segment_cost(an, [0, 0], [1, 1], [1], 1.0)
    assert horiz == pytest.approx(1.0)
    assert vert == pytest.approx(2.0)
    assert diag == pytest.approx(np.sqrt(2) * 1.5)


def test_psi_zero_multiplicity_is_zero(checker3):
    assert checker3.psi([0.3, 0.7], [0], [1.0, 0.0]) == 0.0
