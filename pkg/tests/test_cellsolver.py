import numpy as np
import pytest

from homogcur.cellsolver import (CapExceeded, CellError, CellProblem, check_solution,
                                 lower_bound, solve_exact, solve_heuristic,
                                 _negative_cycle)
from homogcur.chains import mass
from homogcur.energy import make_density


def make_problem(b, t, T, density, h="1/2", r=1, **kw):
    return CellProblem(b, t, T, density, h, r, **kw)


def test_rejects_zero_multiplicity(unit1):
    with pytest.raises(CellError):
        make_problem([0], [1, 0], 4.0, unit1)


def test_rejects_small_cube(unit1):
    with pytest.raises(CellError, match="4\\*h\\*r"):
        CellProblem([1], [1, 0], 2.0, unit1, 1.0, 1)


def test_rejects_small_theta_cap(unit2):
    with pytest.raises(CellError):
        make_problem([2, 0], [1, 0], 4.0, unit2, theta_max=1)


def test_straight_line_optimal_exact(unit1):
    prob = CellProblem([1], [1, 0], 4.0, unit1, 1.0, 1)
    sol = solve_exact(prob, max_free_edges=20)
    assert sol.value == pytest.approx(4.0, abs=1e-9)
    assert sol.solver == "exact"
    assert check_solution(sol) == []
    for e in sol.chain.edges():
        g = prob.context().graph
        assert g.coords[int(g.edge_u[e])][1] == 0  # stays on the axis


def test_exact_caps_raise(unit1):
    prob = CellProblem([1], [1, 0], 8.0, unit1, "1/2", 1)
    with pytest.raises(CapExceeded, match="free edges"):
        solve_exact(prob)
    prob2 = CellProblem([1, 1], [1, 0], 4.0, make_density({"kind": "unit", "m": 2}),
                        1.0, 1, theta_max=3)
    with pytest.raises(CapExceeded, match="state"):
        solve_exact(prob2, max_free_edges=100)


def test_channels_detour_when_profitable():
    # line through the expensive half-row; the cheap row sits one lattice step up
    ch3 = make_density({"kind": "channels", "a": 3})
    prob = CellProblem([1], [1, 0], 1.5, ch3, "1/4", 1, theta_max=1,
                       center=np.array([0.0, 0.75]))
    sol = solve_exact(prob, max_free_edges=60)
    heur = solve_heuristic(prob)
    assert heur.value == pytest.approx(sol.value, abs=1e-9)
    straight = prob.context().chain_value(prob.context().clamp_data())
    # hand enumeration of the two candidates: stay straight at w=3 over the
    # free span (rims 2*0.25*3 + 1.0*3 = 4.5) or climb diagonally to the cheap
    # row and back (rims 1.5 + two w=3 diagonals + 0.5 cheap run)
    assert straight == pytest.approx(4.5, abs=1e-9)
    detour = 1.5 + 2 * (3 * np.sqrt(2) / 4) + 0.5
    assert sol.value == pytest.approx(detour, abs=1e-9)
    assert sol.value < straight - 1e-9
    g = prob.context().graph
    rows = {int(g.coords[int(g.edge_u[e])][1]) for e in sol.chain.edges()}
    assert 4 in rows  # touches the cheap row y in [1, 1.5)


def test_channels_straight_when_detour_too_dear():
    ch = make_density({"kind": "channels", "a": 1.2})
    prob = CellProblem([1], [1, 0], 1.5, ch, "1/4", 1, theta_max=1,
                       center=np.array([0.0, 0.75]))
    sol = solve_exact(prob, max_free_edges=60)
    straight = prob.context().chain_value(prob.context().clamp_data())
    assert sol.value == pytest.approx(straight, abs=1e-9)  # 1.8 = 1.5 * 1.2


def test_heuristic_matches_exact_on_random_instances():
    rng = np.random.default_rng(42)
    pool = [
        {"kind": "unit", "m": 1},
        {"kind": "checker", "a": 3, "m": 1},
        {"kind": "channels", "a": 2, "m": 1},
        {"kind": "aniso", "kappa": 1, "m": 1},
    ]
    done = equal = 0
    while done < 10:
        ang = rng.uniform(0, np.pi)
        t = np.array([np.cos(ang), np.sin(ang)])
        T = rng.uniform(2.0, 2.7)
        density = make_density(pool[rng.integers(len(pool))])
        prob = CellProblem([int(rng.integers(1, 3))], t, T, density, "1/2", 1)
        if len(prob.context().free_ids) > 18:
            continue
        try:
            se = solve_exact(prob)
        except CapExceeded:
            continue
        sh = solve_heuristic(prob)
        assert sh.value >= se.value - 1e-9  # heuristic never beats the exact min
        if abs(sh.value - se.value) <= 1e-9:
            equal += 1
        done += 1
    assert equal >= 8  # >= 80% parity on this seeded batch


def test_merged_vector_line_value(unit2):
    prob = CellProblem([1, 1], [1, 0], 4.0, unit2, "1/2", 1)
    sol = solve_heuristic(prob)
    assert sol.value == pytest.approx(4 * np.sqrt(2), abs=1e-9)
    assert sol.iterations == 0  # clamp already optimal


def no_unit_component_cycle(sol):
    """Optimality certificate for separable densities: no negative unit-residual cycle."""
    prob = sol.problem
    ctx = prob.context()
    g = ctx.graph
    free = [int(e) for e in ctx.free_ids]
    nodes = sorted({int(g.edge_u[e]) for e in free} | {int(g.edge_v[e]) for e in free})
    remap = {v: i for i, v in enumerate(nodes)}
    zero = np.zeros(prob.b.size, dtype=np.int64)
    for comp in range(prob.b.size):
        delta = np.zeros(prob.b.size, dtype=np.int64)
        delta[comp] = 1
        tails, heads, costs = [], [], []
        for e in free:
            theta = sol.chain.data.get(e, zero)
            cur = ctx.cost(e, theta)
            for sgn, (a, bnode) in ((+1, (g.edge_u[e], g.edge_v[e])),
                                    (-1, (g.edge_v[e], g.edge_u[e]))):
                cand = theta + sgn * delta
                if np.max(np.abs(cand)) <= prob.theta_max:
                    tails.append(remap[int(a)])
                    heads.append(remap[int(bnode)])
                    costs.append(ctx.cost(e, cand) - cur)
        cyc = _negative_cycle(len(nodes), np.array(tails), np.array(heads),
                              np.array(costs, dtype=float), 1e-9)
        if cyc is not None:
            return False
    return True


def test_split2_recombination_structure():
    sp = make_density({"kind": "split2", "a": 3})
    prob = CellProblem([1, 1], [1, 0], 4.0, sp, "1/2", 1, theta_max=1)
    sol = solve_heuristic(prob)
    clamp_value = prob.context().chain_value(prob.context().clamp_data())
    assert sol.value < clamp_value - 1e-9
    g = prob.context().graph
    center_rows = set()
    for e in sol.chain.edges():
        theta = tuple(int(x) for x in sol.chain.data[e])
        y = int(g.coords[int(g.edge_u[e])][1])
        if theta == (1, 0):
            assert -2 <= y <= 2  # first component stays near the even row 0
        if theta == (0, 1):
            center_rows.add(y)
    assert any(y < 0 for y in center_rows)  # second component moved to the odd row
    # exact enumeration is out of reach here (132 free edges); for a separable
    # density, absence of negative per-component unit cycles certifies optimality
    assert no_unit_component_cycle(sol)


def test_heuristic_value_log_monotone(checker3):
    prob = CellProblem([1], [1, 0], 8.0, checker3, "1/2", 2)
    sol = solve_heuristic(prob)
    assert sol.iterations > 0
    assert all(b <= a + 1e-12 for a, b in zip(sol.value_log, sol.value_log[1:]))
    assert check_solution(sol) == []


def test_determinism_same_problem_same_bits(checker3):
    a = solve_heuristic(CellProblem([1], [1, 0], 8.0, checker3, "1/2", 2))
    b = solve_heuristic(CellProblem([1], [1, 0], 8.0, checker3, "1/2", 2))
    assert a.value == b.value
    assert a.chain.dumps() == b.chain.dumps()


def test_translation_by_lattice_vector_exact(checker3):
    base = solve_heuristic(CellProblem([1], [1, 0], 4.0, checker3, "1/2", 1))
    moved = solve_heuristic(CellProblem([1], [1, 0], 4.0, checker3, "1/2", 1,
                                        center=np.array([2.0, -1.0])))
    assert moved.value == pytest.approx(base.value, abs=1e-12)


def test_lower_bound_example(unit1):
    prob = CellProblem([2], [1, 0], 8.0, unit1, "1/2", 1)
    assert lower_bound(prob) == pytest.approx(14.0)
    sol = solve_heuristic(prob)
    assert sol.value == pytest.approx(16.0, abs=1e-9)
    assert lower_bound(prob) <= sol.value


def test_lower_bound_below_exact_on_smalls(checker3):
    rng = np.random.default_rng(3)
    for _ in range(5):
        ang = rng.uniform(0, np.pi)
        prob = CellProblem([1], [np.cos(ang), np.sin(ang)], 2.3, checker3, "1/2", 1)
        if len(prob.context().free_ids) > 18:
            continue
        sol = solve_exact(prob)
        assert lower_bound(prob) <= sol.value + 1e-9


def test_clamp_feasibility_traps_value(checker3):
    prob = CellProblem([1], [1, 0], 8.0, checker3, "1/2", 2)
    ctx = prob.context()
    clamp_value = ctx.chain_value(ctx.clamp_data())
    sol = solve_heuristic(prob)
    assert sol.value <= clamp_value + 1e-12
    stretch = mass(ctx.clamp, "euclid", ctx.domain) / (1.0 * prob.T)
    assert lower_bound(prob) - 1e-9 <= sol.value <= checker3.c1 * 1.0 * stretch * prob.T + 1e-9


def test_solution_record_format(unit1):
    prob = CellProblem([1], [1, 0], 4.0, unit1, 1.0, 1)
    sol = solve_heuristic(prob)
    rec = sol.record("chains/x.chain")
    h, value, solver, ref = rec.split()
    assert h == prob.problem_hash()
    assert float(value) == sol.value
    assert solver == "heuristic" and ref == "chains/x.chain"
