"""Seeded invariant suites behind the `verify` command.

Each suite returns (name, ok, detail) triples; the CLI renders them as
PASS/FAIL lines.  Tests reuse the same generators so the command and the
pytest suite cannot drift apart.
"""

from __future__ import annotations

import numpy as np

from .chains import (Chain, ZeroChain, boundary, chain_from_loops, flat_norm,
                     loop_decompose, loop_length_l1, mass, push_forward, slice_chain,
                     coarea_levels)
from .energy import make_density, validate_growth
from .geometry import Cube, build_lattice


def random_loop_chain(g, rng, m: int = 1, loops: int = 3, theta_cap: int = 3) -> Chain:
    """Sum of random rectangle loops with random Z^m weights (always closed)."""
    coords = g.coords
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    out = Chain(g, {}, m=m)
    made = 0
    guard = 0
    while made < loops and guard < 200:
        guard += 1
        x0, y0 = (int(rng.integers(lo[i], hi[i] - 1)) for i in range(2))
        w = int(rng.integers(1, min(6, hi[0] - x0)))
        h2 = int(rng.integers(1, min(6, hi[1] - y0)))
        theta = rng.integers(-theta_cap, theta_cap + 1, size=m)
        if not np.any(theta):
            continue
        ring = (
            [((x0 + i, y0), (x0 + i + 1, y0)) for i in range(w)]
            + [((x0 + w, y0 + j), (x0 + w, y0 + j + 1)) for j in range(h2)]
            + [((x0 + w - i, y0 + h2), (x0 + w - i - 1, y0 + h2)) for i in range(w)]
            + [((x0, y0 + h2 - j), (x0, y0 + h2 - j - 1)) for j in range(h2)]
        )
        data = {}
        try:
            for a, b in ring:
                eid, sign = g.edge_id(g.node_id(a), g.node_id(b))
                data[eid] = data.get(eid, np.zeros(m, dtype=np.int64)) + sign * theta
        except Exception:
            continue
        out = out + Chain(g, data, m=m)
        made += 1
    return out


def random_chain(g, rng, m: int = 1, edges: int = 12, theta_cap: int = 3) -> Chain:
    """Random sparse chain (no closure constraint)."""
    picks = rng.choice(g.num_edges, size=min(edges, g.num_edges), replace=False)
    data = {}
    for e in picks:
        theta = rng.integers(-theta_cap, theta_cap + 1, size=m)
        if np.any(theta):
            data[int(e)] = theta
    return Chain(g, data, m=m)


def _verify_graph(side: float = 10.0):
    return build_lattice(Cube([1.0, 0.0], side), 1.0, 1)


def suite_flat_norm(seed: int = 0):
    g = _verify_graph()
    cube = Cube([1.0, 0.0], 10.0)
    results = []
    u, v = g.node_id((0, 0)), g.node_id((1, 0))
    fw = flat_norm(ZeroChain(g, {u: [1], v: [-1]}), W=cube, g=g)
    results.append(("flatnorm_dipole_adjacent", abs(fw.value - 1.0) < 1e-12,
                    f"value {fw.value:.17g}"))
    w = g.node_id((-2, 0))
    x = g.node_id((3, 0))
    fw5 = flat_norm(ZeroChain(g, {w: [1], x: [-1]}), W=cube, g=g)
    results.append(("flatnorm_dipole_distance5", abs(fw5.value - 2.0) < 1e-12,
                    f"value {fw5.value:.17g}"))
    rng = np.random.default_rng(seed)
    ok = True
    detail = ""
    for _ in range(25):
        c = random_chain(g, rng, m=2, edges=8)
        S = boundary(c)
        if not S:
            continue
        fw = flat_norm(S, W=None, g=g)
        if not (fw.value <= S.mass("one") + 1e-9):
            ok = False
            detail = f"flat {fw.value} > l1 mass {S.mass('one')}"
            break
        rec = fw.residual + boundary(fw.filling)
        if rec != S:
            ok = False
            detail = "witness decomposition failed"
            break
    results.append(("flatnorm_upper_bound_and_witness", ok, detail or "25 random 0-chains"))
    return results


def suite_structure(seed: int = 0, count: int = 100):
    g = _verify_graph(14.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        c = random_loop_chain(g, rng, m=2, loops=int(rng.integers(1, 5)))
        if not c.data:
            continue
        loops = loop_decompose(c)
        if chain_from_loops(g, loops, c.m) != c:
            return [("structure_reconstruction", False, "reconstruction mismatch")]
        total = loop_length_l1(g, loops)
        bound = np.sqrt(c.m) * mass(c, "euclid")
        worst = max(worst, total / bound if bound else 0.0)
        if total > bound + 1e-9:
            return [("structure_sqrt_m_bound", False,
                     f"sum {total:.6g} > sqrt(m)*mass {bound:.6g}")]
    return [("structure_reconstruction", True, f"{count} random closed chains"),
            ("structure_sqrt_m_bound", True, f"worst ratio {worst:.4f}")]


def suite_coarea(seed: int = 0, count: int = 100):
    g = _verify_graph(12.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        c = random_chain(g, rng, m=2, edges=10)
        if not c.data:
            continue
        for axis in range(2):
            lhs = 0.0
            for s in coarea_levels(c, axis):
                lhs += slice_chain(c, axis, s).mass("euclid") * g.h
            rhs = mass(c, "euclid")
            worst = max(worst, lhs / rhs if rhs else 0.0)
            if lhs > rhs + 1e-9:
                return [("coarea_inequality", False, f"{lhs:.6g} > {rhs:.6g}")]
    return [("coarea_inequality", True, f"{count} chains, worst ratio {worst:.4f}")]


def suite_pushforward(seed: int = 0, count: int = 50):
    g = _verify_graph(12.0)
    rng = np.random.default_rng(seed)
    for _ in range(count):
        c = random_chain(g, rng, m=2, edges=8)
        if not c.data:
            continue
        shift = rng.integers(-2, 3, size=2)
        try:
            mapped = push_forward(
                c, lambda nid: g.node_id(tuple(g.coords[nid] + shift)), target=g
            )
        except Exception:
            continue  # translate fell off the graph; skip
        lhs = boundary(mapped)
        rhs_data = {}
        for v, th in boundary(c).data.items():
            rhs_data[g.node_id(tuple(g.coords[v] + shift))] = th
        if lhs != ZeroChain(g, rhs_data, m=c.m):
            return [("pushforward_boundary_commutes", False, "commutation failed")]
        if abs(mass(mapped, "euclid") - mass(c, "euclid")) > 1e-9:
            return [("pushforward_mass_invariant", False, "mass changed")]
    return [("pushforward_boundary_commutes", True, f"{count} random translations"),
            ("pushforward_mass_invariant", True, "mass preserved")]


def suite_growth(seed: int = 0):
    results = []
    for cfg in ({"kind": "unit"}, {"kind": "checker", "a": 3},
                {"kind": "channels", "a": 2}, {"kind": "split2", "a": 3},
                {"kind": "aniso", "kappa": 1}):
        d = make_density(cfg)
        rep = validate_growth(d, samples=200, seed=seed)
        results.append((f"growth_{d.name}", rep.ok, rep.summary()))
    return results


ALL_SUITES = {
    "flatnorm": suite_flat_norm,
    "structure": suite_structure,
    "coarea": suite_coarea,
    "pushforward": suite_pushforward,
    "growth": suite_growth,
}


def run_suites(names=None, seed: int = 0):
    names = list(names or ALL_SUITES)
    out = []
    for name in names:
        if name not in ALL_SUITES:
            raise KeyError(f"unknown verify suite {name!r}")
        out.extend(ALL_SUITES[name](seed=seed))
    return out
