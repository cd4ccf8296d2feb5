"""Clamped cell problems: minimize the line energy over lattice chains in a cube.

A CellProblem freezes the staircase of the line b*t through the cube center on
every edge within r*h of the cube boundary and minimizes the period-1 energy
over capped integer multiplicities on the free interior edges, subject to the
divergence-free constraint.  Tiny instances are solved exactly by pruned
enumeration; everything else by deterministic group-valued cycle canceling.
"""

from __future__ import annotations

import hashlib
from itertools import product

import numpy as np

from .chains import Chain, boundary
from .energy import EnergyDensity, clip_segment, segment_cost
from .geometry import Cube, build_lattice, spacing_denominator, staircase_line

EXACT_EDGE_CAP = 18
EXACT_STATE_CAP = 25
DEFAULT_ITER_LIMIT = 10_000
CYCLE_TOL = 1e-9


class CellError(ValueError):
    pass


class CapExceeded(CellError):
    pass


class CellProblem:
    """Cell minimization instance: direction t, multiplicity b, cube side T."""

    def __init__(self, b, t, T, density: EnergyDensity, h, r, theta_max=None, center=None,
                 node_cap=None):
        self.b = np.asarray(b, dtype=np.int64)
        if self.b.ndim != 1 or not np.any(self.b):
            raise CellError("multiplicity b must be a nonzero integer vector")
        if density.m != self.b.size:
            raise CellError(f"density has m={density.m} but b has {self.b.size} components")
        self.t = np.asarray(t, dtype=float)
        self.t = self.t / np.linalg.norm(self.t)
        self.T = float(T)
        self.density = density
        self.k = spacing_denominator(h)
        self.h = 1.0 / self.k
        self.r = int(r)
        self.theta_max = int(theta_max) if theta_max is not None else int(np.max(np.abs(self.b))) + 1
        if self.theta_max < np.max(np.abs(self.b)):
            raise CellError("theta_max must be at least |b|_inf")
        if self.T < 4 * self.h * self.r:
            raise CellError(f"cube side {self.T} below the minimum 4*h*r = {4 * self.h * self.r}")
        self.center = np.zeros(self.t.size) if center is None else np.asarray(center, dtype=float)
        self.node_cap = node_cap
        self._ctx = None

    @property
    def n(self) -> int:
        return self.t.size

    def problem_hash(self) -> str:
        parts = [
            self.density.config_id(),
            f"n={self.n}",
            f"h=1/{self.k}",
            f"r={self.r}",
            f"thmax={self.theta_max}",
            "b=" + ",".join(str(int(x)) for x in self.b),
            "t=" + ",".join(f"{x:.17g}" for x in self.t),
            f"T={self.T:.17g}",
            "x=" + ",".join(f"{x:.17g}" for x in self.center),
        ]
        return hashlib.sha256(";".join(parts).encode()).hexdigest()[:16]

    def context(self) -> "ProblemContext":
        if self._ctx is None:
            self._ctx = ProblemContext(self)
        return self._ctx


class ProblemContext:
    """Graph, clamp and cached edge costs shared by the solvers."""

    def __init__(self, problem: CellProblem):
        self.problem = problem
        self.domain = Cube(problem.t, problem.T, problem.center)
        kwargs = {}
        if problem.node_cap:
            kwargs["node_cap"] = problem.node_cap
        self.graph = build_lattice(self.domain, f"1/{problem.k}", problem.r, **kwargs)
        self.clamp = staircase_line(problem.b, problem.t, self.domain, self.graph)
        g = self.graph
        depth = self.domain.boundary_distance(g.edge_mid)
        rim = problem.r * problem.h
        self.free_ids = np.flatnonzero(depth > rim + 1e-9)
        self._free_set = set(int(e) for e in self.free_ids)
        self._cost_cache: dict[tuple[int, tuple], float] = {}
        self._clip_cache: dict[int, tuple | None] = {}
        self.zero = np.zeros(problem.b.size, dtype=np.int64)

    def _clipped_endpoints(self, eid: int):
        """Sub-segment of the edge inside the cube, cached per edge."""
        hit = self._clip_cache.get(eid, "miss")
        if hit != "miss":
            return hit
        g = self.graph
        a = g.points[int(g.edge_u[eid])]
        b = g.points[int(g.edge_v[eid])]
        clip = clip_segment(self.domain, a, b)
        if clip is None:
            out = None
        else:
            s0, s1 = clip
            out = (a + s0 * (b - a), a + s1 * (b - a))
        self._clip_cache[eid] = out
        return out

    def cost(self, eid: int, theta) -> float:
        key = (eid, tuple(int(x) for x in theta))
        if not any(key[1]):
            return 0.0
        val = self._cost_cache.get(key)
        if val is None:
            ends = self._clipped_endpoints(eid)
            if ends is None:
                val = 0.0
            else:
                val = segment_cost(
                    self.problem.density, ends[0], ends[1],
                    np.asarray(theta, dtype=np.int64), 1.0,
                )
            self._cost_cache[key] = val
        return val

    def chain_value(self, data: dict[int, np.ndarray]) -> float:
        return float(sum(self.cost(e, th) for e, th in data.items() if np.any(th)))

    def clamp_data(self) -> dict[int, np.ndarray]:
        return {e: th.copy() for e, th in self.clamp.data.items()}

    def is_free(self, eid: int) -> bool:
        return eid in self._free_set


class CellSolution:
    def __init__(self, problem, chain, value, solver, iterations, value_log=None,
                 gap_certificate=None, flags=()):
        self.problem = problem
        self.chain = chain
        self.value = float(value)
        self.solver = solver
        self.iterations = int(iterations)
        self.value_log = list(value_log or [])
        self.gap_certificate = gap_certificate
        self.flags = tuple(flags)

    def record(self, chain_ref: str = "-") -> str:
        return f"{self.problem.problem_hash()} {self.value:.17g} {self.solver} {chain_ref}"


def lower_bound(problem: CellProblem) -> float:
    """Certified slicing bound: every admissible chain carries b through each cross-section."""
    slack = 1.0 - 2.0 * problem.r * problem.h / problem.T
    return problem.density.c0 * float(np.linalg.norm(problem.b)) * problem.T * max(slack, 0.0)


def _interior_constraints(ctx: ProblemContext):
    """Nodes that must balance, with their frozen contribution, and free incidences."""
    g = ctx.graph
    incid: dict[int, list[tuple[int, int]]] = {}
    for e in ctx.free_ids:
        e = int(e)
        u, v = int(g.edge_u[e]), int(g.edge_v[e])
        incid.setdefault(u, []).append((e, -1))
        incid.setdefault(v, []).append((e, +1))
    depth = ctx.domain.boundary_distance(g.points)
    clamp = ctx.clamp.data
    fixed = {}
    for node in sorted(incid):
        if depth[node] <= 1e-9:
            del incid[node]
            continue
        bal = ctx.zero.copy()
        for eid, sign, nbr in g.adjacency[node]:
            if eid in clamp and not ctx.is_free(eid):
                bal = bal - sign * clamp[eid]
        # sign convention: edge leaving the node contributes -theta to its boundary
        fixed[node] = bal
    return incid, fixed


def solve_exact(problem: CellProblem, max_free_edges: int = EXACT_EDGE_CAP,
                max_states: int = EXACT_STATE_CAP) -> CellSolution:
    """Exhaustive minimum over capped free-edge assignments, pruned by node balance."""
    ctx = problem.context()
    m = problem.b.size
    tm = problem.theta_max
    n_states = (2 * tm + 1) ** m
    free = [int(e) for e in ctx.free_ids]
    if len(free) > max_free_edges:
        raise CapExceeded(
            f"{len(free)} free edges exceed the exact cap {max_free_edges}"
        )
    if n_states > max_states:
        raise CapExceeded(
            f"(2*theta_max+1)^m = {n_states} exceeds the exact state cap {max_states}"
        )
    g = ctx.graph
    incid, fixed = _interior_constraints(ctx)
    # sorting by canonical node pair closes node constraints early
    free.sort(key=lambda e: (int(g.edge_u[e]), int(g.edge_v[e])))
    remaining = {node: len(lst) for node, lst in incid.items()}
    values = [np.array(v, dtype=np.int64) for v in product(range(-tm, tm + 1), repeat=m)]
    # cheap-first search order prunes hard; equal-cost ties are resolved
    # lexicographically below, so the kept minimizer does not depend on it
    values.sort(key=lambda arr: (int(np.sum(np.abs(arr))), tuple(arr)))
    clamp_data = ctx.clamp_data()
    base_cost = sum(
        ctx.cost(e, th) for e, th in clamp_data.items() if not ctx.is_free(e)
    )
    edge_nodes = []
    for e in free:
        u, v = int(g.edge_u[e]), int(g.edge_v[e])
        touch = [(node, sgn) for node, sgn in ((u, -1), (v, +1)) if node in incid]
        edge_nodes.append(touch)
    balance = {node: fixed[node].copy() for node in incid}
    # the clamp restricted to the free edges is always admissible: seed with it
    seed = [clamp_data.get(e, ctx.zero) for e in free]
    seed_cost = base_cost + sum(ctx.cost(e, th) for e, th in zip(free, seed) if np.any(th))
    best = {"cost": seed_cost, "assign": [th.copy() for th in seed]}
    assign = [None] * len(free)
    visited = 0

    def lex_key(assignment):
        return tuple(tuple(int(x) for x in th) for th in assignment)

    def feasible(node) -> bool:
        rem = remaining[node]
        bal = balance[node]
        if rem == 0:
            return not np.any(bal)
        return bool(np.all(np.abs(bal) <= rem * tm))

    def dfs(i: int, cost_so_far: float):
        nonlocal visited
        if cost_so_far >= best["cost"] + 1e-12:
            return
        if i == len(free):
            visited += 1
            better = cost_so_far < best["cost"] - 1e-12
            tied = abs(cost_so_far - best["cost"]) <= 1e-12
            if better or (tied and lex_key(assign) < lex_key(best["assign"])):
                best["cost"] = min(cost_so_far, best["cost"])
                best["assign"] = [a.copy() for a in assign]
            return
        e = free[i]
        for theta in values:
            c = ctx.cost(e, theta) if np.any(theta) else 0.0
            if cost_so_far + c >= best["cost"] + 1e-12:
                continue
            assign[i] = theta
            ok = True
            for node, sgn in edge_nodes[i]:
                balance[node] = balance[node] + sgn * theta
                remaining[node] -= 1
            for node, _ in edge_nodes[i]:
                if not feasible(node):
                    ok = False
                    break
            if ok:
                dfs(i + 1, cost_so_far + c)
            for node, sgn in edge_nodes[i]:
                balance[node] = balance[node] - sgn * theta
                remaining[node] += 1
        assign[i] = None

    dfs(0, base_cost)
    if best["assign"] is None:
        raise CellError("no feasible assignment found (clamp must be feasible; this is a bug)")
    data = {e: th for e, th in clamp_data.items() if not ctx.is_free(e)}
    for e, theta in zip(free, best["assign"]):
        if np.any(theta):
            data[e] = theta.copy()
    chain = Chain(g, data, m=m)
    value = ctx.chain_value(chain.data)
    return CellSolution(problem, chain, value, "exact", visited,
                        gap_certificate=lower_bound(problem))


def _delta_list(m: int, tm: int):
    out = [np.array(v, dtype=np.int64) for v in product(range(-tm, tm + 1), repeat=m)]
    out = [v for v in out if np.any(v)]
    out.sort(key=lambda arr: tuple(arr))
    return out


def _parent_cycle(parent, tails, start, nn):
    """Simple cycle in the predecessor graph reachable from start, or None."""
    node = start
    for _ in range(nn):
        arc = parent[node]
        if arc < 0:
            return None
        node = tails[arc]
    cycle = []
    anchor = node
    while True:
        arc = int(parent[node])
        cycle.append(arc)
        node = int(tails[arc])
        if node == anchor:
            break
        if len(cycle) > nn:
            return None
    cycle.reverse()
    return cycle


def _negative_cycle(nn, tails, heads, costs, tol):
    """Vectorized label-correcting search for one negative-total-cost cycle.

    All-source Bellman-Ford with deterministic smallest-arc parent choice;
    predecessor-graph walks detect a cycle well before the worst-case round
    count.  Returns arc indices or None.
    """
    if nn == 0 or len(tails) == 0:
        return None
    arc_ids = np.arange(len(tails), dtype=np.int64)
    dist = np.zeros(nn)
    parent = np.full(nn, -1, dtype=np.int64)
    check_every = 16
    for rounds in range(nn + 2):
        cand = dist[tails] + costs
        dist_new = dist.copy()
        np.minimum.at(dist_new, heads, cand)
        improved = dist_new < dist - 1e-15
        if not np.any(improved):
            return None
        achieving = improved[heads] & (cand <= dist_new[heads])
        pick = np.full(nn, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(pick, heads[achieving], arc_ids[achieving])
        parent[improved] = pick[improved]
        dist = dist_new
        if rounds % check_every == check_every - 1 or rounds >= nn:
            start = int(np.flatnonzero(improved)[0])
            cycle = _parent_cycle(parent, tails, start, nn)
            if cycle is not None:
                total = float(np.sum(costs[cycle]))
                if total < -tol:
                    return cycle
    return None


def solve_heuristic(problem: CellProblem, max_iter: int = DEFAULT_ITER_LIMIT) -> CellSolution:
    """Cycle canceling over Z^m increments, starting from the staircase clamp.

    Each sweep builds, per candidate increment delta, the residual arc costs of
    adding +delta (forward) or -delta (backward) to every free edge, searches
    one negative cycle per delta, and applies the cheapest.  Arc structure is
    static; only costs on edges touched by an applied cycle are refreshed.
    """
    ctx = problem.context()
    g = ctx.graph
    m = problem.b.size
    tm = problem.theta_max
    deltas = _delta_list(m, tm)
    data = ctx.clamp_data()
    value = ctx.chain_value(data)
    log = [value]
    free = [int(e) for e in ctx.free_ids]
    nodes = sorted({int(g.edge_u[e]) for e in free} | {int(g.edge_v[e]) for e in free})
    remap = {v: i for i, v in enumerate(nodes)}
    nn = len(nodes)
    ne = len(free)
    # static arcs: forward arc i carries +delta on free[i], arc ne+i carries -delta
    tails = np.empty(2 * ne, dtype=np.int64)
    heads = np.empty(2 * ne, dtype=np.int64)
    for i, e in enumerate(free):
        u, v = remap[int(g.edge_u[e])], remap[int(g.edge_v[e])]
        tails[i], heads[i] = u, v
        tails[ne + i], heads[ne + i] = v, u
    edge_pos = {e: i for i, e in enumerate(free)}

    def arc_costs(delta, cost_arr, positions):
        for i in positions:
            e = free[i]
            theta = data.get(e, ctx.zero)
            cur = ctx.cost(e, theta)
            up = theta + delta
            cost_arr[i] = (ctx.cost(e, up) - cur) if np.max(np.abs(up)) <= tm else np.inf
            dn = theta - delta
            cost_arr[ne + i] = (ctx.cost(e, dn) - cur) if np.max(np.abs(dn)) <= tm else np.inf

    cost_arrays = []
    all_pos = range(ne)
    for delta in deltas:
        arr = np.empty(2 * ne)
        arc_costs(delta, arr, all_pos)
        cost_arrays.append(arr)

    flags = []
    iterations = 0
    while iterations < max_iter:
        best = None  # (gain, delta_idx, [(eid, sign), ...])
        tol = CYCLE_TOL * (1.0 + abs(value))
        for di, delta in enumerate(deltas):
            cycle = _negative_cycle(nn, tails, heads, cost_arrays[di], tol)
            if cycle is None:
                continue
            gain = float(np.sum(cost_arrays[di][cycle]))
            moves = [(free[a], +1) if a < ne else (free[a - ne], -1) for a in cycle]
            if best is None or gain < best[0] - 1e-15:
                best = (gain, di, moves)
        if best is None:
            break
        gain, bdi, moves = best
        for eid, sign in moves:
            theta = data.get(eid, ctx.zero) + sign * deltas[bdi]
            if np.any(theta):
                data[eid] = theta
            elif eid in data:
                del data[eid]
        value = ctx.chain_value(data)
        log.append(value)
        touched = [edge_pos[eid] for eid, _ in moves]
        for di, delta in enumerate(deltas):
            arc_costs(delta, cost_arrays[di], touched)
        iterations += 1
    else:
        flags.append("iteration_limit")
    chain = Chain(g, data, m=m)
    return CellSolution(problem, chain, value, "heuristic", iterations, value_log=log,
                        gap_certificate=lower_bound(problem), flags=flags)


def check_solution(sol: CellSolution) -> list[str]:
    """Invariant audit used by tests and the verify command."""
    issues = []
    ctx = sol.problem.context()
    g = ctx.graph
    clamp = ctx.clamp.data
    for e, th in sol.chain.data.items():
        if not ctx.is_free(e):
            ref = clamp.get(e)
            if ref is None or not np.array_equal(ref, th):
                issues.append(f"clamp broken on frozen edge {e}")
                break
    for e, th in clamp.items():
        if not ctx.is_free(e) and e not in sol.chain.data:
            issues.append(f"clamp edge {e} missing from solution")
            break
    bnd = boundary(sol.chain)
    if bnd:
        depth = ctx.domain.boundary_distance(g.points[bnd.nodes()])
        if np.any(depth > 1e-9):
            issues.append("solution has boundary strictly inside the cube")
    if sol.chain.data:
        cap = max(int(np.max(np.abs(t))) for t in sol.chain.data.values())
        if cap > sol.problem.theta_max:
            issues.append("multiplicity cap exceeded")
    return issues
