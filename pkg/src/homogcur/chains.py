"""Integer-multiplicity chain calculus on lattice graphs.

A Chain assigns a nonzero vector in Z^m to a sparse set of directed edges and
plays the role of a line measure with vector multiplicity: its support is the
set of carried edges, its tangent the edge direction, its boundary a 0-chain.
Mass, slicing, loop decomposition, push-forward and flat norms are all exact
integer/flow computations on top of that.
"""

from __future__ import annotations

import warnings
from collections import deque

import numpy as np

from .mcflow import FlowError, solve_transport


class ChainError(ValueError):
    pass


def _vec(values, m=None):
    arr = np.asarray(values, dtype=np.int64)
    if m is not None and arr.size != m:
        raise ChainError(f"multiplicity has {arr.size} components, expected {m}")
    return arr


class Chain:
    """Sparse edge -> Z^m multiplicity map over a fixed lattice graph."""

    def __init__(self, graph, data=None, m=None):
        self.graph = graph
        self.data: dict[int, np.ndarray] = {}
        if data:
            for eid, theta in data.items():
                theta = _vec(theta, m)
                if np.any(theta):
                    if not 0 <= eid < graph.num_edges:
                        raise ChainError(f"edge {eid} not in graph")
                    self.data[int(eid)] = theta.copy()
        if m is None:
            m = next(iter(self.data.values())).size if self.data else 1
        self.m = int(m)

    def __bool__(self):
        return bool(self.data)

    def __eq__(self, other):
        if not isinstance(other, Chain) or self.graph is not other.graph:
            return NotImplemented
        if set(self.data) != set(other.data):
            return False
        return all(np.array_equal(self.data[e], other.data[e]) for e in self.data)

    def __add__(self, other):
        if other.graph is not self.graph:
            raise ChainError("chains live on different graphs")
        out = {e: t.copy() for e, t in self.data.items()}
        for e, t in other.data.items():
            out[e] = out.get(e, np.zeros(self.m, dtype=np.int64)) + t
        return Chain(self.graph, out, m=max(self.m, other.m))

    def __neg__(self):
        return Chain(self.graph, {e: -t for e, t in self.data.items()}, m=self.m)

    def __sub__(self, other):
        return self + (-other)

    def copy(self):
        return Chain(self.graph, self.data, m=self.m)

    def edges(self):
        return sorted(self.data)

    def nodes(self):
        out = set()
        for e in self.data:
            out.add(int(self.graph.edge_u[e]))
            out.add(int(self.graph.edge_v[e]))
        return sorted(out)

    def restrict_edges(self, keep):
        return Chain(self.graph, {e: t for e, t in self.data.items() if keep(e)}, m=self.m)

    def dumps(self) -> str:
        lines = [f"chain {self.m}"]
        for e in self.edges():
            u, v = int(self.graph.edge_u[e]), int(self.graph.edge_v[e])
            lines.append(f"{u} {v} " + " ".join(str(int(x)) for x in self.data[e]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, graph, text: str) -> "Chain":
        lines = text.strip().splitlines()
        head = lines[0].split()
        if head[0] != "chain":
            raise ChainError("not a chain file")
        m = int(head[1])
        data = {}
        for line in lines[1:]:
            parts = line.split()
            u, v = int(parts[0]), int(parts[1])
            theta = _vec([int(x) for x in parts[2:]], m)
            eid, sign = graph.edge_id(u, v)
            data[eid] = sign * theta
        return cls(graph, data, m=m)

    @classmethod
    def load(cls, graph, path) -> "Chain":
        with open(path) as fh:
            return cls.loads(graph, fh.read())


class ZeroChain:
    """Sparse node -> Z^m map, the boundary counterpart of a Chain."""

    def __init__(self, graph, data=None, m=None):
        self.graph = graph
        self.data: dict[int, np.ndarray] = {}
        if data:
            for nid, theta in data.items():
                theta = _vec(theta, m)
                if np.any(theta):
                    self.data[int(nid)] = theta.copy()
        if m is None:
            m = next(iter(self.data.values())).size if self.data else 1
        self.m = int(m)

    def __bool__(self):
        return bool(self.data)

    def __eq__(self, other):
        if not isinstance(other, ZeroChain):
            return NotImplemented
        if set(self.data) != set(other.data):
            return False
        return all(np.array_equal(self.data[v], other.data[v]) for v in self.data)

    def __sub__(self, other):
        out = {v: t.copy() for v, t in self.data.items()}
        for v, t in other.data.items():
            out[v] = out.get(v, np.zeros(self.m, dtype=np.int64)) - t
        return ZeroChain(self.graph, out, m=max(self.m, other.m))

    def __add__(self, other):
        out = {v: t.copy() for v, t in self.data.items()}
        for v, t in other.data.items():
            out[v] = out.get(v, np.zeros(self.m, dtype=np.int64)) + t
        return ZeroChain(self.graph, out, m=max(self.m, other.m))

    def __neg__(self):
        return ZeroChain(self.graph, {v: -t for v, t in self.data.items()}, m=self.m)

    def nodes(self):
        return sorted(self.data)

    def mass(self, norm: str = "one") -> float:
        ordv = 1 if norm == "one" else 2
        return float(sum(np.linalg.norm(t, ord=ordv) for t in self.data.values()))

    def restrict_nodes(self, keep):
        return ZeroChain(self.graph, {v: t for v, t in self.data.items() if keep(v)}, m=self.m)


class FaceChain:
    """Integer 2-chain on the unit-square faces of a planar lattice (n = 2)."""

    def __init__(self, graph, data=None, m=1):
        self.graph = graph
        self.data = {f: _vec(t, m) for f, t in (data or {}).items() if np.any(np.asarray(t))}
        self.m = int(m)

    def mass(self) -> float:
        cell = self.graph.h * self.graph.h
        return float(sum(np.sum(np.abs(t)) for t in self.data.values()) * cell)


class FlatWitness:
    """Decomposition S = A + boundary(B) realizing a flat-norm value."""

    def __init__(self, residual, filling, value):
        self.residual = residual
        self.filling = filling
        self.value = float(value)


def boundary(c: Chain) -> ZeroChain:
    """Net in-minus-out multiplicity at every node."""
    g = c.graph
    out: dict[int, np.ndarray] = {}
    zero = lambda: np.zeros(c.m, dtype=np.int64)
    for e, theta in c.data.items():
        u, v = int(g.edge_u[e]), int(g.edge_v[e])
        out[v] = out.get(v, zero()) + theta
        out[u] = out.get(u, zero()) - theta
    return ZeroChain(g, out, m=c.m)


def mass(c: Chain, norm: str = "euclid", region=None) -> float:
    """Weighted length sum over edges whose midpoint lies in the region."""
    if not c.data:
        return 0.0
    ordv = 2 if norm == "euclid" else 1
    eids = c.edges()
    if region is not None:
        keep = region.contains(c.graph.edge_mid[eids])
        eids = [e for e, k in zip(eids, keep) if k]
    return float(sum(np.linalg.norm(c.data[e], ord=ordv) * c.graph.edge_len[e] for e in eids))


def is_divergence_free(c: Chain, interior=None) -> bool:
    """True when the boundary has no node strictly inside the interior region."""
    bnd = boundary(c)
    if interior is None:
        return not bnd
    if not bnd:
        return True
    pts = c.graph.points[bnd.nodes()]
    strict = interior.boundary_distance(pts) > 1e-9
    return not bool(np.any(strict))


def _component_arcs(c: Chain, comp: int):
    """Directed arcs (tail, head, eid, orient) of the positive flow of one component."""
    arcs = []
    g = c.graph
    for e in c.edges():
        val = int(c.data[e][comp])
        if val > 0:
            arcs.append((int(g.edge_u[e]), int(g.edge_v[e]), e, +1))
        elif val < 0:
            arcs.append((int(g.edge_v[e]), int(g.edge_u[e]), e, -1))
    return arcs


def _shortest_cycle(arcs):
    """Shortest (fewest arcs) directed cycle in the arc set, deterministic."""
    adj: dict[int, list[tuple[int, int, int]]] = {}
    for tail, head, eid, orient in arcs:
        adj.setdefault(tail, []).append((head, eid, orient))
    for lst in adj.values():
        lst.sort()
    best = None
    for tail, head, eid, orient in arcs:
        # BFS head -> tail, then close with this arc
        prev = {head: None}
        q = deque([head])
        while q:
            u = q.popleft()
            if u == tail:
                break
            for nbr, e2, o2 in adj.get(u, []):
                if nbr not in prev:
                    prev[nbr] = (u, e2, o2)
                    q.append(nbr)
        if tail not in prev:
            continue
        path = []
        node = tail
        while prev[node] is not None:
            u, e2, o2 = prev[node]
            path.append((e2, o2))
            node = u
        path.reverse()
        cycle = [(eid, orient)] + path
        if best is None or len(cycle) < len(best):
            best = cycle
    return best


def loop_decompose(c: Chain):
    """Peel a closed chain into simple cycles with constant multiplicity vectors.

    Repeatedly extracts the shortest simple cycle in the directed support of
    the first component that is still nonzero, and peels the maximal constant
    vector whose sign agrees with every cycle edge.  The returned list of
    (cycle, theta) pairs reconstructs the chain exactly, and its total
    ell^1-weighted length equals the ell^1 mass of the input.
    """
    bnd = boundary(c)
    if bnd:
        raise ChainError(f"chain has nonzero boundary at nodes {bnd.nodes()[:4]}")
    work = c.copy()
    loops = []
    guard = 0
    while work.data:
        guard += 1
        if guard > 100000:
            raise ChainError("loop peeling failed to terminate")
        comp = min(
            k for k in range(work.m) if any(int(t[k]) != 0 for t in work.data.values())
        )
        arcs = _component_arcs(work, comp)
        cycle = _shortest_cycle(arcs)
        if cycle is None:
            raise ChainError("no directed cycle found in a closed component")
        delta = np.zeros(work.m, dtype=np.int64)
        for k in range(work.m):
            vals = [int(o * work.data[e][k]) for e, o in cycle]
            if all(v > 0 for v in vals):
                delta[k] = min(vals)
            elif all(v < 0 for v in vals):
                delta[k] = max(vals)
        if delta[comp] <= 0:
            raise ChainError("cycle peeling lost the driving component")
        for e, o in cycle:
            work.data[e] = work.data[e] - o * delta
            if not np.any(work.data[e]):
                del work.data[e]
        loops.append((cycle, delta))
    return loops


def chain_from_loops(graph, loops, m) -> Chain:
    out = Chain(graph, {}, m=m)
    for cycle, delta in loops:
        data = {}
        for e, o in cycle:
            data[e] = data.get(e, np.zeros(m, dtype=np.int64)) + o * np.asarray(delta)
        out = out + Chain(graph, data, m=m)
    return out


def loop_length_l1(graph, loops) -> float:
    return float(
        sum(
            np.sum(np.abs(delta)) * sum(graph.edge_len[e] for e, _ in cycle)
            for cycle, delta in loops
        )
    )


def push_forward(c: Chain, node_map, target=None) -> Chain:
    """Relabel a chain through an injective, adjacency-preserving node map."""
    g = c.graph
    tg = target if target is not None else g
    fmap = node_map if callable(node_map) else node_map.__getitem__
    images = {}
    for nid in c.nodes():
        img = int(fmap(nid))
        images[nid] = img
    if len(set(images.values())) != len(images):
        raise ChainError("node map is not injective on the chain support")
    data: dict[int, np.ndarray] = {}
    for e in c.edges():
        u, v = int(g.edge_u[e]), int(g.edge_v[e])
        fu, fv = images[u], images[v]
        try:
            eid, sign = tg.edge_id(fu, fv)
        except Exception:
            raise ChainError(
                f"images of edge ({u},{v}) are not adjacent in the target graph"
            ) from None
        data[eid] = data.get(eid, np.zeros(c.m, dtype=np.int64)) + sign * c.data[e]
    return Chain(tg, data, m=c.m)


def _level_values(c: Chain, f):
    g = c.graph
    if isinstance(f, int):
        return g.points[:, f]
    if hasattr(f, "boundary_distance"):
        return f.boundary_distance(g.points)
    return np.asarray(f(g.points), dtype=float)


def slice_chain(c: Chain, f, s: float) -> ZeroChain:
    """0-chain cut out of c by the level set {f = s}.

    Computed as (boundary c) restricted to {f > s} minus the boundary of the
    restriction of c to edges with both endpoints in {f > s}; the support sits
    on the inner endpoints of level-crossing edges.
    """
    g = c.graph
    vals = _level_values(c, f)
    support = c.nodes()
    if support and np.any(np.abs(vals[support] - s) < 1e-12):
        s = s + g.h * 1e-6
        warnings.warn(f"slice level hit a node; dithered to {s!r}", stacklevel=2)
        if np.any(np.abs(np.asarray(vals[support]) - s) < 1e-13):
            raise ChainError("dithered slice level still hits a node")
    above = vals > s
    inner = c.restrict_edges(
        lambda e: above[int(g.edge_u[e])] and above[int(g.edge_v[e])]
    )
    bnd_all = boundary(c).restrict_nodes(lambda v: bool(above[v]))
    return bnd_all - boundary(inner)


def coarea_levels(c: Chain, axis: int):
    """Half-offset lattice levels covering the support along one axis."""
    if not c.data:
        return []
    g = c.graph
    nodes = c.nodes()
    cmin = int(np.min(g.coords[nodes, axis]))
    cmax = int(np.max(g.coords[nodes, axis]))
    return [g.h * (i + 0.5) for i in range(cmin, cmax)]


def _region_nodes(g, region, extra_margin=0.0):
    if region is None:
        return np.ones(g.num_nodes, dtype=bool)
    return region.contains(g.points, margin=extra_margin)


def flat_norm_zero(S: ZeroChain, W=None, g=None, band=None) -> FlatWitness:
    """Exact flat norm of a 0-chain: unmatched point mass pays 1, transport pays length.

    Solved per Z^m component as a min-cost flow over the graph edges inside W
    (optionally further restricted to a boolean node band).
    """
    g = g if g is not None else S.graph
    allowed = _region_nodes(g, W)
    if band is not None:
        allowed = allowed & band
    for v in S.nodes():
        if not allowed[v]:
            raise ChainError(f"0-chain node {v} lies outside the allowed region")
    node_ids = np.flatnonzero(allowed)
    remap = {int(v): i for i, v in enumerate(node_ids)}
    arcs = []
    arc_eids = []
    for e in range(g.num_edges):
        u, v = int(g.edge_u[e]), int(g.edge_v[e])
        if allowed[u] and allowed[v]:
            arcs.append((remap[u], remap[v], float(g.edge_len[e])))
            arc_eids.append(e)
    total = 0.0
    b_data: dict[int, np.ndarray] = {}
    a_data: dict[int, np.ndarray] = {}
    for k in range(S.m):
        excess = {remap[v]: int(S.data[v][k]) for v in S.nodes() if S.data[v][k] != 0}
        value, flows, absorbed = solve_transport(len(node_ids), arcs, excess, absorb_cost=1.0)
        total += value
        for idx, fval in flows.items():
            e = arc_eids[idx]
            vec = b_data.setdefault(e, np.zeros(S.m, dtype=np.int64))
            vec[k] -= fval  # boundary of B must reproduce S, not consume it
        for local, aval in absorbed.items():
            v = int(node_ids[local])
            vec = a_data.setdefault(v, np.zeros(S.m, dtype=np.int64))
            vec[k] += aval
    return FlatWitness(
        ZeroChain(g, a_data, m=S.m), Chain(g, b_data, m=S.m), total
    )


def _square_faces(g):
    """Unit-cell faces keyed by their lower-left lattice corner (n = 2 only)."""
    faces = {}
    for i, row in enumerate(g.coords):
        key = (int(row[0]), int(row[1]))
        corners = [key, (key[0] + 1, key[1]), (key[0] + 1, key[1] + 1), (key[0], key[1] + 1)]
        if all(g.has_node(cnr) for cnr in corners):
            faces[key] = [g.node_id(cnr) for cnr in corners]
    return faces


def flat_norm_one(S: Chain, W=None) -> FlatWitness:
    """Flat norm of a 1-chain via integer fillings by planar square faces.

    Only defined for 2-d chains supported on axis edges; anything else is
    rejected with a pointer to the slicing-based proxy flat_distance.
    """
    g = S.graph
    if g.n != 2:
        raise ChainError(
            "1-chain flat norm needs a planar embedded graph; use flat_distance as a proxy"
        )
    axis_edges = []
    for e in S.edges():
        d = g.coords[int(g.edge_v[e])] - g.coords[int(g.edge_u[e])]
        if np.sum(np.abs(d)) != 1:
            raise ChainError(
                "1-chain flat norm supports axis edges only; use flat_distance as a proxy"
            )
        axis_edges.append(e)
    from scipy.optimize import linprog
    from scipy.sparse import lil_matrix

    allowed = _region_nodes(g, W)
    faces = {
        key: quad
        for key, quad in _square_faces(g).items()
        if all(allowed[v] for v in quad)
    }
    face_keys = sorted(faces)
    # every axis edge inside the region is a variable of the residual A
    edge_ids = [
        e
        for e in range(g.num_edges)
        if np.sum(np.abs(g.coords[int(g.edge_v[e])] - g.coords[int(g.edge_u[e])])) == 1
        and allowed[int(g.edge_u[e])]
        and allowed[int(g.edge_v[e])]
    ]
    epos = {e: i for i, e in enumerate(edge_ids)}
    for e in S.edges():
        if e not in epos:
            raise ChainError(f"chain edge {e} outside the allowed region")
    inc = lil_matrix((len(edge_ids), len(face_keys)))
    for j, key in enumerate(face_keys):
        quad = faces[key]
        ring = quad + [quad[0]]
        for a, b in zip(ring[:-1], ring[1:]):
            eid, sign = g.edge_id(a, b)
            if eid in epos:
                inc[epos[eid], j] += sign
    inc = inc.tocsc()
    ne, nf = len(edge_ids), len(face_keys)
    lens = np.array([g.edge_len[e] for e in edge_ids])
    cell = g.h * g.h
    total = 0.0
    a_data: dict[int, np.ndarray] = {}
    f_data: dict[tuple, np.ndarray] = {}
    from scipy.sparse import eye, hstack

    for k in range(S.m):
        svec = np.zeros(ne)
        for e in S.edges():
            svec[epos[e]] = float(S.data[e][k])
        if not np.any(svec):
            continue
        # variables: a+ (ne), a- (ne), z+ (nf), z- (nf); A = S - dz
        cost = np.concatenate([lens, lens, np.full(nf, cell), np.full(nf, cell)])
        ident = eye(ne, format="csc")
        amat = hstack([ident, -ident, inc, -inc], format="csc")
        res = linprog(cost, A_eq=amat, b_eq=svec, bounds=(0, None), method="highs")
        if not res.success:
            raise ChainError(f"planar filling LP failed: {res.message}")
        x = np.round(res.x).astype(np.int64)  # TU constraint matrix: optimum is integral
        total += float(cost @ x)
        avals = x[:ne] - x[ne : 2 * ne]
        zvals = x[2 * ne : 2 * ne + nf] - x[2 * ne + nf :]
        for i, e in enumerate(edge_ids):
            if avals[i]:
                a_data.setdefault(e, np.zeros(S.m, dtype=np.int64))[k] = avals[i]
        for j, key in enumerate(face_keys):
            if zvals[j]:
                f_data.setdefault(key, np.zeros(S.m, dtype=np.int64))[k] = zvals[j]
    return FlatWitness(Chain(g, a_data, m=S.m), FaceChain(g, f_data, m=S.m), total)


def flat_norm(S, W=None, g=None) -> FlatWitness:
    """Flat norm of a 0-chain (exact flow) or an axis-supported planar 1-chain."""
    if isinstance(S, ZeroChain):
        return flat_norm_zero(S, W=W, g=g)
    if isinstance(S, Chain):
        return flat_norm_one(S, W=W)
    raise ChainError(f"cannot take the flat norm of {type(S).__name__}")


def flat_distance(c1: Chain, c2: Chain, W=None) -> float:
    """Slicing-based surrogate for the flat distance of two closed chains.

    Maximizes over axis directions the level-sum of 0-chain flat norms of the
    slices of c1 - c2, each computed inside the two lattice layers adjacent to
    the level; scaled by h this mirrors the coarea bound.
    """
    diff = c1 - c2
    if not diff.data:
        return 0.0
    g = c1.graph
    best = 0.0
    for axis in range(g.n):
        vals = g.points[:, axis]
        totalsum = 0.0
        for s in coarea_levels(diff, axis):
            sl = slice_chain(diff, axis, s)
            if not sl:
                continue
            # the band must hold the inner endpoints of stencil-length crossings
            band = np.abs(vals - s) < g.h * (g.r + 0.5)
            fw = flat_norm_zero(sl, W=W, g=g, band=band)
            totalsum += fw.value * g.h
        best = max(best, totalsum)
    return best
