"""Rotated cubes, deterministic direction frames, and lattice graphs.

All nodes live on the absolute lattice h*Z^n with h = 1/k, and are keyed by
their integer lattice coordinates, so node identity and file round-trips are
exact.  Only lengths, tangents and interior tests use floating point.
"""

from __future__ import annotations

import heapq
from itertools import product

import numpy as np

DEFAULT_NODE_CAP = 2_000_000
_TOL = 1e-9


class GeometryError(ValueError):
    pass


def _as_unit(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    nrm = float(np.linalg.norm(t))
    if abs(nrm - 1.0) > _TOL:
        raise GeometryError(
            f"direction must be a unit vector (|t| = {nrm:.12g}); "
            f"normalize it as t / {nrm:.12g} first"
        )
    return t


def rotation_for(t) -> "Rotation":
    """Deterministic rotation with first column t, built from a fixed reflection rule."""
    t = _as_unit(t)
    n = t.size
    e1 = np.zeros(n)
    e1[0] = 1.0
    w = e1 - t
    wn = float(np.linalg.norm(w))
    if wn < 1e-14:
        mat = np.eye(n)
    else:
        w /= wn
        mat = np.eye(n) - 2.0 * np.outer(w, w)
        # the reflection has determinant -1; flip the last column to land in SO(n)
        mat[:, -1] *= -1.0
    return Rotation(t, mat)


class Rotation:
    """Orthogonal frame whose first column is the line direction."""

    def __init__(self, t, matrix):
        self.t = np.asarray(t, dtype=float)
        self.matrix = np.asarray(matrix, dtype=float)
        n = self.t.size
        gram = self.matrix.T @ self.matrix
        if not np.allclose(gram, np.eye(n), atol=1e-12):
            raise GeometryError("rotation columns are not orthonormal")
        if not np.allclose(self.matrix[:, 0], self.t, atol=1e-12):
            raise GeometryError("rotation does not map e1 to t")

    def to_frame(self, points) -> np.ndarray:
        """Coordinates of absolute points in the rotated frame."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.matrix

    def __eq__(self, other):
        return isinstance(other, Rotation) and np.array_equal(self.matrix, other.matrix)


class Cube:
    """Cube of side T centered at x with one side parallel to t."""

    def __init__(self, t, side, center=None):
        self.t = _as_unit(t)
        if side <= 0:
            raise GeometryError(f"cube side must be positive, got {side}")
        self.side = float(side)
        n = self.t.size
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        self.rotation = rotation_for(self.t)

    @property
    def n(self) -> int:
        return self.t.size

    def frame_coords(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.center) @ self.rotation.matrix

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        """Membership of points in the cube inflated by margin (boolean array)."""
        y = self.frame_coords(points)
        half = self.side / 2.0 + margin
        return np.all(np.abs(y) <= half + _TOL, axis=1)

    def boundary_distance(self, points) -> np.ndarray:
        """Signed distance to the cube boundary, positive inside."""
        y = self.frame_coords(points)
        return self.side / 2.0 - np.max(np.abs(y), axis=1)

    def shrunk(self, amount: float) -> "Cube":
        if self.side - 2.0 * amount <= 0:
            raise GeometryError("cube shrinks to nothing")
        return Cube(self.t, self.side - 2.0 * amount, self.center)


def spacing_denominator(h) -> int:
    """The integer k with h = 1/k, rejecting any other spacing."""
    if isinstance(h, str):
        if h.startswith("1/"):
            return int(h[2:])
        h = float(h)
    k = round(1.0 / h)
    if k < 1 or abs(h * k - 1.0) > 1e-12:
        raise GeometryError(f"spacing must be 1/k for integer k >= 1, got {h}")
    return k


def stencil_offsets(n: int, r: int) -> list[tuple[int, ...]]:
    """Canonical half of the moves with 0 < |d|_inf <= r (first nonzero positive)."""
    if r not in (1, 2, 3):
        raise GeometryError(f"stencil radius must be in {{1, 2, 3}}, got {r}")
    offs = []
    for d in product(range(-r, r + 1), repeat=n):
        if all(c == 0 for c in d):
            continue
        first = next(c for c in d if c != 0)
        if first > 0:
            offs.append(d)
    offs.sort()
    return offs


class LatticeGraph:
    """Nodes of h*Z^n clipped to a cube plus margin, edges within the stencil radius.

    Edges are stored once per unordered pair, oriented from the lexicographically
    smaller integer coordinate tuple to the larger one.
    """

    def __init__(self, n, k, r, coords, edges, domain=None):
        self.n = int(n)
        self.k = int(k)
        self.h = 1.0 / self.k
        self.r = int(r)
        self.coords = np.asarray(coords, dtype=np.int64)  # node integer lattice coords
        self.index = {tuple(int(c) for c in row): i for i, row in enumerate(self.coords)}
        self.points = self.coords.astype(float) * self.h
        self.edge_u = np.asarray([e[0] for e in edges], dtype=np.int64)
        self.edge_v = np.asarray([e[1] for e in edges], dtype=np.int64)
        self.domain = domain
        if len(edges) == 0:
            self.edge_u = self.edge_u.reshape(0)
            self.edge_v = self.edge_v.reshape(0)
        delta = self.points[self.edge_v] - self.points[self.edge_u] if len(edges) else np.zeros((0, self.n))
        self.edge_len = np.linalg.norm(delta, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.edge_tan = np.where(self.edge_len[:, None] > 0, delta / np.maximum(self.edge_len, 1e-300)[:, None], 0.0)
        self.edge_mid = 0.5 * (self.points[self.edge_u] + self.points[self.edge_v])
        self.adjacency: list[list[tuple[int, int, int]]] = [[] for _ in range(len(self.coords))]
        for eid in range(len(self.edge_u)):
            u, v = int(self.edge_u[eid]), int(self.edge_v[eid])
            self.adjacency[u].append((eid, +1, v))
            self.adjacency[v].append((eid, -1, u))

    @property
    def num_nodes(self) -> int:
        return len(self.coords)

    @property
    def num_edges(self) -> int:
        return len(self.edge_u)

    def node_id(self, coord) -> int:
        key = tuple(int(c) for c in coord)
        if key not in self.index:
            raise GeometryError(f"node {key} not in graph")
        return self.index[key]

    def has_node(self, coord) -> bool:
        return tuple(int(c) for c in coord) in self.index

    def edge_id(self, u: int, v: int) -> tuple[int, int]:
        """Edge index and orientation sign for the directed pair (u, v)."""
        for eid, sign, nbr in self.adjacency[u]:
            if nbr == v:
                return eid, sign
        raise GeometryError(f"no edge between nodes {u} and {v}")

    def nearest_node(self, point) -> int:
        point = np.asarray(point, dtype=float)
        d2 = np.sum((self.points - point) ** 2, axis=1)
        return int(np.lexsort((np.arange(self.num_nodes), d2))[0])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    def dumps(self) -> str:
        lines = [f"{self.num_nodes} {self.num_edges} 1/{self.k} {self.r}"]
        for row in self.coords:
            lines.append("v " + " ".join(str(int(c)) for c in row))
        for u, v in zip(self.edge_u, self.edge_v):
            lines.append(f"e {int(u)} {int(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LatticeGraph":
        lines = text.strip().splitlines()
        nn, ne, hstr, r = lines[0].split()
        nn, ne, r = int(nn), int(ne), int(r)
        k = spacing_denominator(hstr)
        coords = []
        edges = []
        for line in lines[1:]:
            parts = line.split()
            if parts[0] == "v":
                coords.append(tuple(int(c) for c in parts[1:]))
            elif parts[0] == "e":
                edges.append((int(parts[1]), int(parts[2])))
        if len(coords) != nn or len(edges) != ne:
            raise GeometryError("graph file header disagrees with body")
        n = len(coords[0])
        return cls(n, k, r, np.array(coords, dtype=np.int64), edges)

    @classmethod
    def load(cls, path) -> "LatticeGraph":
        with open(path) as fh:
            return cls.loads(fh.read())


def build_lattice(domain: Cube, h, r: int, node_cap: int = DEFAULT_NODE_CAP) -> LatticeGraph:
    """Rasterize a rotated cube (inflated by r*h) into a lattice graph."""
    k = spacing_denominator(h)
    hval = 1.0 / k
    if r not in (1, 2, 3):
        raise GeometryError(f"stencil radius must be in {{1, 2, 3}}, got {r}")
    n = domain.n
    margin = r * hval
    half = domain.side / 2.0 + margin
    # bounding box of the rotated cube in absolute coordinates
    ext = half * np.sum(np.abs(domain.rotation.matrix), axis=1)
    lo = np.floor((domain.center - ext) / hval - 0.5).astype(int)
    hi = np.ceil((domain.center + ext) / hval + 0.5).astype(int)
    span = np.prod((hi - lo + 1).astype(float))
    if span > 50 * node_cap:
        raise GeometryError(f"bounding box holds ~{int(span)} candidate nodes, over the cap {node_cap}")
    axes = [np.arange(lo[i], hi[i] + 1) for i in range(n)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    inside = domain.contains(mesh * hval, margin=margin)
    coords = mesh[inside]
    if len(coords) > node_cap:
        raise GeometryError(f"node count {len(coords)} exceeds cap {node_cap}")
    order = np.lexsort(coords.T[::-1])
    coords = coords[order]
    index = {tuple(int(c) for c in row): i for i, row in enumerate(coords)}
    edges = []
    for i, row in enumerate(coords):
        base = tuple(int(c) for c in row)
        for d in stencil_offsets(n, r):
            nbr = tuple(base[j] + d[j] for j in range(n))
            j = index.get(nbr)
            if j is not None:
                edges.append((i, j))
    edges.sort()
    return LatticeGraph(n, k, r, coords, edges, domain=domain)


def _line_geometry(g: LatticeGraph, domain: Cube):
    t = domain.t
    span = domain.side / 2.0 + g.r * g.h
    rel = g.points - domain.center
    proj = rel @ t
    perp = np.linalg.norm(rel - np.outer(proj, t), axis=1)
    return t, span, proj, perp


def lattice_segment(b, p, q, g: LatticeGraph) -> "Chain":
    """Shortest tube path carrying b from the node nearest p to the node nearest q.

    Unlike staircase_line this runs exactly endpoint to endpoint, so chains of
    consecutive segments concatenate into closed loops.
    """
    from .chains import Chain

    b = np.asarray(b, dtype=np.int64)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    length = float(np.linalg.norm(q - p))
    if length <= 0:
        raise GeometryError("segment endpoints coincide")
    tvec = (q - p) / length
    rel = g.points - p
    proj = rel @ tvec
    perp = np.linalg.norm(rel - np.outer(proj, tvec), axis=1)
    cap = g.h * np.sqrt(g.n) / 2.0 + _TOL
    tube = np.flatnonzero((perp <= cap) & (proj >= -cap) & (proj <= length + cap))
    if tube.size == 0:
        raise GeometryError("no lattice node near the segment")
    tube_pts = g.points[tube]
    start = int(tube[np.lexsort((tube, np.sum((tube_pts - p) ** 2, axis=1)))[0]])
    goal = int(tube[np.lexsort((tube, np.sum((tube_pts - q) ** 2, axis=1)))[0]])
    in_tube = np.zeros(g.num_nodes, dtype=bool)
    in_tube[tube] = True
    dist = {start: 0.0}
    parent: dict[int, tuple[int, int, int]] = {}
    heap = [(0.0, start)]
    seen = set()
    while heap:
        d0, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == goal:
            break
        for eid, sign, nbr in g.adjacency[u]:
            if not in_tube[nbr] or nbr in seen:
                continue
            nd = d0 + g.edge_len[eid]
            if nd < dist.get(nbr, np.inf) - 1e-15:
                dist[nbr] = nd
                parent[nbr] = (u, eid, sign)
                heapq.heappush(heap, (nd, nbr))
    if goal not in seen:
        raise GeometryError("segment tube is disconnected at this stencil radius")
    data: dict[int, np.ndarray] = {}
    node = goal
    while node != start:
        u, eid, sign = parent[node]
        data[eid] = data.get(eid, np.zeros(len(b), dtype=np.int64)) + sign * b
        node = u
    return Chain(g, data)


def staircase_line(b, t, domain: Cube, g: LatticeGraph) -> "Chain":
    """Lattice path hugging the line through the cube center along t, carrying b.

    The path is the shortest path (by Euclidean length, deterministic ties)
    inside the tube of nodes within h*sqrt(n)/2 of the line, between the nodes
    nearest the line's entry and exit through the inflated cube.
    """
    from .chains import Chain

    b = np.asarray(b, dtype=np.int64)
    if not np.any(b):
        raise GeometryError("staircase multiplicity must be nonzero")
    tvec = _as_unit(t)
    if not np.allclose(tvec, domain.t, atol=1e-12):
        domain = Cube(tvec, domain.side, domain.center)
    _, span, proj, perp = _line_geometry(g, domain)
    cap = g.h * np.sqrt(g.n) / 2.0 + _TOL
    tube = np.flatnonzero(perp <= cap)
    if tube.size == 0:
        raise GeometryError(
            f"no lattice node within {cap:.6g} of the line; best deviation {perp.min():.6g}"
        )
    entry_pt = domain.center - span * tvec
    exit_pt = domain.center + span * tvec
    tube_pts = g.points[tube]
    start = int(tube[np.lexsort((tube, np.sum((tube_pts - entry_pt) ** 2, axis=1)))[0]])
    goal = int(tube[np.lexsort((tube, np.sum((tube_pts - exit_pt) ** 2, axis=1)))[0]])
    in_tube = np.zeros(g.num_nodes, dtype=bool)
    in_tube[tube] = True
    # Dijkstra restricted to tube nodes; edge weights are Euclidean lengths
    dist = {start: 0.0}
    parent: dict[int, tuple[int, int, int]] = {}
    heap = [(0.0, start)]
    seen = set()
    while heap:
        d0, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == goal:
            break
        for eid, sign, nbr in g.adjacency[u]:
            if not in_tube[nbr] or nbr in seen:
                continue
            nd = d0 + g.edge_len[eid]
            if nd < dist.get(nbr, np.inf) - 1e-15:
                dist[nbr] = nd
                parent[nbr] = (u, eid, sign)
                heapq.heappush(heap, (nd, nbr))
    if goal not in seen:
        best = perp[tube].max()
        raise GeometryError(
            f"line tube is disconnected at stencil radius {g.r}; best achievable deviation {best:.6g}"
        )
    data = {}
    node = goal
    while node != start:
        u, eid, sign = parent[node]
        data[eid] = data.get(eid, np.zeros(len(b), dtype=np.int64)) + sign * b
        node = u
    chain = Chain(g, data)
    worst = max((perp[n] for n in chain.nodes()), default=0.0)
    bound = g.r * g.h * np.sqrt(g.n)
    if worst > bound + _TOL:
        raise GeometryError(
            f"staircase deviates {worst:.6g} from the line, over the bound {bound:.6g}"
        )
    return chain
