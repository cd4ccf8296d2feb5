"""Small exact min-cost flow solver (successive shortest paths with potentials).

Used for 0-chain flat norms and shell fillings.  Arcs are uncapacitated and
symmetric; an optional virtual sink lets every unit of unmatched point mass
pay a fixed absorption price instead of traveling.  Supplies are small
integers, so the augmenting-path count stays tiny.
"""

from __future__ import annotations

import heapq

import numpy as np

INF = float("inf")


class FlowError(RuntimeError):
    pass


def solve_transport(num_nodes, arcs, excess, absorb_cost=None):
    """Route integer excesses to balance at minimal cost.

    Arguments:
        num_nodes: count of real nodes (0..num_nodes-1).
        arcs: list of (u, v, cost) undirected transport arcs, cost >= 0.
        excess: dict node -> int, positive = supply, negative = demand.
        absorb_cost: if not None, any unit may instead be absorbed in place
            at this price per unit (the virtual-node arcs of the flat norm).

    Returns (value, flow, absorbed) where flow maps arc index -> net signed
    units pushed from u to v, and absorbed maps node -> net units written off
    there (positive for supply, negative for demand).  Raises FlowError if the
    excesses cannot be balanced (only possible with absorb_cost=None on a
    disconnected graph or unbalanced excess).
    """
    excess = {v: int(e) for v, e in excess.items() if e != 0}
    if not excess:
        return 0.0, {}, {}
    omega = num_nodes  # virtual absorption node
    adj: list[list[tuple[int, int]]] = [[] for _ in range(num_nodes + 1)]
    arc_cost = []
    arc_ends = []
    for idx, (u, v, c) in enumerate(arcs):
        if c < 0:
            raise FlowError("transport costs must be nonnegative")
        adj[u].append((idx, v))
        adj[v].append((idx, u))
        arc_cost.append(float(c))
        arc_ends.append((u, v))
    n_real_arcs = len(arcs)
    if absorb_cost is not None:
        for v in range(num_nodes):
            idx = len(arc_cost)
            adj[v].append((idx, omega))
            adj[omega].append((idx, v))
            arc_cost.append(float(absorb_cost))
            arc_ends.append((v, omega))
    flow = np.zeros(len(arc_cost), dtype=np.int64)

    supply = dict(excess)
    total = sum(excess.values())
    omega_supply = -total if absorb_cost is not None else 0
    if absorb_cost is None and total != 0:
        raise FlowError(f"excess does not balance (total {total}) and absorption is disabled")

    def residual_cost(idx, frm):
        # traversing arc idx out of node frm; canceling opposite flow is free negative
        u, v = arc_ends[idx]
        fwd = frm == u
        f = flow[idx]
        if (fwd and f >= 0) or (not fwd and f <= 0):
            return arc_cost[idx]
        return -arc_cost[idx]

    pot = np.zeros(num_nodes + 1)
    om_sup = omega_supply
    while True:
        sources = [v for v in sorted(supply) if supply[v] > 0]
        if om_sup > 0:
            sources.append(omega)
        if not sources:
            break
        sinks = set(v for v, s in supply.items() if s < 0)
        if om_sup < 0:
            sinks.add(omega)
        if not sinks:
            raise FlowError("supply left but no sink available")
        dist = np.full(num_nodes + 1, INF)
        parent = np.full(num_nodes + 1, -1, dtype=np.int64)
        heap = []
        for s in sources:
            dist[s] = 0.0
            heapq.heappush(heap, (0.0, s))
        done = np.zeros(num_nodes + 1, dtype=bool)
        reached = None
        while heap:
            d0, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if u in sinks:
                reached = u
                break
            for idx, nbr in adj[u]:
                if done[nbr]:
                    continue
                rc = residual_cost(idx, u) + pot[u] - pot[nbr]
                if rc < -1e-9:
                    rc = 0.0  # guard against float drift in reduced costs
                nd = d0 + rc
                if nd < dist[nbr] - 1e-15:
                    dist[nbr] = nd
                    parent[nbr] = idx
                    heapq.heappush(heap, (nd, nbr))
        if reached is None:
            raise FlowError("sink unreachable inside the allowed region")
        # walk back to a source, collecting the path
        path = []
        node = reached
        while parent[node] >= 0:
            idx = int(parent[node])
            u, v = arc_ends[idx]
            prev = u if v == node else v
            path.append((idx, prev == u))
            node = prev
        src = node
        amount_src = om_sup if src == omega else supply[src]
        amount_snk = -om_sup if reached == omega else -supply[reached]
        push = min(amount_src, amount_snk)
        if push <= 0:
            raise FlowError("degenerate augmentation")
        for idx, forward in path:
            flow[idx] += push if forward else -push
        if src == omega:
            om_sup -= push
        else:
            supply[src] -= push
        if reached == omega:
            om_sup += push
        else:
            supply[reached] += push
        pot += np.minimum(dist, dist[reached])

    value = float(np.sum(np.abs(flow) * np.asarray(arc_cost)))
    flows = {i: int(flow[i]) for i in range(n_real_arcs) if flow[i] != 0}
    absorbed = {}
    for idx in range(n_real_arcs, len(arc_cost)):
        if flow[idx] != 0:
            v = arc_ends[idx][0]
            absorbed[v] = int(flow[idx])
    return value, flows, absorbed
