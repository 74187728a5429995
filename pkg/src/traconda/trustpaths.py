"""Trust-gated route computation.

Three layers:

* a Dijkstra engine whose labels are (cost, hop-sequence) compared
  lexicographically, so cost ties always resolve to the lowest-NodeId hop
  sequence and runs are exactly reproducible;
* loopless alternative enumeration (deviation search over accepted paths)
  with the same ordering, complete when fewer than k simple paths exist;
* the incremental search that converts nodes found on candidate routes until
  one route becomes fully trusted.

The trust gate applies to interior hops only: the sending and receiving
endpoints cannot carry agents and are exempt.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .netmodel import NodeId, Route, Topology, is_trusted


@dataclass
class DijkstraState:
    """Canonical run state of one search (kept for introspection/tests)."""

    source: NodeId
    target: NodeId
    unvisited: set[NodeId] = field(default_factory=set)
    dist: dict[NodeId, int] = field(default_factory=dict)
    path: dict[NodeId, NodeId] = field(default_factory=dict)  # predecessor map
    current: NodeId | None = None


def _dijkstra(topology: Topology, source: NodeId, target: NodeId,
              allowed=None, banned_nodes=frozenset(), banned_edges=frozenset(),
              state: DijkstraState | None = None):
    """Lowest (cost, hop-sequence) path as (cost, hops tuple), or None.

    ``allowed(n)`` gates which nodes may be entered (the source is never
    gated, the target is always allowed). ``banned_edges`` holds directed
    (u, v) pairs. Labels carry whole hop tuples; with strictly positive link
    costs the first label popped per node is its (cost, lex) optimum.
    """
    if source not in topology.nodes or target not in topology.nodes:
        missing = source if source not in topology.nodes else target
        raise KeyError(f"unknown endpoint {missing}")
    if state is not None:
        state.unvisited = set(topology.nodes) - set(banned_nodes)
        state.dist = {source: 0}
    if source in banned_nodes:
        return None
    heap = [(0, (source,))]
    done = set()
    while heap:
        cost, hops = heapq.heappop(heap)
        node = hops[-1]
        if node in done:
            continue
        done.add(node)
        if state is not None:
            state.current = node
            state.unvisited.discard(node)
            state.dist[node] = cost
            if len(hops) > 1:
                state.path[node] = hops[-2]
        if node == target:
            return cost, hops
        for nb in topology.neighbors(node):
            if nb in done or nb in banned_nodes or (node, nb) in banned_edges:
                continue
            if allowed is not None and nb != target and not allowed(nb):
                # untrusted candidate: excluded, treated as visited
                done.add(nb)
                continue
            heapq.heappush(heap, (cost + topology.link_cost(node, nb), hops + (nb,)))
    return None


def plain_shortest_path(topology: Topology, source: NodeId, target: NodeId) -> Route | None:
    found = _dijkstra(topology, source, target)
    return Route(found[1]) if found else None


def trusted_shortest_path(topology: Topology, source: NodeId, target: NodeId,
                          state: DijkstraState | None = None) -> Route | None:
    """Shortest path whose interior hops are all trusted right now.

    Endpoints are exempt from the gate; returns None when no such path
    exists. Ties resolve to the lexicographically smallest hop sequence.
    """
    gate = lambda n: is_trusted(topology.nodes[n])
    found = _dijkstra(topology, source, target, allowed=gate, state=state)
    return Route(found[1]) if found else None


def iter_loopless_paths(topology: Topology, source: NodeId, target: NodeId):
    """Yield (cost, hops) for every simple path source->target, in
    nondecreasing (cost, hop-sequence) order.

    Deviation search over the accepted list: each newly accepted path spawns
    spur candidates at every prefix, with already-accepted continuations of
    that prefix banned. Lazy, so callers can stop early.
    """
    first = _dijkstra(topology, source, target)
    if first is None:
        return
    accepted = [first]
    yield first
    candidates: list[tuple[int, tuple[NodeId, ...]]] = []
    queued = {first[1]}

    while True:
        _, prev = accepted[-1]
        for i in range(len(prev) - 1):
            root = prev[:i + 1]
            root_cost = sum(topology.link_cost(u, v) for u, v in zip(root, root[1:]))
            banned_edges = {(p[i], p[i + 1]) for _, p in accepted
                            if len(p) > i + 1 and p[:i + 1] == root}
            spur = _dijkstra(topology, root[-1], target,
                             banned_nodes=frozenset(root[:-1]),
                             banned_edges=banned_edges)
            if spur is None:
                continue
            total = root[:-1] + spur[1]
            if total in queued:
                continue
            queued.add(total)
            heapq.heappush(candidates, (root_cost + spur[0], total))
        if not candidates:
            return
        best = heapq.heappop(candidates)
        accepted.append(best)
        yield best


@dataclass
class AlternativeSet:
    routes: list[Route] = field(default_factory=list)
    costs: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.routes)

    def __iter__(self):
        return iter(self.routes)


def alternative_routes(topology: Topology, source: NodeId, target: NodeId,
                       k: int) -> AlternativeSet:
    """Up to k loopless routes in nondecreasing (cost, hop-sequence) order.

    The first route is the unconstrained shortest path. If fewer than k
    simple paths exist, all of them are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = AlternativeSet()
    for cost, hops in iter_loopless_paths(topology, source, target):
        out.routes.append(Route(hops))
        out.costs.append(cost)
        if len(out.routes) >= k:
            break
    return out


def find_trusted_route_incremental(topology: Topology, convert, source: NodeId,
                                   target: NodeId, k_step: int = 4,
                                   k_max: int = 32) -> Route | None:
    """Convert nodes along candidate routes, cheapest first, until one route
    is fully trusted.

    ``convert(node_id) -> bool`` is invoked on every untrusted interior hop
    of a route under examination (never on nodes outside examined routes);
    it may mutate the topology. Candidates arrive in batches of ``k_step``
    up to ``k_max``; if none becomes trusted, falls back to a trust-gated
    search over the (now partially converted) topology.
    """
    if k_step < 1 or k_max < k_step:
        raise ValueError("need k_step >= 1 and k_max >= k_step")
    paths = iter_loopless_paths(topology, source, target)
    examined = 0
    exhausted = False
    while examined < k_max and not exhausted:
        batch = []
        while len(batch) < min(k_step, k_max - examined):
            entry = next(paths, None)
            if entry is None:
                exhausted = True
                break
            batch.append(Route(entry[1]))
        for candidate in batch:
            viable = True
            for hop in candidate.interior:
                if is_trusted(topology.nodes[hop]):
                    continue
                if not convert(hop):
                    viable = False
                    break  # route can no longer become trusted
            if viable and all(is_trusted(topology.nodes[h]) for h in candidate.interior):
                return candidate
        examined += len(batch)
    return trusted_shortest_path(topology, source, target)
