"""Static network model: nodes, links, addresses, routing tables and the trust gate.

Everything here is a plain in-memory value; no I/O. Addresses are
``ipaddress.IPv4Address`` throughout (exact dotted-quad round-trips, 4-byte
packing for the wire codec).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from ipaddress import IPv4Address

NodeId = int

# protocol_code values for routing-table entries; lower wins prefix-length ties,
# so agent-installed static routes beat anything auto-generated.
PROTO_STATIC = 1
PROTO_IGP = 3


def ip(value) -> IPv4Address:
    """Coerce a dotted-quad string or 32-bit integer to an IPv4Address."""
    if isinstance(value, IPv4Address):
        return value
    return IPv4Address(value)


@dataclass
class TrustProfile:
    """Per-node trust signals.

    ``b`` (flagged untrusted by country/corporation) and the agent flag ``d``
    gate trust; ``a`` (location authentication) and ``c`` (ping-derived
    location check) are advisory metadata.
    """

    a: bool = False
    b: bool = False
    c: bool = False
    d: bool = False


@dataclass(frozen=True)
class RouteEntry:
    dest: IPv4Address
    mask: int
    next_hop: IPv4Address
    if_index: int = 1
    protocol_code: int = PROTO_IGP

    def __post_init__(self):
        if not 0 <= self.mask <= 32:
            raise ValueError(f"mask {self.mask} out of range 0..32")

    def matches(self, addr: IPv4Address) -> bool:
        if self.mask == 0:
            return True
        shift = 32 - self.mask
        return int(self.dest) >> shift == int(addr) >> shift


@dataclass
class RoutingTable:
    entries: list[RouteEntry] = field(default_factory=list)

    def add(self, entry: RouteEntry) -> None:
        if self.find(entry.dest, entry.mask) is not None:
            raise ValueError(f"duplicate entry for {entry.dest}/{entry.mask}")
        self.entries.append(entry)

    def find(self, dest: IPv4Address, mask: int) -> int | None:
        for i, e in enumerate(self.entries):
            if e.dest == dest and e.mask == mask:
                return i
        return None

    def remove(self, dest: IPv4Address, mask: int) -> RouteEntry:
        i = self.find(dest, mask)
        if i is None:
            raise KeyError(f"no entry for {dest}/{mask}")
        return self.entries.pop(i)

    def lookup(self, addr: IPv4Address) -> RouteEntry | None:
        """Longest-prefix match; ties broken by lowest protocol_code, then
        lowest next_hop value."""
        best = None
        best_key = None
        for e in self.entries:
            if not e.matches(addr):
                continue
            key = (-e.mask, e.protocol_code, int(e.next_hop))
            if best_key is None or key < best_key:
                best, best_key = e, key
        return best

    def snapshot(self) -> tuple[RouteEntry, ...]:
        return tuple(self.entries)

    def copy(self) -> "RoutingTable":
        return RoutingTable(list(self.entries))


@dataclass
class Node:
    id: NodeId
    addresses: list[IPv4Address]
    rt: RoutingTable = field(default_factory=RoutingTable)
    agent_present: bool = False
    convertible: bool = False
    compromised: bool = False
    trust_profile: TrustProfile = field(default_factory=TrustProfile)
    kind: str = "router"  # "router" | "host"
    snmp_enabled: bool = True
    source_routing_enabled: bool = True
    data_blob: bytes = b""  # what a data-read instruction returns

    @property
    def primary_address(self) -> IPv4Address:
        return self.addresses[0]


@dataclass(frozen=True)
class Link:
    a: NodeId
    b: NodeId
    cost: int = 1

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("self-loop link")
        if self.cost < 1:
            raise ValueError("link cost must be >= 1")

    @property
    def endpoints(self) -> tuple[NodeId, NodeId]:
        return (self.a, self.b)


def link(a: NodeId, b: NodeId, cost: int = 1) -> Link:
    """Normalized link constructor (endpoints stored low-id first)."""
    return Link(min(a, b), max(a, b), cost)


@dataclass(frozen=True)
class Route:
    hops: tuple[NodeId, ...]

    def __post_init__(self):
        if not self.hops:
            raise ValueError("empty route")
        if len(set(self.hops)) != len(self.hops):
            raise ValueError("route repeats a node")

    @property
    def source(self) -> NodeId:
        return self.hops[0]

    @property
    def destination(self) -> NodeId:
        return self.hops[-1]

    @property
    def interior(self) -> tuple[NodeId, ...]:
        return self.hops[1:-1]

    def cost(self, topology: "Topology") -> int:
        total = 0
        for u, v in zip(self.hops, self.hops[1:]):
            c = topology.link_cost(u, v)
            if c is None:
                raise ValueError(f"route hops {u}-{v} share no link")
            total += c
        return total


def route(hops) -> Route:
    return Route(tuple(hops))


class Topology:
    """Node and link store with address and adjacency lookups."""

    def __init__(self, nodes: dict[NodeId, Node] | None = None,
                 links: list[Link] | None = None):
        self.nodes: dict[NodeId, Node] = dict(nodes or {})
        self.links: list[Link] = list(links or [])
        self._adj: dict[NodeId, dict[NodeId, int]] | None = None
        self._owners: dict[IPv4Address, NodeId] | None = None

    def invalidate(self) -> None:
        self._adj = None
        self._owners = None

    def add_node(self, node: Node) -> None:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id}")
        self.nodes[node.id] = node
        self.invalidate()

    def add_link(self, a: NodeId, b: NodeId, cost: int = 1) -> None:
        lk = link(a, b, cost)
        if self.link_cost(a, b) is not None:
            raise ValueError(f"duplicate link {a}-{b}")
        self.links.append(lk)
        self.invalidate()

    def remove_link(self, a: NodeId, b: NodeId) -> None:
        lk = link(a, b, 1)
        self.links = [l for l in self.links if (l.a, l.b) != (lk.a, lk.b)]
        self.invalidate()

    def _adjacency(self) -> dict[NodeId, dict[NodeId, int]]:
        if self._adj is None:
            adj: dict[NodeId, dict[NodeId, int]] = {n: {} for n in self.nodes}
            for lk in self.links:
                adj[lk.a][lk.b] = lk.cost
                adj[lk.b][lk.a] = lk.cost
            self._adj = adj
        return self._adj

    def neighbors(self, nid: NodeId) -> list[NodeId]:
        return sorted(self._adjacency().get(nid, {}))

    def link_cost(self, a: NodeId, b: NodeId) -> int | None:
        return self._adjacency().get(a, {}).get(b)

    def owner(self, addr: IPv4Address) -> NodeId | None:
        if self._owners is None:
            owners: dict[IPv4Address, NodeId] = {}
            for n in self.nodes.values():
                for a in n.addresses:
                    owners[a] = n.id
            self._owners = owners
        return self._owners.get(addr)

    def clone(self) -> "Topology":
        return copy.deepcopy(self)

    def validate(self) -> list[str]:
        """Return a list of invariant violations (empty when sound)."""
        problems = []
        seen_addrs: dict[IPv4Address, NodeId] = {}
        for n in self.nodes.values():
            if not n.addresses:
                problems.append(f"node {n.id} has no addresses")
            if n.kind not in ("router", "host"):
                problems.append(f"node {n.id} has unknown kind {n.kind!r}")
            if n.trust_profile.d != n.agent_present:
                problems.append(f"node {n.id}: trust d flag and agent_present disagree")
            for a in n.addresses:
                if a in seen_addrs:
                    problems.append(f"address {a} owned by nodes {seen_addrs[a]} and {n.id}")
                seen_addrs[a] = n.id
            seen_pairs = set()
            for e in n.rt.entries:
                if (e.dest, e.mask) in seen_pairs:
                    problems.append(f"node {n.id}: duplicate RT entry {e.dest}/{e.mask}")
                seen_pairs.add((e.dest, e.mask))
        pairs = set()
        for lk in self.links:
            for end in lk.endpoints:
                if end not in self.nodes:
                    problems.append(f"link {lk.a}-{lk.b} references missing node {end}")
            if (lk.a, lk.b) in pairs:
                problems.append(f"duplicate link {lk.a}-{lk.b}")
            pairs.add((lk.a, lk.b))
        return problems


def is_trusted(node: Node) -> bool:
    """A device is trusted iff an agent is resident, it is not compromised,
    and it is not flagged known-untrusted. The a/c signals do not gate."""
    return node.agent_present and not node.compromised and not node.trust_profile.b


def forwarding_next_hop(topology: Topology, at: NodeId, dest: IPv4Address) -> NodeId | None:
    """Longest-prefix forwarding decision at one node.

    Returns the node owning the winning entry's next_hop (possibly ``at``
    itself for connected routes), or None when nothing matches.
    """
    entry = topology.nodes[at].rt.lookup(dest)
    if entry is None:
        return None
    return topology.owner(entry.next_hop)


def node_by_address(topology: Topology, addr: IPv4Address) -> NodeId | None:
    return topology.owner(addr)
