"""Simulated route and routing-table acquisition.

Four acquisition methods and their shared forwarding walk:

* SNMP MIB walk of the route table (get-next over ipRouteEntry),
* BGP session transfer (updates batched by next hop),
* record-route tracing (IP option, capacity 9 transit addresses),
* TTL tracing (ICMP probes in groups of three, Time Exceeded /
  Unreachable Port terminators),

plus derivation of the active route from stored (not live) tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Address

from .netmodel import (NodeId, Route, RouteEntry, RoutingTable, Topology,
                       forwarding_next_hop)

IPROUTE_TABLE_OID = "1.3.6.1.2.1.4.21"
IPROUTE_ENTRY_OID = "1.3.6.1.2.1.4.21.1"
TRACE_DEST_PORT = 33434
RECORD_ROUTE_CAPACITY = 9  # transit addresses an IPv4 record-route option holds
BGP_HOLD_TIME = 180


class DiscoveryError(Exception):
    pass


class Unreachable(DiscoveryError):
    pass


class SnmpDisabled(DiscoveryError):
    pass


class SessionBroken(DiscoveryError):
    """BGP keep-alive stopped mid-transfer; carries the entries received."""

    def __init__(self, partial_entries):
        super().__init__(f"session broken after {len(partial_entries)} entries")
        self.partial_entries = list(partial_entries)


class NoRoute(DiscoveryError):
    pass


class RoutingLoop(DiscoveryError):
    pass


class RecordRouteFull(DiscoveryError):
    pass


class MissingRt(DiscoveryError):
    pass


@dataclass(frozen=True)
class SnmpWalkRequest:
    target: NodeId
    base_oid: str = IPROUTE_ENTRY_OID

    def __post_init__(self):
        if self.base_oid != IPROUTE_ENTRY_OID:
            raise ValueError(f"base_oid must be {IPROUTE_ENTRY_OID}")


@dataclass
class BgpSession:
    peer: NodeId
    version: int = 4
    as_number: int = 0
    hold_time: int = BGP_HOLD_TIME
    state: str = "open"  # open | transferring | closed


@dataclass(frozen=True)
class BgpUpdate:
    next_hop: IPv4Address
    networks: tuple[tuple[IPv4Address, int], ...]
    as_path: tuple[int, ...] = ()
    unfeasible_routes: tuple = ()


@dataclass(frozen=True)
class TraceProbe:
    ttl: int
    dest_port: int = TRACE_DEST_PORT
    group_index: int = 1


@dataclass(frozen=True)
class IcmpObservation:
    kind: str  # "time-exceeded" | "unreachable-port"
    node: NodeId
    ttl: int


def _owner_or_raise(topology: Topology, addr: IPv4Address) -> NodeId:
    owner = topology.owner(addr)
    if owner is None:
        raise NoRoute(f"no node owns {addr}")
    return owner


def _forward_step(topology: Topology, current: NodeId, dst: NodeId,
                  dst_addr: IPv4Address, lookup) -> NodeId:
    """One forwarding decision; raises NoRoute on dead ends or dead links."""
    nh = lookup(current)
    if nh is None:
        raise NoRoute(f"node {current} has no route toward {dst_addr}")
    if nh == current:
        # connected route: deliver directly if the owner is adjacent
        if topology.link_cost(current, dst) is None:
            raise NoRoute(
                f"node {current} claims {dst_addr} connected but owner is not adjacent")
        return dst
    if topology.link_cost(current, nh) is None:
        raise NoRoute(f"node {current} forwards to {nh} but the link is gone")
    return nh


def forwarding_walk(topology: Topology, src: NodeId, dst_addr: IPv4Address,
                    lookup=None) -> list[NodeId]:
    """Follow per-hop forwarding decisions from src to the owner of dst_addr.

    ``lookup(at) -> NodeId | None`` defaults to the live tables. Raises
    NoRoute on a dead end or a next hop without a live link, RoutingLoop when
    a node repeats.
    """
    if lookup is None:
        lookup = lambda at: forwarding_next_hop(topology, at, dst_addr)
    dst = _owner_or_raise(topology, dst_addr)
    path = [src]
    seen = {src}
    current = src
    while current != dst:
        nh = _forward_step(topology, current, dst, dst_addr, lookup)
        if nh in seen:
            raise RoutingLoop(f"node {nh} revisited on the way to {dst_addr}")
        path.append(nh)
        seen.add(nh)
        current = nh
    return path


def _check_reachable(topology: Topology, manager: NodeId, target: NodeId) -> None:
    if manager == target:
        return
    try:
        forwarding_walk(topology, manager, topology.nodes[target].primary_address)
    except DiscoveryError as exc:
        raise Unreachable(f"node {target} unreachable from {manager}: {exc}") from exc


def snmp_walk_rt(topology: Topology, manager: NodeId, target: NodeId) -> RoutingTable:
    """Fetch the target's routing table by simulated get-next iteration.

    Entries come back verbatim in stored order (MIB lexicographic ordering
    is not simulated).
    """
    _check_reachable(topology, manager, target)
    node = topology.nodes[target]
    if not node.snmp_enabled:
        raise SnmpDisabled(f"node {target} does not answer SNMP")
    SnmpWalkRequest(target)  # fixed ipRouteEntry OID
    fetched = []
    for entry in node.rt.entries:  # one get-next round trip per record
        fetched.append(entry)
    return RoutingTable(fetched)


def batch_bgp_updates(entries) -> list[BgpUpdate]:
    """Group maximal consecutive runs of entries sharing a next hop into one
    update each; order is preserved."""
    updates: list[BgpUpdate] = []
    run: list[RouteEntry] = []
    for entry in entries:
        if run and entry.next_hop != run[-1].next_hop:
            updates.append(BgpUpdate(run[-1].next_hop,
                                     tuple((e.dest, e.mask) for e in run)))
            run = []
        run.append(entry)
    if run:
        updates.append(BgpUpdate(run[-1].next_hop,
                                 tuple((e.dest, e.mask) for e in run)))
    return updates


def bgp_fetch_rt(topology: Topology, manager: NodeId, target: NodeId,
                 break_after_updates: int | None = None) -> RoutingTable:
    """Fetch the target's routing table over a BGP session.

    Yields the same table as the SNMP walk. ``break_after_updates`` injects a
    keep-alive loss after that many updates (SessionBroken carries the
    partial entries).
    """
    _check_reachable(topology, manager, target)
    node = topology.nodes[target]
    session = BgpSession(peer=target)
    session.state = "transferring"
    # reconstruct entry attributes per network from the stored table
    by_key = {(e.dest, e.mask): e for e in node.rt.entries}
    received: list[RouteEntry] = []
    for count, update in enumerate(batch_bgp_updates(node.rt.entries)):
        if break_after_updates is not None and count >= break_after_updates:
            session.state = "closed"
            raise SessionBroken(received)
        for dest, mask in update.networks:
            src = by_key[(dest, mask)]
            received.append(RouteEntry(dest, mask, update.next_hop,
                                       src.if_index, src.protocol_code))
    session.state = "closed"
    return RoutingTable(received)


def trace_record_route(topology: Topology, src: NodeId, dst_addr: IPv4Address) -> Route:
    """Trace the active route with the record-route IP option.

    Every transit router stamps its address; the destination reports the
    accumulated list. More than 9 transit hops overflow the option.
    """
    path = forwarding_walk(topology, src, dst_addr)
    transit = len(path) - 2
    if transit > RECORD_ROUTE_CAPACITY:
        raise RecordRouteFull(
            f"{transit} transit hops exceed the {RECORD_ROUTE_CAPACITY}-address option")
    return Route(tuple(path))


def trace_icmp(topology: Topology, src: NodeId, dst_addr: IPv4Address,
               log: list | None = None) -> Route:
    """Trace the active route with TTL-limited probes.

    Probes go out in groups of three per TTL; the hop where TTL expires
    answers Time Exceeded, the destination answers Unreachable Port (the
    probes carry an invalid port on purpose). Appends TraceProbe and
    IcmpObservation records to ``log`` when given.
    """
    dst = _owner_or_raise(topology, dst_addr)
    hops = [src]
    if src == dst:
        return Route((src,))
    limit = len(topology.nodes)
    lookup = lambda at: forwarding_next_hop(topology, at, dst_addr)
    for ttl in range(1, limit + 1):
        if log is not None:
            for g in (1, 2, 3):
                log.append(TraceProbe(ttl=ttl, group_index=g))
        # each probe group walks from the source; TTL decrements per hop
        current = src
        reached = None
        for _ in range(ttl):
            current = _forward_step(topology, current, dst, dst_addr, lookup)
            if current == dst:
                reached = dst
                break
        if reached is not None:
            if log is not None:
                log.append(IcmpObservation("unreachable-port", dst, ttl))
            hops.append(dst)
            return Route(tuple(hops))
        if current in hops:
            raise RoutingLoop(f"node {current} answered twice on the way to {dst_addr}")
        if log is not None:
            log.append(IcmpObservation("time-exceeded", current, ttl))
        hops.append(current)
    raise RoutingLoop(f"no terminus within {limit} hops toward {dst_addr}")


def derive_active_route(rts: dict[NodeId, RoutingTable], topology: Topology,
                        src_addr: IPv4Address, dst_addr: IPv4Address) -> Route:
    """Walk the stored (not live) tables from the owner of src_addr to the
    owner of dst_addr."""
    src = _owner_or_raise(topology, src_addr)

    def lookup(at: NodeId) -> NodeId | None:
        if at not in rts:
            raise MissingRt(f"no stored routing table for node {at}")
        entry = rts[at].lookup(dst_addr)
        if entry is None:
            return None
        return topology.owner(entry.next_hop)

    path = forwarding_walk(topology, src, dst_addr, lookup=lookup)
    return Route(tuple(path))
