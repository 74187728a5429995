"""The agent resident on a trusted device.

It listens on the covert channel: anything without the magic prefix gets a
byte-identical echo reply; special packets dispatch to verification or
configuration handlers and every request is answered with its paired
response instruction (1-2, 3-4, 5-6, 11-12). A deactivated agent degrades
to plain echo for everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Address

from . import bcch
from .netmodel import (PROTO_STATIC, Node, NodeId, RouteEntry, Topology, ip)

CHANGE_ADD_STATIC = 1
CHANGE_DELETE_STATIC = 2
CHANGE_ENABLE_SOURCE_ROUTING = 3
CHANGE_DISABLE_SOURCE_ROUTING = 4
CHANGE_REMOVE_AGENT = 5
CHANGE_RELOAD_OS = 6

CHANGE_KINDS = {
    "add-static-route": CHANGE_ADD_STATIC,
    "delete-static-route": CHANGE_DELETE_STATIC,
    "enable-source-routing": CHANGE_ENABLE_SOURCE_ROUTING,
    "disable-source-routing": CHANGE_DISABLE_SOURCE_ROUTING,
    "remove-agent": CHANGE_REMOVE_AGENT,
    "reload-os": CHANGE_RELOAD_OS,
}
CHANGE_NAMES = {v: k for k, v in CHANGE_KINDS.items()}


@dataclass
class AgentState:
    node: NodeId
    cipher_key: bytes = b""
    alive: bool = True
    seen_probe_ids: set[int] = field(default_factory=set)
    static_routes_installed: list[tuple[IPv4Address, IPv4Address]] = field(default_factory=list)
    # entries displaced by a static install, restored on delete: dest -> (index, entry)
    shadowed: dict[IPv4Address, tuple[int, RouteEntry]] = field(default_factory=dict)

    @property
    def cipher(self) -> bcch.Cipher:
        return bcch.cipher_for_key(self.cipher_key)


@dataclass(frozen=True)
class VerificationReport:
    agent_alive: bool
    os_unmodified_externally: bool
    rt_consistent: bool


@dataclass(frozen=True)
class ConfigChange:
    kind: str
    dest: IPv4Address | None = None
    next_hop: IPv4Address | None = None

    def __post_init__(self):
        if self.kind not in CHANGE_KINDS:
            raise ValueError(f"unknown config change {self.kind!r}")


@dataclass(frozen=True)
class ConfigAck:
    ok: bool
    detail: str = ""


def install_static_route(state: AgentState, node: Node, dest: IPv4Address,
                         next_hop: IPv4Address) -> ConfigAck:
    """Install a highest-priority /32 route; an existing entry for the same
    dest/32 is shadowed and comes back on delete."""
    dest, next_hop = ip(dest), ip(next_hop)
    for i, (d, _) in enumerate(state.static_routes_installed):
        if d == dest:  # refresh: replace our earlier install for this dest
            node.rt.remove(dest, 32)
            state.static_routes_installed.pop(i)
            break
    idx = node.rt.find(dest, 32)
    if idx is not None:
        state.shadowed[dest] = (idx, node.rt.entries[idx])
        node.rt.entries.pop(idx)
    node.rt.add(RouteEntry(dest, 32, next_hop, if_index=0, protocol_code=PROTO_STATIC))
    state.static_routes_installed.append((dest, next_hop))
    return ConfigAck(True)


def remove_static_route(state: AgentState, node: Node, dest: IPv4Address) -> ConfigAck:
    dest = ip(dest)
    for i, (d, _) in enumerate(state.static_routes_installed):
        if d == dest:
            node.rt.remove(dest, 32)
            state.static_routes_installed.pop(i)
            if dest in state.shadowed:
                idx, entry = state.shadowed.pop(dest)
                node.rt.entries.insert(idx, entry)
            return ConfigAck(True)
    return ConfigAck(False, f"no static route for {dest}")


def apply_config(state: AgentState, node: Node, change: ConfigChange) -> ConfigAck:
    """Execute one configuration change on the node this agent controls."""
    if change.kind == "add-static-route":
        if change.dest is None or change.next_hop is None:
            return ConfigAck(False, "add-static-route needs dest and next_hop")
        return install_static_route(state, node, change.dest, change.next_hop)
    if change.kind == "delete-static-route":
        if change.dest is None:
            return ConfigAck(False, "delete-static-route needs dest")
        return remove_static_route(state, node, change.dest)
    if change.kind == "enable-source-routing":
        node.source_routing_enabled = True
        return ConfigAck(True)
    if change.kind == "disable-source-routing":
        node.source_routing_enabled = False
        return ConfigAck(True)
    if change.kind == "remove-agent":
        # release the device: original OS back, agent gone
        node.agent_present = False
        node.trust_profile.d = False
        state.alive = False
        return ConfigAck(True)
    if change.kind == "reload-os":
        # reboot with the current image: agent-installed routes do not persist
        for dest, _ in list(state.static_routes_installed):
            remove_static_route(state, node, dest)
        return ConfigAck(True)
    return ConfigAck(False, f"unknown change {change.kind!r}")


def verify_self(state: AgentState, node: Node, topology: Topology) -> VerificationReport:
    """Self-test: agent liveness, external OS tampering, RT consistency
    (every next hop resolves to a live neighbor or the node itself)."""
    consistent = True
    for entry in node.rt.entries:
        owner = topology.owner(entry.next_hop)
        if owner is None:
            consistent = False
            break
        if owner != node.id and topology.link_cost(node.id, owner) is None:
            consistent = False
            break
    return VerificationReport(
        agent_alive=state.alive,
        os_unmodified_externally=not node.compromised,
        rt_consistent=consistent,
    )


def _plain_echo(env: bcch.IcmpEnvelope) -> bcch.IcmpEnvelope:
    return bcch.echo_reply_to(env, env.data)


def _wrap(state: AgentState, env: bcch.IcmpEnvelope,
          response: bcch.SpecialPacket) -> bcch.IcmpEnvelope:
    return bcch.echo_reply_to(env, bcch.encode(response, state.cipher))


def handle_envelope(state: AgentState, env: bcch.IcmpEnvelope,
                    node: Node) -> bcch.IcmpEnvelope:
    """Process one incoming echo request.

    Non-special payloads: byte-identical echo reply. Undecodable special
    packets: a non-compliance response (instruction 2, failure code).
    Otherwise dispatch on the instruction id. No exception escapes.
    """
    if not state.alive:
        return _plain_echo(env)
    cipher = state.cipher
    try:
        packet = bcch.decode(env.data, cipher)
    except bcch.MalformedPacket as exc:
        return _wrap(state, env, bcch.make_status_response(2, False, str(exc).encode()))
    except bcch.UnknownInstruction as exc:
        return _wrap(state, env, bcch.make_status_response(2, False, str(exc).encode()))
    if packet is bcch.NOT_SPECIAL:
        return _plain_echo(env)

    instr = packet.instruction_id
    if instr == 1:
        # a compromised device falls silent on verification: the manager
        # reads the resulting plain echo as "no longer trusted"
        if node.compromised:
            return _plain_echo(env)
        if IPv4Address(packet.opt12) not in node.addresses:
            return _wrap(state, env, bcch.make_status_response(2, False, b"wrong-node"))
        return _wrap(state, env, bcch.make_status_response(2, True))
    if instr == 3:
        blob = node.data_blob[:bcch.MAX_PACKET - bcch.HEADER_LEN - 8]
        return _wrap(state, env, bcch.make_data_response(4, bcch.TAG_BLOB, blob))
    if instr == 5:
        if packet.opt12 != node.id:
            return _wrap(state, env, bcch.make_status_response(6, False, b"wrong-node"))
        ack = install_static_route(state, node,
                                   IPv4Address(packet.opt20),   # destination
                                   IPv4Address(packet.opt16))   # next hop
        return _wrap(state, env, bcch.make_status_response(6, ack.ok, ack.detail.encode()))
    if instr == 11:
        if packet.opt12 != node.id:
            return _wrap(state, env, bcch.make_status_response(12, False, b"wrong-node"))
        kind = CHANGE_NAMES.get(packet.opt16)
        if kind is None:
            return _wrap(state, env, bcch.make_status_response(12, False, b"unknown-change"))
        dest = IPv4Address(packet.opt20) if packet.opt20 else None
        next_hop = IPv4Address(packet.tail[:4]) if len(packet.tail) >= 4 else None
        ack = apply_config(state, node, ConfigChange(kind, dest, next_hop))
        return _wrap(state, env, bcch.make_status_response(12, ack.ok, ack.detail.encode()))
    # DB instructions (7-10) live at the manager; everything else is
    # non-compliant traffic on this channel
    return _wrap(state, env, bcch.make_status_response(2, False, b"non-compliant"))
