"""Backup control channel codec.

Special packets ride in the data field of ICMP echo envelopes. Layout, all
big-endian 4-byte words:

    offset 0   magic 0xD0C3C0FD (always cleartext)
    offset 4   packet kind: 0x00000041 'A' request / 0x00000052 'R' response
    offset 8   instruction id 1..12
    offset 12  option word
    offset 16  option word
    offset 20  option word
    offset 24  variable tail

Everything after the magic is run through a pluggable cipher, so agents can
discriminate special packets from plain pings before owning key context.
A whole packet must fit one unfragmented IP packet (cap 1400 bytes).
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address

from .netmodel import RouteEntry, ip

MAGIC = bytes.fromhex("d0c3c0fd")
HEADER_LEN = 24  # magic + kind + id + three option words
MAX_PACKET = 1400

# content tags for data-bearing responses (word at offset 12)
TAG_TEXT = 1
TAG_ROUTE = 2
TAG_RT = 3
TAG_BLOB = 4


class OversizePacket(ValueError):
    pass


class MalformedPacket(ValueError):
    pass


class UnknownInstruction(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


class _NotSpecial:
    """Sentinel: the bytes are not a special packet (plain echo payload)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NotSpecial"


NOT_SPECIAL = _NotSpecial()


class PacketKind(Enum):
    REQUEST = 0x41   # 'A'
    RESPONSE = 0x52  # 'R'


class Cipher:
    """Length-preserving payload transform; decrypt(encrypt(x)) == x."""

    def encrypt(self, data: bytes) -> bytes:
        raise NotImplementedError

    def decrypt(self, data: bytes) -> bytes:
        raise NotImplementedError


class IdentityCipher(Cipher):
    def encrypt(self, data: bytes) -> bytes:
        return data

    def decrypt(self, data: bytes) -> bytes:
        return data


class XorStreamCipher(Cipher):
    """Keyed repeating-XOR stream. A stand-in with the right shape, not a
    real cryptosystem."""

    def __init__(self, key: bytes):
        if not key:
            raise ValueError("empty cipher key")
        self.key = bytes(key)

    def encrypt(self, data: bytes) -> bytes:
        return bytes(b ^ k for b, k in zip(data, itertools.cycle(self.key)))

    decrypt = encrypt


def cipher_for_key(key: bytes) -> Cipher:
    """Identity for an empty key, keyed stream otherwise."""
    return XorStreamCipher(key) if key else IdentityCipher()


_U32 = 0xFFFFFFFF


@dataclass(frozen=True)
class SpecialPacket:
    kind: PacketKind
    instruction_id: int
    opt12: int = 0
    opt16: int = 0
    opt20: int = 0
    tail: bytes = b""

    def __post_init__(self):
        if not isinstance(self.kind, PacketKind):
            raise ValueError(f"bad packet kind {self.kind!r}")
        if not 1 <= self.instruction_id <= 12:
            raise ValueError(f"instruction id {self.instruction_id} out of range 1..12")
        for name in ("opt12", "opt16", "opt20"):
            v = getattr(self, name)
            if not 0 <= v <= _U32:
                raise ValueError(f"{name}={v} does not fit 4 bytes")


@dataclass(frozen=True)
class IcmpEnvelope:
    icmp_kind: str  # "echo-request" | "echo-reply"
    identifier: int
    sequence: int
    data: bytes


def echo_request(identifier: int, sequence: int, data: bytes) -> IcmpEnvelope:
    return IcmpEnvelope("echo-request", identifier, sequence, data)


def echo_reply_to(env: IcmpEnvelope, data: bytes) -> IcmpEnvelope:
    return IcmpEnvelope("echo-reply", env.identifier, env.sequence, data)


def encode(packet: SpecialPacket, cipher: Cipher) -> bytes:
    body = struct.pack(
        ">5I",
        packet.kind.value,
        packet.instruction_id,
        packet.opt12,
        packet.opt16,
        packet.opt20,
    ) + packet.tail
    total = len(MAGIC) + len(body)
    if total > MAX_PACKET:
        raise OversizePacket(f"encoded packet is {total} bytes (cap {MAX_PACKET})")
    return MAGIC + cipher.encrypt(body)


def decode(data: bytes, cipher: Cipher):
    """Parse bytes into a SpecialPacket, or NOT_SPECIAL when the magic prefix
    is absent (the caller then treats the envelope as a plain echo)."""
    if len(data) < 4 or data[:4] != MAGIC:
        return NOT_SPECIAL
    if len(data) < HEADER_LEN:
        raise MalformedPacket(f"special packet truncated to {len(data)} bytes")
    body = cipher.decrypt(data[4:])
    kind_word, instr, o12, o16, o20 = struct.unpack(">5I", body[:20])
    try:
        kind = PacketKind(kind_word)
    except ValueError:
        raise MalformedPacket(f"bad packet kind word 0x{kind_word:08x}") from None
    if not 1 <= instr <= 12:
        raise UnknownInstruction(f"instruction id {instr} out of range 1..12")
    return SpecialPacket(kind, instr, o12, o16, o20, body[20:])


def _addr_word(value) -> int:
    if isinstance(value, (IPv4Address, str)):
        return int(ip(value))
    return int(value)


def _payload_to_opts(payload: bytes) -> tuple[int, int, int, bytes]:
    """Spread raw payload bytes across the option words from offset 12."""
    padded = payload[:12] + b"\x00" * max(0, 12 - len(payload))
    o12, o16, o20 = struct.unpack(">3I", padded)
    return o12, o16, o20, payload[12:]


# per-instruction field schemas; odd ids are requests, even ids responses
_SCHEMAS = {
    1: ("node_addr",),
    2: ("payload",),
    3: ("node_addr",),
    4: ("payload",),
    5: ("node_id", "initial_addr", "dest_addr"),
    6: ("payload",),
    7: ("data_id",),
    8: ("payload",),
    9: ("data_id", "data"),
    10: ("payload",),
    11: ("node_id", "change_code"),
    12: ("payload",),
}
_OPTIONAL = {11: ("change_arg", "extra")}


def make_instruction(instruction_id: int, **fields) -> SpecialPacket:
    """Build a special packet for one of the twelve instructions.

    Raises SchemaViolation when the id is unknown or a required field is
    missing/unexpected for that instruction.
    """
    schema = _SCHEMAS.get(instruction_id)
    if schema is None:
        raise SchemaViolation(f"unknown instruction id {instruction_id}")
    allowed = set(schema) | set(_OPTIONAL.get(instruction_id, ()))
    missing = [f for f in schema if f not in fields]
    if missing:
        raise SchemaViolation(f"instruction {instruction_id} missing fields {missing}")
    unexpected = [f for f in fields if f not in allowed]
    if unexpected:
        raise SchemaViolation(f"instruction {instruction_id} unexpected fields {unexpected}")

    kind = PacketKind.REQUEST if instruction_id % 2 else PacketKind.RESPONSE
    o12 = o16 = o20 = 0
    tail = b""
    if instruction_id in (1, 3):
        o12 = _addr_word(fields["node_addr"])
    elif instruction_id in (2, 4, 6, 8, 10, 12):
        o12, o16, o20, tail = _payload_to_opts(bytes(fields["payload"]))
    elif instruction_id == 5:
        o12 = int(fields["node_id"])
        o16 = _addr_word(fields["initial_addr"])
        o20 = _addr_word(fields["dest_addr"])
    elif instruction_id == 7:
        o12 = int(fields["data_id"])
    elif instruction_id == 9:
        o12 = int(fields["data_id"])
        data = bytes(fields["data"])
        padded = data[:8] + b"\x00" * max(0, 8 - len(data))
        o16, o20 = struct.unpack(">2I", padded)
        tail = data[8:]
    elif instruction_id == 11:
        o12 = int(fields["node_id"])
        o16 = int(fields["change_code"])
        o20 = _addr_word(fields.get("change_arg", 0))
        tail = bytes(fields.get("extra", b""))
    return SpecialPacket(kind, instruction_id, o12, o16, o20, tail)


# ---------------------------------------------------------------------------
# response payload conventions
#
# Responses carry (word@12, length@16, bytes@20...). For status responses the
# word is 1/0 ok/fail; for data responses it is a TAG_* constant. The length
# word makes extraction exact despite zero-padding of the option words.
# ---------------------------------------------------------------------------

def _framed_payload(word: int, data: bytes) -> bytes:
    return struct.pack(">2I", word, len(data)) + data


def make_status_response(instruction_id: int, ok: bool, detail: bytes = b"") -> SpecialPacket:
    return make_instruction(instruction_id, payload=_framed_payload(1 if ok else 0, detail))


def make_data_response(instruction_id: int, tag: int, data: bytes) -> SpecialPacket:
    return make_instruction(instruction_id, payload=_framed_payload(tag, data))


def _extract_framed(packet: SpecialPacket) -> tuple[int, bytes]:
    length = packet.opt16
    raw = struct.pack(">I", packet.opt20) + packet.tail
    if length > len(raw):
        raise MalformedPacket(f"framed payload claims {length} bytes, has {len(raw)}")
    return packet.opt12, raw[:length]


def response_status(packet: SpecialPacket) -> tuple[bool, bytes]:
    word, detail = _extract_framed(packet)
    return word == 1, detail


def response_data(packet: SpecialPacket) -> tuple[int, bytes]:
    return _extract_framed(packet)


def pack_route(addresses) -> bytes:
    """Serialize an ordered hop list of addresses (route report payload)."""
    out = struct.pack(">I", len(addresses))
    for a in addresses:
        out += ip(a).packed
    return out


def unpack_route(data: bytes) -> list[IPv4Address]:
    (count,) = struct.unpack(">I", data[:4])
    if len(data) < 4 + 4 * count:
        raise MalformedPacket("route report truncated")
    return [IPv4Address(data[4 + 4 * i:8 + 4 * i]) for i in range(count)]


_RT_ENTRY = struct.Struct(">IBIHH")


def pack_routing_table(entries) -> bytes:
    """Serialize routing-table entries (RT report payload)."""
    out = struct.pack(">I", len(entries))
    for e in entries:
        out += _RT_ENTRY.pack(int(e.dest), e.mask, int(e.next_hop),
                              e.if_index, e.protocol_code)
    return out


def unpack_routing_table(data: bytes) -> list[RouteEntry]:
    (count,) = struct.unpack(">I", data[:4])
    need = 4 + _RT_ENTRY.size * count
    if len(data) < need:
        raise MalformedPacket("RT report truncated")
    entries = []
    off = 4
    for _ in range(count):
        dest, mask, nh, if_index, proto = _RT_ENTRY.unpack_from(data, off)
        off += _RT_ENTRY.size
        entries.append(RouteEntry(IPv4Address(dest), mask, IPv4Address(nh),
                                  if_index, proto))
    return entries


def hex_dump(data: bytes, width: int = 16) -> str:
    """Plain hex rendering for CLI/debug output."""
    lines = []
    for off in range(0, len(data), width):
        chunk = data[off:off + width]
        hexpart = " ".join(f"{b:02x}" for b in chunk)
        lines.append(f"{off:04x}  {hexpart}")
    return "\n".join(lines)
