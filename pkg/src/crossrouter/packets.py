"""Protocol messages exchanged with the simulated router.

Only the fields that matter to the router model are kept. DHCP, ARP, IGMP and
ICMP have a fixed big-endian wire layout so the covert-carrying fields sit at
known offsets::

    DHCP  op:1 xid:4 mac:6 req_ip:4 src_ip:4 dst_ip:4   (xid at offset 1)
    ARP   op:1 sender_ip:4 target_ip:4 mac:6            (target_ip at offset 5)
    IGMP  op:1 group:4                                  (group at offset 1)
    ICMP  op:1 ident:2 seq:2

SSH key exchange and HTTP requests are opaque :class:`ControlRequest` markers
that only carry a cost class.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass
from typing import Optional, Union

from .errors import InvariantViolation, MalformedField, TruncatedMessage

BROADCAST_MAC = 0xFFFF_FFFF_FFFF
BROADCAST_IP = 0xFFFF_FFFF
ANY_IP = 0
MULTICAST_PREFIX = 0xE000_0000  # 224.0.0.0/4
MULTICAST_MASK = 0xF000_0000

U16 = 0xFFFF
U32 = 0xFFFF_FFFF
U48 = 0xFFFF_FFFF_FFFF


def multicast_mac(group_ip: int) -> int:
    """Ethernet address of an IPv4 multicast group (01:00:5e + low 23 bits)."""
    return 0x0100_5E00_0000 | (group_ip & 0x7F_FFFF)


def ip(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


def ip_str(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


class Proto(str, enum.Enum):
    DHCP = "dhcp"
    ARP = "arp"
    IGMP = "igmp"
    ICMP = "icmp"
    CONTROL = "control"


class DhcpOp(enum.IntEnum):
    DISCOVER = 1
    OFFER = 2
    REQUEST = 3
    ACK = 5
    NAK = 6


class ArpOp(enum.IntEnum):
    REQUEST = 1
    RESPONSE = 2


class IgmpOp(enum.IntEnum):
    MEMBERSHIP_QUERY = 0x11
    JOIN = 0x16
    LEAVE = 0x17


class IcmpOp(enum.IntEnum):
    ECHO_REPLY = 0
    ECHO_REQUEST = 8


class ControlKind(str, enum.Enum):
    SSH_KEX_INIT = "ssh_kex_init"
    SSH_ABORT = "ssh_abort"
    HTTP_GET = "http_get"


class CostClass(str, enum.Enum):
    HEAVY = "heavy"
    LIGHT = "light"


def _check_range(name: str, value, limit: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= limit:
        raise InvariantViolation(f"{name}={value!r} outside 0..{limit:#x}")


@dataclass(frozen=True)
class DhcpMessage:
    op: DhcpOp
    xid: int
    client_mac: int
    requested_ip: Optional[int] = None
    src_ip: int = ANY_IP
    dst_ip: int = BROADCAST_IP

    proto = Proto.DHCP
    LAYOUT = struct.Struct(">BI6sIII")

    @property
    def is_client(self) -> bool:
        return self.op in (DhcpOp.DISCOVER, DhcpOp.REQUEST)

    def validate(self) -> None:
        if not isinstance(self.op, DhcpOp):
            raise InvariantViolation(f"unknown DHCP op {self.op!r}")
        _check_range("xid", self.xid, U32)
        _check_range("client_mac", self.client_mac, U48)
        _check_range("src_ip", self.src_ip, U32)
        _check_range("dst_ip", self.dst_ip, U32)
        if self.requested_ip is not None:
            _check_range("requested_ip", self.requested_ip, U32)
            if self.requested_ip == ANY_IP:
                raise InvariantViolation("requested_ip 0.0.0.0 is reserved for 'absent'")
        if self.is_client and (self.src_ip != ANY_IP or self.dst_ip != BROADCAST_IP):
            raise InvariantViolation("client DHCP messages go from 0.0.0.0 to 255.255.255.255")


@dataclass(frozen=True)
class ArpMessage:
    op: ArpOp
    sender_ip: int
    target_ip: int
    sender_mac: int

    proto = Proto.ARP
    LAYOUT = struct.Struct(">BII6s")

    def validate(self) -> None:
        if not isinstance(self.op, ArpOp):
            raise InvariantViolation(f"unknown ARP op {self.op!r}")
        _check_range("sender_ip", self.sender_ip, U32)
        _check_range("target_ip", self.target_ip, U32)
        _check_range("sender_mac", self.sender_mac, U48)


@dataclass(frozen=True)
class IgmpMessage:
    op: IgmpOp
    group_ip: int

    proto = Proto.IGMP
    LAYOUT = struct.Struct(">BI")

    def validate(self) -> None:
        if not isinstance(self.op, IgmpOp):
            raise InvariantViolation(f"unknown IGMP op {self.op!r}")
        _check_range("group_ip", self.group_ip, U32)
        if self.group_ip & MULTICAST_MASK != MULTICAST_PREFIX:
            raise InvariantViolation(f"group {ip_str(self.group_ip)} is not in 224.0.0.0/4")


@dataclass(frozen=True)
class IcmpMessage:
    op: IcmpOp
    ident: int
    seq: int

    proto = Proto.ICMP
    LAYOUT = struct.Struct(">BHH")

    def validate(self) -> None:
        if not isinstance(self.op, IcmpOp):
            raise InvariantViolation(f"unknown ICMP op {self.op!r}")
        _check_range("ident", self.ident, U16)
        _check_range("seq", self.seq, U16)

    def reply(self) -> "IcmpMessage":
        return IcmpMessage(IcmpOp.ECHO_REPLY, self.ident, self.seq)


@dataclass(frozen=True)
class ControlRequest:
    kind: ControlKind
    cost_class: Optional[CostClass] = None

    proto = Proto.CONTROL

    def __post_init__(self):
        if self.cost_class is None:
            heavy = self.kind is ControlKind.SSH_KEX_INIT
            object.__setattr__(self, "cost_class", CostClass.HEAVY if heavy else CostClass.LIGHT)

    def validate(self) -> None:
        expected = CostClass.HEAVY if self.kind is ControlKind.SSH_KEX_INIT else CostClass.LIGHT
        if self.cost_class is not expected:
            raise InvariantViolation(f"{self.kind.value} must have cost class {expected.value}")


ProtocolMessage = Union[DhcpMessage, ArpMessage, IgmpMessage, IcmpMessage, ControlRequest]

_WIRE = {Proto.DHCP: DhcpMessage, Proto.ARP: ArpMessage, Proto.IGMP: IgmpMessage, Proto.ICMP: IcmpMessage}
CONTROL_WIRE_SIZE = 64  # nominal size for rate accounting only


def wire_size(msg: ProtocolMessage) -> int:
    if isinstance(msg, ControlRequest):
        return CONTROL_WIRE_SIZE
    return msg.LAYOUT.size


def serialize(msg: ProtocolMessage) -> bytes:
    if isinstance(msg, ControlRequest):
        raise TypeError("control requests are opaque and have no wire layout")
    msg.validate()
    if isinstance(msg, DhcpMessage):
        return msg.LAYOUT.pack(
            int(msg.op), msg.xid, msg.client_mac.to_bytes(6, "big"),
            msg.requested_ip or ANY_IP, msg.src_ip, msg.dst_ip,
        )
    if isinstance(msg, ArpMessage):
        return msg.LAYOUT.pack(int(msg.op), msg.sender_ip, msg.target_ip, msg.sender_mac.to_bytes(6, "big"))
    if isinstance(msg, IgmpMessage):
        return msg.LAYOUT.pack(int(msg.op), msg.group_ip)
    return msg.LAYOUT.pack(int(msg.op), msg.ident, msg.seq)


def _op(enum_cls, raw: int, proto: Proto):
    try:
        return enum_cls(raw)
    except ValueError:
        raise MalformedField(f"{proto.value}: unknown op {raw:#04x}") from None


def parse(data: bytes, proto: Union[Proto, str]) -> ProtocolMessage:
    """Decode ``data`` as ``proto``. Trailing bytes (link padding) are ignored."""
    proto = Proto(proto)
    if proto not in _WIRE:
        raise MalformedField(f"{proto.value} has no wire layout")
    cls = _WIRE[proto]
    data = bytes(data)
    if len(data) < cls.LAYOUT.size:
        raise TruncatedMessage(f"{proto.value} needs {cls.LAYOUT.size} bytes, got {len(data)}")
    fields = cls.LAYOUT.unpack_from(data)
    if cls is DhcpMessage:
        op, xid, mac, req, src, dst = fields
        msg = DhcpMessage(_op(DhcpOp, op, proto), xid, int.from_bytes(mac, "big"), req or None, src, dst)
    elif cls is ArpMessage:
        op, sender, target, mac = fields
        msg = ArpMessage(_op(ArpOp, op, proto), sender, target, int.from_bytes(mac, "big"))
    elif cls is IgmpMessage:
        op, group = fields
        msg = IgmpMessage(_op(IgmpOp, op, proto), group)
    else:
        op, ident, seq = fields
        msg = IcmpMessage(_op(IcmpOp, op, proto), ident, seq)
    try:
        msg.validate()
    except InvariantViolation as exc:
        raise MalformedField(str(exc)) from None
    return msg


def _broadcast_allowed(msg: ProtocolMessage) -> bool:
    if isinstance(msg, DhcpMessage):
        return True
    if isinstance(msg, ArpMessage):
        return msg.op is ArpOp.REQUEST
    if isinstance(msg, IgmpMessage):
        return msg.op is IgmpOp.MEMBERSHIP_QUERY
    return False


@dataclass(frozen=True)
class Frame:
    src_mac: int
    dst_mac: int
    payload: ProtocolMessage
    size_bytes: int = 0

    def __post_init__(self):
        if self.size_bytes == 0:
            object.__setattr__(self, "size_bytes", max(60, wire_size(self.payload)))

    @property
    def proto(self) -> Proto:
        return self.payload.proto

    @property
    def is_broadcast(self) -> bool:
        return self.dst_mac == BROADCAST_MAC

    def validate(self) -> None:
        _check_range("src_mac", self.src_mac, U48)
        _check_range("dst_mac", self.dst_mac, U48)
        self.payload.validate()
        if self.size_bytes < wire_size(self.payload):
            raise InvariantViolation(f"size_bytes={self.size_bytes} below the message minimum")
        if self.is_broadcast and not _broadcast_allowed(self.payload):
            raise InvariantViolation(f"{type(self.payload).__name__} {self.payload.op!r} may not be broadcast")

    def summary(self) -> str:
        p = self.payload
        if isinstance(p, DhcpMessage):
            return f"{p.op.name} xid={p.xid:08x}"
        if isinstance(p, ArpMessage):
            return f"{p.op.name} target={ip_str(p.target_ip)}"
        if isinstance(p, IgmpMessage):
            return f"{p.op.name} group={ip_str(p.group_ip)}"
        if isinstance(p, IcmpMessage):
            return f"{p.op.name} id={p.ident} seq={p.seq}"
        return p.kind.value
