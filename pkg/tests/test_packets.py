import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from crossrouter.errors import InvariantViolation, MalformedField, TruncatedMessage
from crossrouter.packets import (
    BROADCAST_IP, BROADCAST_MAC, ArpMessage, ArpOp, ControlKind, ControlRequest, CostClass, DhcpMessage, DhcpOp,
    Frame, IcmpMessage, IcmpOp, IgmpMessage, IgmpOp, Proto, ip, multicast_mac, parse, serialize, wire_size,
)

u32 = st.integers(0, 2**32 - 1)
u48 = st.integers(0, 2**48 - 1)
u16 = st.integers(0, 2**16 - 1)
groups = st.integers(0, 2**28 - 1).map(lambda g: 0xE000_0000 | g)


@st.composite
def dhcp_messages(draw):
    op = draw(st.sampled_from(list(DhcpOp)))
    req = draw(st.one_of(st.none(), st.integers(1, 2**32 - 1)))
    if op in (DhcpOp.DISCOVER, DhcpOp.REQUEST):
        return DhcpMessage(op, draw(u32), draw(u48), req)
    return DhcpMessage(op, draw(u32), draw(u48), req, draw(u32), draw(u32))


messages = st.one_of(
    dhcp_messages(),
    st.builds(ArpMessage, st.sampled_from(list(ArpOp)), u32, u32, u48),
    st.builds(IgmpMessage, st.sampled_from(list(IgmpOp)), groups),
    st.builds(IcmpMessage, st.sampled_from(list(IcmpOp)), u16, u16),
)


@settings(max_examples=10_000, deadline=None)
@given(messages)
def test_round_trip(msg):
    data = serialize(msg)
    assert len(data) == wire_size(msg)
    assert parse(data, msg.proto) == msg


def test_known_bytes():
    arp = ArpMessage(ArpOp.REQUEST, ip("192.168.1.50"), ip("192.168.1.1"), 0x0200_0000_2001)
    assert serialize(arp) == bytes([1, 192, 168, 1, 50, 192, 168, 1, 1, 2, 0, 0, 0, 0x20, 1])
    assert serialize(IcmpMessage(IcmpOp.ECHO_REQUEST, 0x4242, 7)) == b"\x08\x42\x42\x00\x07"
    assert serialize(IgmpMessage(IgmpOp.JOIN, ip("239.1.2.3"))) == b"\x16\xef\x01\x02\x03"


def test_trailing_bytes_ignored():
    msg = IcmpMessage(IcmpOp.ECHO_REPLY, 1, 2)
    assert parse(serialize(msg) + b"junk", Proto.ICMP) == msg


def test_truncated_and_malformed():
    with pytest.raises(TruncatedMessage):
        parse(b"\x01\x02", Proto.ARP)
    with pytest.raises(MalformedField):
        parse(b"\x09" + bytes(14), Proto.ARP)
    with pytest.raises(MalformedField):
        parse(b"\x16\x01\x02\x03\x04", Proto.IGMP)  # not multicast


def test_invariants():
    with pytest.raises(InvariantViolation):
        serialize(IgmpMessage(IgmpOp.JOIN, ip("10.0.0.1")))
    with pytest.raises(InvariantViolation):
        serialize(IcmpMessage(IcmpOp.ECHO_REQUEST, 70000, 0))
    with pytest.raises(InvariantViolation):
        DhcpMessage(DhcpOp.REQUEST, 1, 2, src_ip=ip("1.2.3.4")).validate()
    with pytest.raises(InvariantViolation):
        DhcpMessage(DhcpOp.REQUEST, 1, 2, requested_ip=0).validate()
    with pytest.raises(InvariantViolation):
        ControlRequest(ControlKind.HTTP_GET, CostClass.HEAVY).validate()
    assert ControlRequest(ControlKind.SSH_KEX_INIT).cost_class is CostClass.HEAVY


def test_frame_broadcast_rules():
    Frame(1, BROADCAST_MAC, DhcpMessage(DhcpOp.REQUEST, 1, 1)).validate()
    Frame(1, BROADCAST_MAC, ArpMessage(ArpOp.REQUEST, 1, 2, 1)).validate()
    Frame(1, BROADCAST_MAC, IgmpMessage(IgmpOp.MEMBERSHIP_QUERY, ip("224.0.0.1"))).validate()
    with pytest.raises(InvariantViolation):
        Frame(1, BROADCAST_MAC, IcmpMessage(IcmpOp.ECHO_REQUEST, 1, 1)).validate()
    with pytest.raises(InvariantViolation):
        Frame(1, BROADCAST_MAC, IgmpMessage(IgmpOp.JOIN, ip("239.0.0.1"))).validate()
    g = ip("239.129.2.3")
    assert multicast_mac(g) == 0x01005E010203
    assert Frame(1, 2, IcmpMessage(IcmpOp.ECHO_REQUEST, 1, 1)).size_bytes == 60


def test_dhcp_absent_requested_ip():
    msg = DhcpMessage(DhcpOp.DISCOVER, 5, 6)
    assert parse(serialize(msg), "dhcp").requested_ip is None
    assert msg.dst_ip == BROADCAST_IP


def test_parser_fuzz():
    rng = random.Random(1234)
    lengths = {p: struct.calcsize(c.LAYOUT.format) for p, c in
               ((Proto.DHCP, DhcpMessage), (Proto.ARP, ArpMessage), (Proto.IGMP, IgmpMessage), (Proto.ICMP, IcmpMessage))}
    protos = list(lengths)
    for i in range(100_000):
        proto = protos[i % 4]
        n = rng.randint(0, lengths[proto] + 4)
        data = bytes(rng.getrandbits(8) for _ in range(n))
        try:
            msg = parse(data, proto)
        except (TruncatedMessage, MalformedField):
            continue
        assert parse(serialize(msg), proto) == msg
