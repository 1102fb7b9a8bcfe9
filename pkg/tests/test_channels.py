import numpy as np
import pytest

from crossrouter.channels import (
    PREAMBLE, ChannelSpec, ChannelClass, TimingCalibration, calibrate, check_direction, direct_receive,
    direct_saturation_symbol_rate, encode_symbols, make_spec, timing_pair, timing_receive, transmit_direct,
    transmit_timing,
)
from crossrouter.errors import ChannelTooWeak, ChannelUnsupported, GadgetUnavailable, NoPreamble, SyncLost
from crossrouter.gadgets import SenderGadget, TimingTrace
from crossrouter.harness import calibrate_channel
from crossrouter.profiles import GUEST, HOST, get_profile
from crossrouter.router import Router

TP2 = get_profile("TP2")


def test_direct_capacity_arithmetic():
    nak = TP2.mean_service_us("dhcp_nak")
    assert nak == 9800.0
    assert direct_saturation_symbol_rate("dhcp-direct", TP2) == pytest.approx(1e6 / nak)
    spec = make_spec("dhcp-direct", TP2, "h2g")
    assert spec.symbol_bits == 32 and spec.data_bits == 28 and spec.tagged
    assert spec.bit_rate == pytest.approx(0.5 * 32e6 / nak)
    assert spec.at_bit_rate(3200).symbol_rate == pytest.approx(100.0)
    igmp = make_spec("igmp-direct", TP2, "h2g")
    assert igmp.symbol_bits == 28 and not igmp.tagged
    assert direct_saturation_symbol_rate("igmp-direct", TP2) == pytest.approx(1e6 / 340_000)
    assert make_spec("arp-direct", TP2, "h2g").symbol_bits == 8
    assert make_spec("arp-direct", get_profile("DL2"), "g2h").symbol_bits == 32


def test_timing_capacity_arithmetic():
    cal = TimingCalibration(300.0, 400.0, 200.0, symbol_period=40_000.0, probe_interval_us=5_000.0,
                            saturation_probes=8)
    assert cal.gap_us == 200.0
    assert cal.probes_per_symbol == 8
    assert cal.bit_rate == pytest.approx(25.0)
    assert cal.saturation_bps == pytest.approx(25.0)
    assert cal.at_bit_rate(10.0).symbol_period == pytest.approx(100_000.0)
    with pytest.raises(ValueError):
        TimingCalibration(100.0, 400.0, 200.0, symbol_period=1.0)


def test_encode_symbols_tags_and_padding():
    spec = make_spec("dhcp-direct", TP2, "h2g")
    vals = encode_symbols([1] * 30, spec)
    assert vals == [(0 << 28) | (2**28 - 1), (1 << 28) | (0b11 << 26)]


def test_spec_validation():
    with pytest.raises(ValueError):
        ChannelSpec("arp-arp", ChannelClass.DIRECT, HOST, GUEST)
    with pytest.raises(ValueError):
        ChannelSpec("arp-arp", ChannelClass.TIMING, HOST, HOST)


def test_unsupported_channels():
    with pytest.raises(ChannelUnsupported):
        transmit_direct("igmp-direct", "DL1", "h2g", b"x")
    with pytest.raises(ChannelUnsupported):
        transmit_direct("dhcp-direct", "TP2", "g2h", b"x")
    spec = make_spec("icmp-icmp", TP2, "g2h")
    with pytest.raises(ChannelUnsupported):
        check_direction(spec, TP2)
    with pytest.raises(GadgetUnavailable):
        calibrate_channel("icmp-icmp", TP2, "g2h")


def test_direct_round_trip():
    for profile, direction in (("TP2", "h2g"), ("DL2", "g2h"), ("DL2", "h2g")):
        for name in ("dhcp-direct", "igmp-direct", "arp-direct"):
            tx = transmit_direct(name, profile, direction, b"hello", seed=1)
            assert tx.payload == b"hello" and tx.ber == 0.0, (name, profile, direction)


def test_empty_sniff_is_no_preamble():
    with pytest.raises(NoPreamble):
        direct_receive(make_spec("dhcp-direct", TP2, "h2g"), [])


def test_all_idle_trace_loses_sync():
    cal = TimingCalibration(300.0, 400.0, 200.0, symbol_period=40_000.0)
    n = 400
    trace = TimingTrace(np.arange(n), np.arange(n) * 5_000.0, np.full(n, 200.0), np.zeros(n, bool), 2000.0)
    with pytest.raises(SyncLost) as info:
        timing_receive(make_spec("arp-arp", TP2, "g2h"), cal, trace)
    assert info.value.matches == PREAMBLE.count(0)


def test_zero_rate_sender_is_too_weak():
    spec = make_spec("arp-arp", TP2, "g2h")
    _, receiver = timing_pair(spec, TP2)
    with pytest.raises(ChannelTooWeak) as info:
        calibrate(spec, SenderGadget("arp_flood", 0.0, GUEST), receiver, Router(TP2), n=200)
    assert info.value.p_value == 1.0


def test_uncoupled_pairing_is_too_weak():
    with pytest.raises(ChannelTooWeak):
        calibrate_channel("arp-arp", "DL1", "g2h")


def test_timing_round_trip():
    cal = calibrate_channel("arp-arp", TP2, "g2h")
    assert cal.p_value < 0.05 and cal.bit_rate <= cal.saturation_bps / 2
    tx = transmit_timing("arp-arp", TP2, "g2h", b"hi", cal, seed=2)
    assert tx.payload == b"hi" and tx.ber == 0.0


def test_timing_wrong_direction():
    cal = calibrate_channel("arp-csrf", TP2, "g2h")
    with pytest.raises(ChannelUnsupported):
        transmit_timing("arp-csrf", TP2, "h2g", b"x", cal)
