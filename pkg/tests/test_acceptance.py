"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest -v tests/test_acceptance.py``; the terminal summary lists
PASS/FAIL per criterion.
"""

import os
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from crossrouter.channels import TIMING_CHANNELS, DIRECT_CHANNELS, transmit_direct, transmit_timing
from crossrouter.detection import (
    MitigationConfig, apply_mitigation, correlate_segments, permutation_p, rate_monitor, t_test,
)
from crossrouter.errors import ChannelTooWeak, ChannelUnsupported, MalformedField, TruncatedMessage
from crossrouter.framing import deframe, frame_payload
from crossrouter.gadgets import SenderGadget, SenderKind, run_sender
from crossrouter.harness import (
    attack_timeline, background, ber_sweep, calibrate_channel, cliff_midpoint, mean_rtt_by_load, random_payload,
    support_matrix, transmission_timeline,
)
from crossrouter.packets import (
    ArpMessage, ArpOp, DhcpMessage, DhcpOp, IcmpMessage, IcmpOp, IgmpMessage, IgmpOp, Proto, parse, serialize,
)
from crossrouter.profiles import BUILTIN_ORDER, GUEST, HOST, get_profile
from crossrouter.router import Router, Simulation

pytestmark = pytest.mark.slow

EXPECTED_MATRIX = {
    "dhcp-direct": "⇐ ⇐ -- ⇔ -- ⇔ --",
    "igmp-direct": "⇐ ⇐ -- ⇔ -- ⇔ --",
    "arp-direct":  "⇐ ⇐ -- ⇔ -- ⇔ --",
    "arp-ssh":     "⇒ ⇒ -- -- -- -- --",
    "arp-arp":     "⇔ ⇔ -- ⇔ ⇐ ⇔ ⇔",
    "arp-csrf":    "⇔ ⇒ ⇔ ⇒ ⇔ ⇒ ⇒",
    "icmp-icmp":   "-- -- -- -- ⇔ -- ⇔",
    "dhcp-arp":    "⇔ ⇔ ⇔ ⇔ ⇒ ⇐ ⇔",
}
ARROW_DIRECTIONS = {"⇔": ("g2h", "h2g"), "⇒": ("g2h",), "⇐": ("h2g",), "--": ()}

# one supporting profile per (channel, direction) for round trips
ROUND_TRIP_PLAN = [
    ("arp-arp", "TP2", "g2h"), ("arp-arp", "TP2", "h2g"),
    ("arp-csrf", "TP2", "g2h"), ("arp-csrf", "TP1", "h2g"),
    ("arp-ssh", "TP2", "g2h"),
    ("icmp-icmp", "ED1", "g2h"), ("icmp-icmp", "ED1", "h2g"),
    ("dhcp-arp", "TP2", "g2h"), ("dhcp-arp", "TP2", "h2g"),
    ("dhcp-direct", "TP2", "h2g"), ("dhcp-direct", "DL2", "g2h"),
    ("igmp-direct", "TP2", "h2g"), ("igmp-direct", "DL2", "g2h"),
    ("arp-direct", "TP2", "h2g"), ("arp-direct", "DL2", "g2h"),
]


def test_c01_support_matrix(criterion):
    criterion("1: measured support matrix equals the reference table (56 cells, < 2 min)")
    t0 = time.perf_counter()
    cells = support_matrix()
    elapsed = time.perf_counter() - t0
    got = {ch: " ".join(cells[(ch, m)] for m in BUILTIN_ORDER) for ch in EXPECTED_MATRIX}
    assert len(cells) == 56
    assert got == EXPECTED_MATRIX
    assert elapsed < 120.0


def test_c02_dhcp_direct_cliff(criterion):
    criterion("2: DHCP direct on TP2 is clean up to 3000 bps and collapses from 4000 bps")
    low = [500, 1000, 1500, 2000, 2500, 3000]
    high = [4000, 5000, 6000]
    mid = [3100, 3200, 3300, 3400, 3500, 3600, 3700, 3800, 3900]
    res = ber_sweep("dhcp-direct", "TP2", low + mid + high, payload_size=256, seeds=5)
    ber = {r: b for r, b, _ in res.sweep}
    assert all(ber[r] < 0.05 for r in low), ber
    assert all(ber[r] >= 0.2 for r in high), ber
    assert 2800 <= cliff_midpoint(res.sweep) <= 3600


def test_c03_igmp_direct_cliff(criterion):
    criterion("3: IGMP direct on TP2 is clean at <= 80 bps and fails above 170 bps")
    low = [20, 40, 60, 80]
    high = [180, 250, 400]
    res = ber_sweep("igmp-direct", "TP2", low + high, payload_size=256, seeds=5)
    ber = {r: b for r, b, _ in res.sweep}
    assert all(ber[r] < 0.1 for r in low), ber
    assert all(ber[r] > 0.5 for r in high), ber


def test_c04_timing_pairings(criterion):
    criterion("4: every supported timing pairing is significant; every unsupported one is rejected")
    failures = []
    for ch in TIMING_CHANNELS:
        for model, arrow in zip(BUILTIN_ORDER, EXPECTED_MATRIX[ch].split()):
            prof = get_profile(model)
            for direction in ("g2h", "h2g"):
                supported = direction in ARROW_DIRECTIONS[arrow]
                try:
                    cal = calibrate_channel(ch, prof, direction, n=1000)
                    ok = supported and cal.p_value < 0.05
                except (ChannelUnsupported, ChannelTooWeak):
                    ok = not supported
                if not ok:
                    failures.append((ch, model, direction))
    for ch in DIRECT_CHANNELS:
        for model, arrow in zip(BUILTIN_ORDER, EXPECTED_MATRIX[ch].split()):
            for direction in ("g2h", "h2g"):
                if direction in ARROW_DIRECTIONS[arrow]:
                    continue
                with pytest.raises(ChannelUnsupported):
                    transmit_direct(ch, model, direction, b"x")
    assert failures == []


def test_c05_icmp_latency_monotone(criterion):
    criterion("5: mean ICMP RTT on LS1 strictly increases with guest load 0..1000 pps")
    loads = list(range(0, 1001, 100))
    means = mean_rtt_by_load("icmp-icmp", "LS1", loads, seeds=range(5), direction="g2h")
    assert np.all(np.diff(means) > 0), means


def test_c06_round_trip(criterion):
    criterion("6: 256-byte payloads round-trip with BER 0 on 10/10 seeds for every supported channel")
    bad = []
    for ch, model, direction in ROUND_TRIP_PLAN:
        router = Router(get_profile(model))
        cal = None
        if ch in TIMING_CHANNELS:
            cal = calibrate_channel(ch, router, direction)
            assert cal.bit_rate <= cal.saturation_bps / 2
        for seed in range(10):
            payload = random_payload(seed, 256)
            if cal is not None:
                tx = transmit_timing(ch, router, direction, payload, cal, seed=seed)
            else:
                tx = transmit_direct(ch, router, direction, payload, seed=seed)
            if tx.ber != 0.0 or tx.payload != payload:
                bad.append((ch, model, direction, seed, tx.ber))
    assert bad == []


def _independent_bursts(seed=0):
    sim = Simulation("TP2", seed=seed)
    background(sim, 0.5, 0.0, 60e6)
    run_sender(SenderGadget(SenderKind.ARP_FLOOD, 200.0, GUEST), sim, 15e6, 5e6, name="guest-burst")
    run_sender(SenderGadget(SenderKind.ARP_FLOOD, 200.0, HOST), sim, 35e6, 5e6, name="host-burst")
    sim.run()
    return sim.timeline()


def test_c07_detection(criterion):
    criterion("7: rate monitor flags 100% of attack windows and 0% idle; correlation fires only on the channel")
    attack = attack_timeline(seed=0, attack_pps=1000.0, duration_us=10e6)
    flagged = {a.window_start for a in rate_monitor(attack, end_us=10e6) if a.segment == "guest" and a.proto == "arp"}
    assert len(flagged) == 10
    idle = attack_timeline(seed=0, duration_us=10e6, attack=False)
    assert rate_monitor(idle, end_us=10e6) == []

    tl, start, end = transmission_timeline("arp-arp", "TP2", "g2h", seed=0)
    alarms = correlate_segments(tl.select(HOST), tl.select(GUEST))
    assert alarms and all(start <= a.window_start <= end for a in alarms)

    neg = _independent_bursts()
    assert correlate_segments(neg.select(HOST), neg.select(GUEST)) == []


def test_c08_mitigations(criterion):
    criterion("8: time slicing defeats calibration; random delay at 4x gap at least doubles ArpArp BER")
    prof = get_profile("TP2")
    sliced = apply_mitigation(prof, MitigationConfig.time_slice(10_000.0))
    for direction in ("g2h", "h2g"):
        try:
            p = calibrate_channel("arp-arp", sliced, direction).p_value
        except ChannelTooWeak as exc:
            p = exc.p_value
        assert p >= 0.05

    base = Router(prof)
    cal = calibrate_channel("arp-arp", base, "g2h")
    fast = cal.at_bit_rate(cal.saturation_bps)
    delayed = apply_mitigation(prof, MitigationConfig.random_delay(4.0 * cal.gap_us))
    b0, b1 = [], []
    for seed in range(5):
        payload = random_payload(seed, 64)
        b0.append(transmit_timing("arp-arp", base, "g2h", payload, fast, seed=seed).ber)
        b1.append(transmit_timing("arp-arp", delayed, "g2h", payload, fast, seed=seed).ber)
    assert np.mean(b1) > np.mean(b0)
    assert np.mean(b1) >= 2.0 * np.mean(b0)


def _random_message(rng: random.Random):
    kind = rng.randrange(4)
    if kind == 0:
        op = rng.choice(list(DhcpOp))
        req = rng.choice([None, rng.randint(1, 2**32 - 1)])
        if op in (DhcpOp.DISCOVER, DhcpOp.REQUEST):
            return DhcpMessage(op, rng.getrandbits(32), rng.getrandbits(48), req)
        return DhcpMessage(op, rng.getrandbits(32), rng.getrandbits(48), req, rng.getrandbits(32), rng.getrandbits(32))
    if kind == 1:
        return ArpMessage(rng.choice(list(ArpOp)), rng.getrandbits(32), rng.getrandbits(32), rng.getrandbits(48))
    if kind == 2:
        return IgmpMessage(rng.choice(list(IgmpOp)), 0xE000_0000 | rng.getrandbits(28))
    return IcmpMessage(rng.choice(list(IcmpOp)), rng.getrandbits(16), rng.getrandbits(16))


def test_c09_oracles(criterion):
    criterion("9: codec round trips 10^4 payloads, t-test within 0.02 of permutation, 10^5 fuzz inputs parse safely")
    rng = random.Random(9)
    for _ in range(10_000):
        msg = _random_message(rng)
        assert parse(serialize(msg), msg.proto) == msg
        payload = rng.randbytes(rng.randint(0, 64))
        assert deframe(frame_payload(payload)) == payload

    nprng = np.random.default_rng(9)
    for i in range(20):
        a = nprng.normal(0.0, 1.0, 12)
        b = nprng.normal(nprng.uniform(0.0, 1.0), 1.0, 12)
        assert abs(t_test(a, b).p_value - permutation_p(a, b, seed=i)) <= 0.02

    protos = [Proto.DHCP, Proto.ARP, Proto.IGMP, Proto.ICMP]
    for i in range(100_000):
        data = rng.randbytes(rng.randint(0, 30))
        try:
            parse(data, protos[i % 4])
        except (TruncatedMessage, MalformedField):
            pass


COMMANDS = [
    ["matrix"],
    ["ber-sweep", "--channel", "dhcp-direct", "--profile", "TP2", "--rates", "2000,3400", "--seeds", "2"],
    ["timing-hist", "--channel", "icmp-icmp", "--profile", "LS1", "--loads", "0,500,1000"],
    ["quality"],
    ["mitigate", "--channel", "arp-arp", "--profile", "TP2", "--mitigation", "random-delay"],
]


def _run_cli(args, out_dir: Path, stdin: str = "") -> dict:
    out = out_dir / "out.csv"
    cmd = [sys.executable, "-m", "crossrouter", *args, "--seed", "7"]
    if args[0] != "chat":
        cmd += ["--out", str(out)]
    proc = subprocess.run(cmd, input=stdin.encode(), capture_output=True, text=False, timeout=600,
                          env=dict(os.environ, PYTHONHASHSEED="random"))
    assert proc.returncode == 0, proc.stderr.decode()
    files = {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}
    return {"stdout": proc.stdout, **files}


def test_c10_determinism(criterion, tmp_path):
    criterion("10: every command is byte-identical across two runs with the same seed")
    for i, args in enumerate(COMMANDS + [["chat", "--channel", "arp-arp", "--profile", "TP2"]]):
        stdin = "determinism\n" if args[0] == "chat" else ""
        runs = []
        for k in range(2):
            d = tmp_path / f"{i}_{k}"
            d.mkdir()
            runs.append(_run_cli(args, d, stdin))
        assert runs[0] == runs[1], args
