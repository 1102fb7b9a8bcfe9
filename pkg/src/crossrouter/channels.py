"""Covert channel codecs.

Direct channels hide data in fields the router copies across segments:

============  ==================================  =========  =========
channel       carrier                             raw bits   data bits
============  ==================================  =========  =========
dhcp-direct   NAK transaction id                  32         28 + tag
igmp-direct   membership query group (224/4)      28         28
arp-direct    forwarded ARP target, low octet     8          8
arp-direct    forwarded ARP target, full address  32         28 + tag
============  ==================================  =========  =========

The 4-bit tag is a wrapping sequence number so the receiver can drop
duplicates and mark lost symbols as erasures.

Timing channels use on/off keying: during a ``1`` symbol the sender gadget
loads the control plane, during a ``0`` it stays quiet, and the receiver
compares mean probe latency per symbol against a calibrated threshold. Every
transmission starts with the preamble ``10101011`` for symbol alignment.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .detection import t_test
from .errors import ChannelTooWeak, ChannelUnsupported, CrcMismatch, NoPreamble, SyncLost
from .framing import ChannelFrame, bit_error_rate, deframe_bits, frame_payload, frames_to_bits
from .gadgets import (
    RECEIVER_FOR_REQUEST, SENDER_FOR_REQUEST, ProbeRun, ReceiverGadget, SenderGadget, TimingTrace,
    default_rate, measure, run_receiver, run_sender,
)
from .packets import (
    BROADCAST_MAC, MULTICAST_PREFIX, ArpMessage, ArpOp, DhcpMessage, DhcpOp, Frame, IgmpMessage, IgmpOp,
    multicast_mac,
)
from .profiles import DIRECT_CHANNELS, GUEST, HOST, TIMING_CHANNELS, ArpForwarding, RouterProfile
from .rng import stream
from .router import SUBNETS, EmittedFrame, Router, Simulation, other

CHANNELS = DIRECT_CHANNELS + tuple(TIMING_CHANNELS)
PREAMBLE = (1, 0, 1, 0, 1, 0, 1, 1)
MIN_PREAMBLE_MATCHES = 6
GUARD = 0.10
OFFSET_STEPS = 16
IGMP_LEAVE_GAP_US = 10.0
ARP_DIRECT_SYMBOL_RATE = 500.0


class ChannelClass(str, enum.Enum):
    DIRECT = "direct"
    TIMING = "timing"


def channel_class(name: str) -> ChannelClass:
    if name in DIRECT_CHANNELS:
        return ChannelClass.DIRECT
    if name in TIMING_CHANNELS:
        return ChannelClass.TIMING
    raise ValueError(f"unknown channel {name!r} (known: {', '.join(CHANNELS)})")


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    cls: ChannelClass
    sender_segment: str
    receiver_segment: str
    symbol_rate: float = 0.0
    symbol_bits: int = 0  # raw bits per direct symbol; 0 for timing channels

    def __post_init__(self):
        if channel_class(self.name) is not self.cls:
            raise ValueError(f"{self.name} is a {channel_class(self.name).value} channel")
        if self.receiver_segment != other(self.sender_segment):
            raise ValueError("sender and receiver must sit on different segments")

    @property
    def direction(self) -> str:
        return "g2h" if self.sender_segment == GUEST else "h2g"

    @property
    def data_bits(self) -> int:
        return self.symbol_bits - 4 if self.tagged else self.symbol_bits

    @property
    def tagged(self) -> bool:
        return self.cls is ChannelClass.DIRECT and self.symbol_bits == 32

    def at_bit_rate(self, bps: float) -> "ChannelSpec":
        bits = self.symbol_bits or 1
        return replace(self, symbol_rate=bps / bits)

    @property
    def bit_rate(self) -> float:
        return self.symbol_rate * (self.symbol_bits or 1)


def direction_segments(direction: str) -> tuple[str, str]:
    if direction == "g2h":
        return GUEST, HOST
    if direction == "h2g":
        return HOST, GUEST
    raise ValueError(f"direction must be g2h or h2g, not {direction!r}")


def make_spec(name: str, profile: RouterProfile, direction: str, symbol_rate: Optional[float] = None) -> ChannelSpec:
    sender, receiver = direction_segments(direction)
    cls = channel_class(name)
    if cls is ChannelClass.TIMING:
        return ChannelSpec(name, cls, sender, receiver, symbol_rate or 0.0)
    bits = direct_symbol_bits(name, profile)
    rate = symbol_rate if symbol_rate is not None else default_direct_symbol_rate(name, profile)
    return ChannelSpec(name, cls, sender, receiver, rate, bits)


def directions_for(name: str, profile: RouterProfile):
    if channel_class(name) is ChannelClass.DIRECT:
        return profile.direct_directions(name)
    return profile.timing_directions(name)


def check_direction(spec: ChannelSpec, profile: RouterProfile) -> None:
    d = directions_for(spec.name, profile)
    if not d.allows(spec.sender_segment):
        raise ChannelUnsupported(f"{spec.name} {spec.direction} is not available on {profile.model_id} ({d.arrow})")


# direct channels

def direct_symbol_bits(name: str, profile: RouterProfile) -> int:
    if name == "dhcp-direct":
        return 32
    if name == "igmp-direct":
        return 28
    if name == "arp-direct":
        return 8 if profile.arp_broadcast_forwarding is ArpForwarding.SUBNET_RESTRICTED else 32
    raise ValueError(name)


def direct_saturation_symbol_rate(name: str, profile: RouterProfile) -> float:
    """Symbols per second the router can relay before it starts losing them."""
    if name == "dhcp-direct":
        return 1e6 / profile.mean_service_us("dhcp_nak")
    if name == "igmp-direct":
        span = max(profile.igmp_leave_holdoff_us, profile.mean_service_us("igmp_leave"))
        return 1e6 / span
    return 2 * ARP_DIRECT_SYMBOL_RATE  # forwarded without touching the control plane


def default_direct_symbol_rate(name: str, profile: RouterProfile) -> float:
    if name == "arp-direct":
        return ARP_DIRECT_SYMBOL_RATE
    return 0.5 * direct_saturation_symbol_rate(name, profile)


def encode_symbols(bits: Sequence[int], spec: ChannelSpec) -> list[int]:
    """Chunk ``bits`` into symbol values, zero-padding the last one and adding tags."""
    k = spec.data_bits
    out = []
    for i, start in enumerate(range(0, len(bits), k)):
        chunk = list(bits[start:start + k]) + [0] * max(0, k - len(bits[start:start + k]))
        value = 0
        for b in chunk:
            value = (value << 1) | int(b)
        if spec.tagged:
            value |= (i & 0xF) << 28
        out.append(value)
    return out


def _symbol_frame(spec: ChannelSpec, value: int, seq: int) -> list[tuple[float, Frame]]:
    seg = spec.sender_segment
    mac = 0x0200_0000_3000 | (1 if seg == HOST else 2)
    if spec.name == "dhcp-direct":
        bad_ip = SUBNETS[other(seg)] | 200  # outside the ingress pool: the router answers NAK
        return [(0.0, Frame(mac, BROADCAST_MAC, DhcpMessage(DhcpOp.REQUEST, value, mac, bad_ip)))]
    if spec.name == "igmp-direct":
        group = MULTICAST_PREFIX | (value & 0x0FFF_FFFF)
        dst = multicast_mac(group)
        return [(0.0, Frame(mac, dst, IgmpMessage(IgmpOp.JOIN, group))),
                (IGMP_LEAVE_GAP_US, Frame(mac, dst, IgmpMessage(IgmpOp.LEAVE, group)))]
    target = (SUBNETS[spec.receiver_segment] | value) if spec.symbol_bits == 8 else value
    arp = ArpMessage(ArpOp.REQUEST, SUBNETS[seg] | 60, target, mac)
    return [(0.0, Frame(mac, BROADCAST_MAC, arp))]


def direct_send(spec: ChannelSpec, frames: Sequence[ChannelFrame], sim: Simulation, start_us: float = 0.0,
                enforce: bool = True) -> int:
    """Inject the symbols of ``frames`` at the ChannelSpec symbol rate; returns the symbol count."""
    if spec.cls is not ChannelClass.DIRECT:
        raise ValueError(f"{spec.name} is not a direct channel")
    if enforce:
        check_direction(spec, sim.profile)
    if not spec.symbol_rate > 0:
        raise ValueError("symbol rate must be positive")
    symbols = encode_symbols(frames_to_bits(frames), spec)
    spacing = 1e6 / spec.symbol_rate
    for i, value in enumerate(symbols):
        t0 = start_us + i * spacing
        for dt, fr in _symbol_frame(spec, value, i):
            sim.inject(t0 + dt, spec.sender_segment, fr)
    return len(symbols)


def _carried_value(spec: ChannelSpec, e: EmittedFrame) -> Optional[int]:
    p = e.frame.payload
    if spec.name == "dhcp-direct" and isinstance(p, DhcpMessage) and p.op is DhcpOp.NAK:
        return p.xid
    if spec.name == "igmp-direct" and isinstance(p, IgmpMessage) and p.op is IgmpOp.MEMBERSHIP_QUERY:
        return p.group_ip & 0x0FFF_FFFF
    if spec.name == "arp-direct" and isinstance(p, ArpMessage) and p.op is ArpOp.REQUEST:
        return p.target_ip & 0xFF if spec.symbol_bits == 8 else p.target_ip
    return None


def direct_receive_bits(spec: ChannelSpec, sniffed: Sequence[EmittedFrame]) -> list[Optional[int]]:
    """Recovered bit stream, with ``None`` for symbols known to be lost."""
    values = [v for e in sorted(sniffed, key=lambda e: e.time)
              if e.reaches(spec.receiver_segment) for v in [_carried_value(spec, e)] if v is not None]
    k = spec.data_bits
    mask = (1 << k) - 1
    bits: list[Optional[int]] = []
    prev_tag = None
    for v in values:
        if spec.tagged:
            tag = v >> 28
            if prev_tag is not None:
                gap = (tag - prev_tag) % 16
                if gap == 0:
                    continue  # duplicate
                bits.extend([None] * (k * (gap - 1)))
            elif tag:
                bits.extend([None] * (k * tag))
            prev_tag = tag
        data = v & mask
        bits.extend((data >> (k - 1 - i)) & 1 for i in range(k))
    return bits


def direct_receive(spec: ChannelSpec, sniffed: Sequence[EmittedFrame]) -> bytes:
    bits = direct_receive_bits(spec, sniffed)
    if not bits:
        raise NoPreamble(f"no {spec.name} symbols observed on the {spec.receiver_segment} segment")
    return deframe_bits(bits, aligned=True)


# timing channels

@dataclass(frozen=True)
class TimingCalibration:
    threshold_us: float
    on_mean_us: float
    off_mean_us: float
    symbol_period: float  # microseconds
    probe_interval_us: float = 5_000.0
    p_value: float = 0.0
    on_std_us: float = 0.0
    off_std_us: float = 0.0
    timeout_us: float = math.inf
    saturation_probes: float = 8.0

    def __post_init__(self):
        if not self.off_mean_us < self.threshold_us < self.on_mean_us:
            raise ValueError("calibration needs off_mean < threshold < on_mean")

    @property
    def gap_us(self) -> float:
        return self.on_mean_us - self.off_mean_us

    @property
    def probes_per_symbol(self) -> float:
        return self.symbol_period / self.probe_interval_us

    @property
    def bit_rate(self) -> float:
        return 1e6 / self.symbol_period

    @property
    def saturation_bps(self) -> float:
        return 1e6 / (self.saturation_probes * self.probe_interval_us)

    def at_bit_rate(self, bps: float) -> "TimingCalibration":
        return replace(self, symbol_period=1e6 / bps)


def timing_pair(spec: ChannelSpec, profile: RouterProfile, rate_pps: Optional[float] = None,
                utilisation: Optional[float] = None) -> tuple[SenderGadget, ReceiverGadget]:
    """Default gadgets: the sender loads its own side's kind, the receiver probes the other kind."""
    g_kind, h_kind = TIMING_CHANNELS[spec.name]
    send_kind, recv_kind = (g_kind, h_kind) if spec.sender_segment == GUEST else (h_kind, g_kind)
    s_kind = SENDER_FOR_REQUEST[send_kind]
    if rate_pps is None:
        rate_pps = default_rate(s_kind, profile, utilisation) if send_kind in profile.service_time_us else 1.0
    sender = SenderGadget(s_kind, rate_pps, spec.sender_segment)
    receiver = ReceiverGadget.default(RECEIVER_FOR_REQUEST[recv_kind], spec.receiver_segment)
    return sender, receiver


BATCH = 16


def effective_std(x: np.ndarray, batch: int = BATCH) -> float:
    """Per-probe standard deviation that also covers correlation between nearby probes.

    Uses the batch-means estimate ``sqrt(batch * var(batch means))`` and never
    returns less than the plain sample deviation.
    """
    plain = float(x.std(ddof=1))
    nb = x.size // batch
    if nb < 2:
        return plain
    means = x[:nb * batch].reshape(nb, batch).mean(axis=1)
    return max(plain, math.sqrt(batch * float(means.var(ddof=1))))


def probes_needed(sigma: float, gap: float, z: float, floor: float) -> float:
    if gap <= 0:
        return math.inf
    return max(floor, math.ceil((2.0 * z * sigma / gap) ** 2))


def calibrate(spec: ChannelSpec, sender: SenderGadget, receiver: ReceiverGadget, router, n: int = 1000,
              seed: int = 0) -> TimingCalibration:
    """Measure ``n`` probes with the sender idle and ``n`` with it running.

    Both runs share every random draw except the load itself, so an uncoupled
    pair yields identical samples. Raises :class:`ChannelTooWeak` unless loaded
    latency is significantly (p < 0.05) higher.
    """
    if n < 30:
        raise ValueError("calibration needs at least 30 probes per condition")
    router = router if isinstance(router, Router) else Router(router)
    sender.check(router.profile)
    receiver.check(router.profile)
    off = measure(router.profile, receiver, n, None, seed=seed, router=router)
    on = measure(router.profile, receiver, n, sender, seed=seed, router=router)
    a, b = on.capped(), off.capped()
    res = t_test(a, b)
    if not (res.p_value < 0.05 and res.mean_a > res.mean_b):
        raise ChannelTooWeak(res.p_value)
    sigma = math.sqrt((effective_std(a) ** 2 + effective_std(b) ** 2) / 2.0)
    gap = res.mean_a - res.mean_b
    n_op = probes_needed(sigma, gap, 6.0, 16)
    n_sat = probes_needed(sigma, gap, 3.09, 8)
    interval = receiver.probe_interval_us
    return TimingCalibration(
        threshold_us=(res.mean_a + res.mean_b) / 2.0,
        on_mean_us=res.mean_a,
        off_mean_us=res.mean_b,
        symbol_period=n_op * interval,
        probe_interval_us=interval,
        p_value=res.p_value,
        on_std_us=float(a.std(ddof=1)),
        off_std_us=float(b.std(ddof=1)),
        timeout_us=on.timeout_us,
        saturation_probes=n_sat,
    )


def symbol_windows(bits: Sequence[int], start_us: float, period: float) -> list[tuple[float, float]]:
    return [(start_us + i * period, start_us + (i + 1) * period) for i, b in enumerate(bits) if b]


def timing_send(spec: ChannelSpec, bits: Sequence[int], cal: TimingCalibration, sender: SenderGadget,
                sim: Simulation, start_us: float = 0.0, enforce: bool = True) -> float:
    """Schedule preamble + ``bits`` as load windows; returns the end time."""
    if spec.cls is not ChannelClass.TIMING:
        raise ValueError(f"{spec.name} is not a timing channel")
    if enforce:
        check_direction(spec, sim.profile)
    symbols = list(PREAMBLE) + [int(b) for b in bits]
    period = cal.symbol_period
    end = start_us + len(symbols) * period
    windows = symbol_windows(symbols, start_us, period)
    if windows and sender.rate_pps > 0:
        run_sender(sender, sim, start_us, end - start_us, windows=windows, name="ook")
    return end


def _symbol_means(send, rtt, offset, period, n_sym):
    pos = (send - offset) / period
    k = np.floor(pos).astype(np.int64)
    phase = pos - k
    ok = (k >= 0) & (k < n_sym) & (phase >= GUARD) & (phase < 1.0 - GUARD)
    counts = np.bincount(k[ok], minlength=n_sym)[:n_sym]
    sums = np.bincount(k[ok], weights=rtt[ok], minlength=n_sym)[:n_sym]
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts, counts


def timing_receive(spec: ChannelSpec, cal: TimingCalibration, trace: TimingTrace | ProbeRun) -> list[Optional[int]]:
    """Align on the preamble, then threshold each symbol's mean RTT.

    Returns the bits after the preamble up to the end of the trace; symbols
    without a usable probe come back as ``None``.
    """
    if isinstance(trace, ProbeRun):
        trace = trace.trace()
    send = np.asarray(trace.send_us, dtype=np.float64)
    rtt = trace.capped()
    period = cal.symbol_period
    ref = np.array(PREAMBLE) * 2 - 1
    best = None
    for step in range(2 * OFFSET_STEPS):
        offset = step * period / OFFSET_STEPS
        means, counts = _symbol_means(send, rtt, offset, period, len(PREAMBLE))
        if np.any(counts == 0):
            continue
        score = float(np.sum(ref * (means - cal.threshold_us)))
        if best is None or score > best[0]:
            best = (score, offset, means)
    if best is None:
        raise SyncLost(0, "trace too short to hold a preamble")
    _, offset, means = best
    matches = int(np.sum((means > cal.threshold_us) == np.array(PREAMBLE, dtype=bool)))
    if matches < MIN_PREAMBLE_MATCHES:
        raise SyncLost(matches)
    n_sym = int(math.floor((send[-1] - offset) / period)) + 1
    means, counts = _symbol_means(send, rtt, offset, period, n_sym)
    out: list[Optional[int]] = []
    for m, c in zip(means[len(PREAMBLE):], counts[len(PREAMBLE):]):
        out.append(None if c == 0 else int(m > cal.threshold_us))
    return out


# end-to-end helpers

@dataclass
class Transmission:
    channel: str
    direction: str
    truth_bits: list[int]
    received_bits: list[Optional[int]]
    payload: Optional[bytes]
    error: str = ""
    bit_rate: float = 0.0
    duration_us: float = 0.0
    symbols: int = 0

    @property
    def ber(self) -> float:
        if self.error in ("sync", "no_preamble"):
            return 1.0
        return bit_error_rate(self.received_bits, self.truth_bits)


def _finish(tx: Transmission, payload: bytes) -> Transmission:
    try:
        got = deframe_bits(tx.received_bits, aligned=True)
        tx.payload = got
        if got != payload:
            tx.error = "mismatch"
    except CrcMismatch:
        tx.error = "crc"
    except NoPreamble:
        tx.error = "no_preamble"
    return tx


def transmit_direct(name: str, router, direction: str, payload: bytes, seed: int = 0,
                    bit_rate: Optional[float] = None, enforce: bool = True, start_us: float = 0.0,
                    setup: Optional[Callable[[Simulation], None]] = None) -> Transmission:
    router = router if isinstance(router, Router) else Router(router)
    spec = make_spec(name, router.profile, direction)
    if bit_rate is not None:
        spec = spec.at_bit_rate(bit_rate)
    frames = frame_payload(payload)
    truth = frames_to_bits(frames)
    sim = Simulation(router, seed=seed)
    if setup is not None:
        setup(sim)
    lead = start_us + stream(seed, "lead").uniform(0.0, 1e6 / spec.symbol_rate)
    n_sym = direct_send(spec, frames, sim, start_us=lead, enforce=enforce)
    sim.run()
    bits = direct_receive_bits(spec, sim.emitted)
    tx = Transmission(name, direction, truth, bits, None, bit_rate=spec.bit_rate,
                      duration_us=n_sym * 1e6 / spec.symbol_rate, symbols=n_sym)
    if not bits:
        tx.error = "no_preamble"
        return tx
    return _finish(tx, payload)


def transmit_timing(name: str, router, direction: str, payload: bytes, cal: TimingCalibration, seed: int = 0,
                    sender: Optional[SenderGadget] = None, enforce: bool = True, start_us: float = 0.0,
                    setup: Optional[Callable[[Simulation], None]] = None) -> Transmission:
    """Send ``payload`` over a timing channel; the receiver probes from ``start_us`` on."""
    router = router if isinstance(router, Router) else Router(router)
    spec = make_spec(name, router.profile, direction)
    default_sender, receiver = timing_pair(spec, router.profile)
    sender = sender or default_sender
    frames = frame_payload(payload)
    truth = frames_to_bits(frames)
    sim = Simulation(router, seed=seed)
    if setup is not None:
        setup(sim)
    period = cal.symbol_period
    lead = stream(seed, "lead").uniform(0.25 * period, 1.25 * period)
    end = timing_send(spec, truth, cal, sender, sim, start_us=start_us + lead, enforce=enforce)
    receiver = replace(receiver, probe_interval_us=cal.probe_interval_us)
    n_probes = int(math.ceil((end - start_us + period) / cal.probe_interval_us))
    probe = run_receiver(receiver, sim, n_probes, start_us=start_us)
    sim.run()
    tx = Transmission(name, direction, truth, [], None, bit_rate=cal.bit_rate, duration_us=end - start_us - lead,
                      symbols=len(truth) + len(PREAMBLE))
    try:
        tx.received_bits = timing_receive(spec, cal, probe)
    except SyncLost:
        tx.error = "sync"
        return tx
    return _finish(tx, payload)
