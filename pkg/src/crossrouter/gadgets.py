"""Sender gadgets (control-plane load) and receiver gadgets (latency probes)."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import IO, Optional, Sequence

import numpy as np

from .errors import GadgetUnavailable
from .packets import (
    BROADCAST_MAC, ArpMessage, ArpOp, ControlKind, ControlRequest, DhcpMessage, DhcpOp, Frame,
    IcmpMessage, IcmpOp,
)
from .profiles import GUEST, HOST, RouterProfile
from .rng import poisson_arrivals, stream
from .router import ROUTER_MAC, SUBNETS, Batch, Simulation, router_ip

STATION_MAC = {HOST: 0x0200_0000_1001, GUEST: 0x0200_0000_2001}
TIMEOUT_FACTOR = 10.0
DITHER = 0.10
SSH_ABORT_GAP_US = 100.0


class SenderKind(str, enum.Enum):
    ARP_FLOOD = "arp_flood"
    DHCP_REQUEST_LOAD = "dhcp_request_load"
    ICMP_FLOOD = "icmp_flood"
    SSH_KEX_LOAD = "ssh_kex_load"
    CSRF_LOAD = "csrf_load"


class ReceiverKind(str, enum.Enum):
    ARP_PROBE = "arp_probe"
    ICMP_PROBE = "icmp_probe"
    DHCP_PROBE = "dhcp_probe"
    CSRF_PROBE = "csrf_probe"
    SSH_PROBE = "ssh_probe"


# control-plane request kind generated by each gadget
SENDER_REQUEST = {
    SenderKind.ARP_FLOOD: "arp",
    SenderKind.DHCP_REQUEST_LOAD: "dhcp",
    SenderKind.ICMP_FLOOD: "icmp",
    SenderKind.SSH_KEX_LOAD: "ssh_kex",
    SenderKind.CSRF_LOAD: "http",
}
RECEIVER_REQUEST = {
    ReceiverKind.ARP_PROBE: "arp",
    ReceiverKind.ICMP_PROBE: "icmp",
    ReceiverKind.DHCP_PROBE: "dhcp",
    ReceiverKind.CSRF_PROBE: "http",
    ReceiverKind.SSH_PROBE: "ssh_kex",
}
SENDER_FOR_REQUEST = {v: k for k, v in SENDER_REQUEST.items()}
RECEIVER_FOR_REQUEST = {v: k for k, v in RECEIVER_REQUEST.items()}

DEFAULT_PROBE_INTERVAL_US = {"arp": 5_000.0, "icmp": 5_000.0, "dhcp": 20_000.0, "http": 5_000.0, "ssh_kex": 100_000.0}
DEFAULT_UTILISATION = {"ssh_kex": 0.3}


def request_frame(kind: str, segment: str, seq: int = 0) -> Frame:
    """The frame a station on ``segment`` sends to create one ``kind`` request."""
    mac = STATION_MAC[segment]
    station_ip = SUBNETS[segment] | 50
    if kind == "arp":
        return Frame(mac, BROADCAST_MAC, ArpMessage(ArpOp.REQUEST, station_ip, router_ip(segment), mac))
    if kind == "dhcp":
        msg = DhcpMessage(DhcpOp.REQUEST, 0x1000 + seq, mac, SUBNETS[segment] | 100)
        return Frame(mac, BROADCAST_MAC, msg)
    if kind == "icmp":
        return Frame(mac, ROUTER_MAC, IcmpMessage(IcmpOp.ECHO_REQUEST, 0x4242, seq & 0xFFFF))
    if kind == "ssh_kex":
        return Frame(mac, ROUTER_MAC, ControlRequest(ControlKind.SSH_KEX_INIT))
    if kind == "ssh_abort":
        return Frame(mac, ROUTER_MAC, ControlRequest(ControlKind.SSH_ABORT))
    if kind == "http":
        return Frame(mac, ROUTER_MAC, ControlRequest(ControlKind.HTTP_GET))
    raise ValueError(f"no gadget frame for {kind!r}")


def _require(profile: RouterProfile, kind: str, segment: str, what: str) -> None:
    if not profile.enabled(kind, segment):
        raise GadgetUnavailable(f"{what} needs {kind} service on the {segment} segment, "
                                f"which {profile.model_id} does not expose")


def default_rate(kind: SenderKind, profile: RouterProfile, utilisation: Optional[float] = None) -> float:
    req = SENDER_REQUEST[SenderKind(kind)]
    u = DEFAULT_UTILISATION.get(req, 0.5) if utilisation is None else utilisation
    return u * 1e6 / profile.mean_service_us(req)


@dataclass(frozen=True)
class SenderGadget:
    kind: SenderKind
    rate_pps: float
    segment: str

    def __post_init__(self):
        object.__setattr__(self, "kind", SenderKind(self.kind))
        if self.rate_pps < 0:
            raise ValueError("rate must be non-negative")

    @property
    def request(self) -> str:
        return SENDER_REQUEST[self.kind]

    def check(self, profile: RouterProfile) -> None:
        _require(profile, self.request, self.segment, self.kind.value)


@dataclass(frozen=True)
class ReceiverGadget:
    kind: ReceiverKind
    probe_interval_us: float
    segment: str

    def __post_init__(self):
        object.__setattr__(self, "kind", ReceiverKind(self.kind))
        if not self.probe_interval_us > 0:
            raise ValueError("probe interval must be positive")

    @property
    def request(self) -> str:
        return RECEIVER_REQUEST[self.kind]

    def check(self, profile: RouterProfile) -> None:
        _require(profile, self.request, self.segment, self.kind.value)

    @classmethod
    def default(cls, kind: ReceiverKind | str, segment: str) -> "ReceiverGadget":
        kind = ReceiverKind(kind)
        return cls(kind, DEFAULT_PROBE_INTERVAL_US[RECEIVER_REQUEST[kind]], segment)


def run_sender(gadget: SenderGadget, sim: Simulation, start_us: float, duration_us: float,
               windows: Optional[Sequence[tuple[float, float]]] = None, name: str = "load") -> list[Batch]:
    """Schedule Poisson load; ``windows`` optionally restricts it to on-intervals."""
    gadget.check(sim.profile)
    if gadget.rate_pps == 0 or duration_us <= 0:
        return []
    if gadget.rate_pps * duration_us / 1e6 < 1:
        raise ValueError("rate x duration must allow at least one frame")
    times, z = poisson_arrivals(sim.seed, name, gadget.rate_pps, start_us, duration_us)
    if windows is not None:
        keep = _in_windows(times, windows)
        times, z = times[keep], z[keep]
    batches = [sim.submit(name, times, gadget.segment, request_frame(gadget.request, gadget.segment), z)]
    if gadget.kind is SenderKind.SSH_KEX_LOAD:
        abort = request_frame("ssh_abort", gadget.segment)
        batches.append(sim.submit(name + "/abort", times + SSH_ABORT_GAP_US, gadget.segment, abort, np.zeros(times.size)))
    return batches


def _in_windows(times: np.ndarray, windows: Sequence[tuple[float, float]]) -> np.ndarray:
    if len(windows) == 0:
        return np.zeros(times.size, dtype=bool)
    w = np.asarray(windows, dtype=np.float64)
    idx = np.searchsorted(w[:, 0], times, side="right") - 1
    ok = idx >= 0
    ok[ok] = times[ok] < w[idx[ok], 1]
    return ok


@dataclass
class TimingTrace:
    seq: np.ndarray
    send_us: np.ndarray
    rtt_us: np.ndarray  # NaN where timed out
    timeout: np.ndarray
    timeout_us: float

    def __len__(self) -> int:
        return self.seq.size

    def capped(self) -> np.ndarray:
        """RTTs with timeouts replaced by the timeout bound."""
        return np.where(self.timeout, self.timeout_us, self.rtt_us)

    def to_csv(self, fp: IO[str]) -> None:
        fp.write("seq,send_us,rtt_us,timeout\n")
        for s, t, r, to in zip(self.seq, self.send_us, self.rtt_us, self.timeout):
            rtt = "" if to else f"{r:.3f}"
            fp.write(f"{s},{t:.3f},{rtt},{int(to)}\n")


@dataclass
class ProbeRun:
    gadget: ReceiverGadget
    batch: Batch
    timeout_us: float

    def trace(self) -> TimingTrace:
        if self.batch.finish is None:
            raise RuntimeError("run the simulation before reading the trace")
        rtt = self.batch.rtt
        late = np.isnan(rtt) | (rtt > self.timeout_us)
        rtt = np.where(late, np.nan, rtt)
        return TimingTrace(np.arange(rtt.size), self.batch.times, rtt, late, self.timeout_us)


def probe_times(seed: int, name: str, interval_us: float, n: int, start_us: float) -> np.ndarray:
    g = stream(seed, name, "dither")
    gaps = interval_us * (1.0 + g.uniform(-DITHER, DITHER, n))
    return start_us + np.cumsum(gaps) - gaps[0]


def run_receiver(gadget: ReceiverGadget, sim: Simulation, n_probes: int, start_us: float = 0.0,
                 name: str = "probe") -> ProbeRun:
    """Schedule ``n_probes`` dithered probes; read :meth:`ProbeRun.trace` after ``sim.run()``."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    gadget.check(sim.profile)
    times = probe_times(sim.seed, name, gadget.probe_interval_us, n_probes, start_us)
    z = stream(sim.seed, name, "jitter").standard_normal(n_probes)
    frame = request_frame(gadget.request, gadget.segment)
    batch = sim.submit(name, times, gadget.segment, frame, z)
    if gadget.kind is ReceiverKind.SSH_PROBE:
        sim.submit(name + "/abort", times + sim.profile.mean_service_us("ssh_kex") + SSH_ABORT_GAP_US,
                   gadget.segment, request_frame("ssh_abort", gadget.segment), np.zeros(n_probes))
    idle = sim.profile.mean_service_us(gadget.request)
    return ProbeRun(gadget, batch, TIMEOUT_FACTOR * idle)


def measure(profile, receiver: ReceiverGadget, n_probes: int, sender: Optional[SenderGadget] = None,
            seed: int = 0, router=None) -> TimingTrace:
    """One self-contained run: optional constant load plus ``n_probes`` probes."""
    sim = Simulation(router if router is not None else profile, seed=seed)
    probe = run_receiver(receiver, sim, n_probes)
    if sender is not None and sender.rate_pps > 0:
        end = probe.batch.times[-1] + receiver.probe_interval_us
        run_sender(sender, sim, 0.0, end)
    sim.run()
    return probe.trace()

