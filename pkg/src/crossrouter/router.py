"""Simulated dual-segment router.

The router separates a host segment (192.168.0.0/24) from a guest segment
(192.168.1.0/24) and owns one software control plane. Only frames that reach
the control plane, or that a profile bug leaks across, are modelled; line-rate
forwarding never appears because no channel uses it.

A :class:`Simulation` collects traffic first and resolves it in :meth:`run`:

1. Individually injected frames are processed in ``(time, insertion)`` order by
   an event queue. Stateless leaks (ARP broadcast forwarding) are emitted at
   once; stateful rules (IGMP membership) are applied in order; every request
   bound for the control plane becomes a job.
2. Bulk batches from gadgets are classified once per batch.
3. All jobs go through the scheduling kernel in one pass, then replies are
   built at their completion times.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

from . import kernel
from .clock import EventQueue
from .errors import DisabledService
from .packets import (
    BROADCAST_IP, BROADCAST_MAC, ArpMessage, ArpOp, ControlKind, ControlRequest, DhcpMessage, DhcpOp,
    Frame, IcmpMessage, IcmpOp, IgmpMessage, IgmpOp, ip,
)
from .profiles import (
    GUEST, HOST, KINDS, SEGMENTS, TIMING_CHANNELS, ArpForwarding, RouterProfile, get_profile,
)
from .rng import stream

BOTH = "both"
ROUTER_MAC = 0x0200_0000_0001
NETMASK = 0xFFFF_FF00
SUBNETS = {HOST: ip("192.168.0.0"), GUEST: ip("192.168.1.0")}


def other(segment: str) -> str:
    return GUEST if segment == HOST else HOST


def router_ip(segment: str) -> int:
    return SUBNETS[segment] | 1


def in_subnet(addr: int, segment: str) -> bool:
    return addr & NETMASK == SUBNETS[segment]


class Segment(str, enum.Enum):
    HOST = HOST
    GUEST = GUEST


@dataclass(frozen=True)
class EmittedFrame:
    segment: str
    frame: Frame
    time: float
    cause: int = field(default=-1, compare=False)

    def reaches(self, segment: str) -> bool:
        return self.segment == BOTH or self.segment == segment


@dataclass
class ControlJob:
    t: float
    segment: str
    kind: str
    reply: Optional[tuple[str, Frame]]
    cause: int


def coupling_edges(profile: RouterProfile) -> set[tuple[tuple[str, str], tuple[str, str]]]:
    """Cross-segment ``(load class, affected class)`` pairs implied by the timing table."""
    edges = set()
    for ch, d in profile.timing.items():
        g_kind, h_kind = TIMING_CHANNELS[ch]
        if d.g2h:
            edges.add(((GUEST, g_kind), (HOST, h_kind)))
        if d.h2g:
            edges.add(((HOST, h_kind), (GUEST, g_kind)))
    return edges


class Router:
    """Stateless request classification for one profile plus an optional mitigation."""

    def __init__(self, profile: RouterProfile | str, mitigation=None):
        self.profile = get_profile(profile) if isinstance(profile, str) else profile
        self.mitigation = mitigation
        self._edges = coupling_edges(self.profile)
        self._history: list[tuple[float, str, Frame]] = []

    @property
    def slice_us(self) -> float:
        m = self.mitigation
        return float(m.slice_us) if m is not None and m.mode == "time_slice" else 0.0

    @property
    def delay_max_us(self) -> float:
        m = self.mitigation
        return float(m.max_us) if m is not None and m.mode == "random_delay" else 0.0

    def coupled(self, view: tuple[str, str], load: tuple[str, str]) -> bool:
        if view[0] == load[0]:
            return True
        return (load, view) in self._edges

    def _job(self, t, ingress, kind, reply, cause):
        if not self.profile.enabled(kind, ingress):
            return None
        return ControlJob(t, ingress, kind, reply, cause)

    def classify(self, ingress: str, frame: Frame, t: float, members: dict, cause: int = -1):
        """Return ``(immediate emissions, control job or None)`` for one frame."""
        p = frame.payload
        prof = self.profile
        emitted: list[EmittedFrame] = []
        job = None
        if isinstance(p, ArpMessage):
            if p.op is ArpOp.REQUEST and frame.is_broadcast:
                if p.target_ip == router_ip(ingress):
                    reply = ArpMessage(ArpOp.RESPONSE, router_ip(ingress), p.sender_ip, ROUTER_MAC)
                    job = self._job(t, ingress, "arp", (ingress, Frame(ROUTER_MAC, frame.src_mac, reply)), cause)
                else:
                    mode = prof.arp_broadcast_forwarding
                    allowed = prof.arp_forward_directions.allows(ingress) and (
                        mode is ArpForwarding.UNRESTRICTED
                        or (mode is ArpForwarding.SUBNET_RESTRICTED and in_subnet(p.target_ip, other(ingress))))
                    if allowed:
                        emitted.append(EmittedFrame(other(ingress), frame, t, cause))
        elif isinstance(p, DhcpMessage):
            if p.op in (DhcpOp.REQUEST, DhcpOp.DISCOVER):
                if p.op is DhcpOp.REQUEST and p.requested_ip is not None and not in_subnet(p.requested_ip, ingress):
                    nak = DhcpMessage(DhcpOp.NAK, p.xid, p.client_mac, None, router_ip(ingress), BROADCAST_IP)
                    egress = BOTH if prof.dhcp_nak_broadcast_leak.allows(ingress) else ingress
                    job = self._job(t, ingress, "dhcp_nak", (egress, Frame(ROUTER_MAC, BROADCAST_MAC, nak)), cause)
                else:
                    op = DhcpOp.ACK if p.op is DhcpOp.REQUEST else DhcpOp.OFFER
                    lease = p.requested_ip or (SUBNETS[ingress] | 100)
                    ack = DhcpMessage(op, p.xid, p.client_mac, lease, router_ip(ingress), lease)
                    job = self._job(t, ingress, "dhcp", (ingress, Frame(ROUTER_MAC, frame.src_mac, ack)), cause)
        elif isinstance(p, IgmpMessage):
            groups = members.setdefault(ingress, {})
            if p.op is IgmpOp.JOIN:
                groups.setdefault(p.group_ip, set()).add(frame.src_mac)
            elif p.op is IgmpOp.LEAVE:
                current = groups.get(p.group_ip)
                if current and frame.src_mac in current:
                    current.discard(frame.src_mac)
                    if not current:
                        del groups[p.group_ip]
                        query = IgmpMessage(IgmpOp.MEMBERSHIP_QUERY, p.group_ip)
                        egress = BOTH if prof.igmp_query_leak.allows(ingress) else ingress
                        job = self._job(t, ingress, "igmp_leave", (egress, Frame(ROUTER_MAC, BROADCAST_MAC, query)), cause)
        elif frame.dst_mac == ROUTER_MAC:
            if isinstance(p, IcmpMessage) and p.op is IcmpOp.ECHO_REQUEST:
                job = self._job(t, ingress, "icmp", (ingress, Frame(ROUTER_MAC, frame.src_mac, p.reply())), cause)
            elif isinstance(p, ControlRequest):
                kind = {ControlKind.SSH_KEX_INIT: "ssh_kex", ControlKind.SSH_ABORT: "ssh_abort",
                        ControlKind.HTTP_GET: "http"}[p.kind]
                reply = None if kind == "ssh_abort" else (ingress, Frame(ROUTER_MAC, frame.src_mac, p))
                job = self._job(t, ingress, kind, reply, cause)
        return emitted, job

    def request_kind(self, ingress: str, frame: Frame) -> Optional[str]:
        """Control-plane kind a frame would create, ignoring stateful IGMP rules."""
        _, job = self.classify(ingress, frame, 0.0, {})
        return job.kind if job is not None else None

    def handle_frame(self, ingress: str, frame: Frame, t: float, seed: int = 0) -> list[EmittedFrame]:
        """Process one frame after all frames previously handled by this router.

        Completion times account for earlier frames only; the history is replayed
        in a fresh simulation each call so the result is reproducible.
        """
        frame.validate()
        self._history.append((t, ingress, frame))
        sim = Simulation(self, seed=seed)
        for i, (ti, seg, fr) in enumerate(self._history):
            sim.inject(ti, seg, fr)
        out = sim.run()
        last = len(self._history) - 1
        return [e for e in out if e.cause == last]


@dataclass
class Batch:
    """Bulk arrivals of identical frames from one gadget."""

    name: str
    times: np.ndarray
    segment: str
    frame: Frame
    kind: Optional[str]
    z: np.ndarray
    finish: Optional[np.ndarray] = None

    @property
    def rtt(self) -> np.ndarray:
        return self.finish - self.times

    @property
    def proto(self) -> str:
        return self.frame.proto.value


@dataclass
class Timeline:
    """Everything offered to the router, for the detectors."""

    times: np.ndarray
    segments: np.ndarray  # 0 host, 1 guest
    protos: np.ndarray

    def select(self, segment: str | None = None, proto: str | None = None) -> np.ndarray:
        mask = np.ones(len(self.times), dtype=bool)
        if segment is not None:
            mask &= self.segments == SEGMENTS.index(segment)
        if proto is not None:
            mask &= self.protos == proto
        return self.times[mask]


class Simulation:
    def __init__(self, router: Router | RouterProfile | str, seed: int = 0):
        self.router = router if isinstance(router, Router) else Router(router)
        self.profile = self.router.profile
        self.seed = int(seed)
        self.queue = EventQueue()
        self.batches: list[Batch] = []
        self._frames: list[tuple[float, str, Frame, int]] = []
        self._members: dict = {}
        self._jobs: list[ControlJob] = []
        self.emitted: list[EmittedFrame] = []
        self.dropped = 0
        self.served = 0
        self._ran = False

    @property
    def clock(self):
        return self.queue.clock

    def schedule(self, time: float, action) -> None:
        self.queue.schedule(time, action)

    def inject(self, t: float, ingress: str, frame: Frame) -> int:
        """Schedule one frame arrival; returns its cause id."""
        frame.validate()
        ingress = Segment(ingress).value
        cause = len(self._frames)
        self._frames.append((t, ingress, frame, cause))
        self.queue.schedule(t, lambda: self._arrive(t, ingress, frame, cause))
        return cause

    def _arrive(self, t, ingress, frame, cause):
        emitted, job = self.router.classify(ingress, frame, t, self._members, cause)
        self.emitted.extend(emitted)
        if job is not None:
            self._jobs.append(job)

    def submit(self, name: str, times, ingress: str, frame: Frame, z=None) -> Batch:
        """Add many arrivals of the same stateless control-plane request."""
        frame.validate()
        ingress = Segment(ingress).value
        times = np.asarray(times, dtype=np.float64)
        if times.size and np.any(np.diff(times) < 0):
            raise ValueError("batch times must be sorted")
        if isinstance(frame.payload, IgmpMessage):
            raise ValueError("IGMP membership is stateful; inject frames one by one")
        kind = self.router.request_kind(ingress, frame)
        if z is None:
            z = stream(self.seed, "jitter", name).standard_normal(times.size)
        batch = Batch(name, times, ingress, frame, kind, np.asarray(z, dtype=np.float64))
        self.batches.append(batch)
        return batch

    def timeline(self) -> Timeline:
        ts = [np.array([f[0] for f in self._frames])]
        segs = [np.array([SEGMENTS.index(f[1]) for f in self._frames], dtype=np.int8)]
        protos = [np.array([f[2].proto.value for f in self._frames], dtype=object)]
        for b in self.batches:
            ts.append(b.times)
            segs.append(np.full(b.times.size, SEGMENTS.index(b.segment), dtype=np.int8))
            protos.append(np.full(b.times.size, b.proto, dtype=object))
        t = np.concatenate(ts)
        order = np.argsort(t, kind="stable")
        return Timeline(t[order], np.concatenate(segs)[order], np.concatenate(protos)[order].astype(str))

    def run(self) -> list[EmittedFrame]:
        if self._ran:
            raise RuntimeError("a simulation runs once")
        self._ran = True
        self.queue.run()
        self._resolve()
        self.emitted.sort(key=lambda e: e.time)
        return self.emitted

    def _resolve(self) -> None:
        prof = self.profile
        sigma = prof.jitter_stddev_us
        jobs = self._jobs
        frame_z = stream(self.seed, "jitter", "frames").standard_normal(len(jobs))

        parts_t, parts_cls, parts_svc, parts_rank = [], [], [], []
        classes: dict[tuple[str, str], int] = {}

        def cls_id(key):
            if key not in classes:
                classes[key] = len(classes)
            return classes[key]

        if jobs:
            parts_t.append(np.array([j.t for j in jobs]))
            parts_cls.append(np.array([cls_id((j.segment, j.kind)) for j in jobs], dtype=np.int64))
            means = np.array([prof.mean_service_us(j.kind) for j in jobs])
            parts_svc.append(np.maximum(0.0, means + sigma * frame_z))
            parts_rank.append(np.zeros(len(jobs), dtype=np.int64))
        live = []
        for k, b in enumerate(self.batches):
            if b.kind is None or b.times.size == 0:
                b.finish = np.full(b.times.size, np.nan)
                continue
            live.append(b)
            parts_t.append(b.times)
            parts_cls.append(np.full(b.times.size, cls_id((b.segment, b.kind)), dtype=np.int64))
            parts_svc.append(np.maximum(0.0, prof.mean_service_us(b.kind) + sigma * b.z))
            parts_rank.append(np.full(b.times.size, k + 1, dtype=np.int64))
        if not parts_t:
            return

        t = np.concatenate(parts_t)
        cls = np.concatenate(parts_cls)
        svc = np.concatenate(parts_svc)
        rank = np.concatenate(parts_rank)
        pos = np.concatenate([np.arange(len(p)) for p in parts_t])
        order = np.lexsort((pos, rank, t))

        keys = list(classes)
        n_cls = len(keys)
        couple = np.zeros((n_cls, n_cls), dtype=np.uint8)
        for r, view in enumerate(keys):
            for c, load in enumerate(keys):
                couple[r, c] = self.router.coupled(view, load)
        seg = np.array([SEGMENTS.index(k[0]) for k in keys], dtype=np.int64)
        limit = np.array([prof.dhcp_backlog_limit if k[1] == "dhcp_nak" else 0 for k in keys], dtype=np.int64)
        holdoff = np.array([prof.igmp_leave_holdoff_us if k[1] == "igmp_leave" else 0.0 for k in keys])

        fin_sorted = kernel.serve(t[order], cls[order], svc[order], couple, seg, limit, holdoff,
                                  prof.queue_capacity, self.router.slice_us, kernel.DISCIPLINES[prof.discipline])
        finish = np.empty_like(fin_sorted)
        finish[order] = fin_sorted

        delay = self.router.delay_max_us
        offset = 0
        if jobs:
            f = finish[:len(jobs)]
            if delay > 0:
                f = f + stream(self.seed, "delay", "frames").uniform(0.0, delay, f.size)
            for j, done in zip(jobs, f):
                if math.isnan(done):
                    self.dropped += 1
                    continue
                self.served += 1
                if j.reply is not None:
                    egress, fr = j.reply
                    self.emitted.append(EmittedFrame(egress, fr, float(done), j.cause))
            offset = len(jobs)
        for b in live:
            f = finish[offset:offset + b.times.size]
            offset += b.times.size
            if delay > 0:
                f = f + stream(self.seed, "delay", b.name).uniform(0.0, delay, f.size)
            b.finish = f
            nan = int(np.isnan(f).sum())
            self.dropped += nan
            self.served += f.size - nan

    def export_trace(self, fp: IO[str]) -> None:
        """Write ``time_us segment direction proto field_summary`` lines in time order."""
        rows = []
        for t, seg, fr, _ in self._frames:
            rows.append((t, 0, f"{t:.3f} {seg} in {fr.proto.value} {fr.summary()}"))
        for e in self.emitted:
            rows.append((e.time, 1, f"{e.time:.3f} {e.segment} out {e.frame.proto.value} {e.frame.summary()}"))
        for b in self.batches:
            label = f"{b.kind or 'dropped'} batch={b.name}"
            for t in b.times:
                rows.append((t, 0, f"{t:.3f} {b.segment} in {b.proto} {label}"))
            if b.finish is not None:
                for t in b.finish[~np.isnan(b.finish)]:
                    rows.append((t, 1, f"{t:.3f} {b.segment} out {b.proto} {label}"))
        rows.sort(key=lambda r: (r[0], r[1]))
        for _, _, line in rows:
            fp.write(line + "\n")


def service_response_time(kind: str, queue_wait_us: float, profile: RouterProfile, rng: np.random.Generator,
                          segment: str = HOST) -> float:
    """Single-server FIFO response: queue wait + mean service + truncated Gaussian jitter."""
    if kind not in KINDS or not profile.enabled(kind, segment) or kind not in profile.service_time_us:
        raise DisabledService(f"{kind} is not served on the {segment} segment of {profile.model_id}")
    service = profile.mean_service_us(kind) + profile.jitter_stddev_us * rng.standard_normal()
    return float(max(0.0, queue_wait_us) + max(0.0, service))


def crossings(emitted: Iterable[EmittedFrame], ingress_of) -> int:
    """Count emissions that reach a segment other than the one their cause arrived on."""
    n = 0
    for e in emitted:
        src = ingress_of(e.cause)
        if e.segment == BOTH or e.segment != src:
            n += 1
    return n
