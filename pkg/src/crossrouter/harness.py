"""Experiment drivers behind the command line verbs.

Every driver takes an explicit seed and writes nothing itself; the ``write_*``
helpers turn results into CSV text so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import math
import platform
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np
import scipy

from . import __version__, kernel
from .channels import (
    CHANNELS, ChannelClass, TimingCalibration, Transmission, calibrate, channel_class, check_direction,
    direct_saturation_symbol_rate, directions_for, make_spec, timing_pair, transmit_direct, transmit_timing,
)
from .detection import MitigationConfig, apply_mitigation, t_test
from .errors import ChannelTooWeak, ChannelUnsupported
from .gadgets import SenderGadget, SenderKind, measure, run_sender
from .profiles import BUILTIN_ORDER, GUEST, HOST, TIMING_CHANNELS, RouterProfile, builtin_profiles, get_profile
from .rng import stream
from .router import Router, Simulation

DIRECTIONS = ("g2h", "h2g")
PROBE_PAYLOAD = b"matrix-probe"


def random_payload(seed: int, size: int, name: str = "payload") -> bytes:
    return stream(seed, name).bytes(size)


def arrow(g2h: bool, h2g: bool) -> str:
    return {(True, True): "⇔", (True, False): "⇒", (False, True): "⇐"}.get((g2h, h2g), "--")


def _router(profile) -> Router:
    if isinstance(profile, Router):
        return profile
    return Router(get_profile(profile) if isinstance(profile, str) else profile)


# Table of supported channels

def probe_cell(channel: str, profile, direction: str, seed: int = 0, n: int = 1000) -> bool:
    """Measure whether ``channel`` works in ``direction``, ignoring the profile's own claims."""
    router = _router(profile)
    if channel_class(channel) is ChannelClass.DIRECT:
        tx = transmit_direct(channel, router, direction, PROBE_PAYLOAD, seed=seed, enforce=False)
        return tx.payload == PROBE_PAYLOAD
    spec = make_spec(channel, router.profile, direction)
    try:
        sender, receiver = timing_pair(spec, router.profile)
        calibrate(spec, sender, receiver, router, n=n, seed=seed)
    except (ChannelTooWeak, ChannelUnsupported):
        return False
    return True


def support_matrix(profiles: Optional[Sequence[RouterProfile]] = None, seed: int = 0,
                   n: int = 1000) -> dict[tuple[str, str], str]:
    if profiles is None:
        b = builtin_profiles()
        profiles = [b[k] for k in BUILTIN_ORDER]
    cells = {}
    for ch in CHANNELS:
        for prof in profiles:
            ok = [probe_cell(ch, prof, d, seed=seed, n=n) for d in DIRECTIONS]
            cells[(ch, prof.model_id)] = arrow(*ok)
    return cells


def write_matrix(cells: dict[tuple[str, str], str], fp: IO[str]) -> None:
    models = list(dict.fromkeys(m for _, m in cells))
    channels = list(dict.fromkeys(c for c, _ in cells))
    fp.write("channel," + ",".join(models) + "\n")
    for ch in channels:
        fp.write(ch + "," + ",".join(cells[(ch, m)] for m in models) + "\n")


# Bit error rate sweeps

@dataclass
class ExperimentResult:
    channel: str
    profile: str
    direction: str
    seed: int
    sweep: list[tuple[float, float, Optional[float]]] = field(default_factory=list)


def default_direction(channel: str, profile: RouterProfile) -> str:
    d = directions_for(channel, profile)
    if d.g2h:
        return "g2h"
    if d.h2g:
        return "h2g"
    raise ChannelUnsupported(f"{channel} is not supported on {profile.model_id}")


def calibrate_channel(channel: str, profile, direction: str, seed: int = 0, n: int = 1000) -> TimingCalibration:
    router = _router(profile)
    spec = make_spec(channel, router.profile, direction)
    sender, receiver = timing_pair(spec, router.profile)
    return calibrate(spec, sender, receiver, router, n=n, seed=seed)


def ber_sweep(channel: str, profile, rates: Iterable[float], payload_size: int = 256, seeds: int = 5,
              seed: int = 0, direction: Optional[str] = None, router: Optional[Router] = None,
              cal: Optional[TimingCalibration] = None) -> ExperimentResult:
    """Mean bit error rate over ``seeds`` runs at each bit rate."""
    router = router or _router(profile)
    prof = router.profile
    direction = direction or default_direction(channel, prof)
    result = ExperimentResult(channel, prof.model_id, direction, seed)
    rates = sorted(float(r) for r in rates)
    timing = channel_class(channel) is ChannelClass.TIMING
    check_direction(make_spec(channel, prof, direction), prof)
    if timing and rates and cal is None:
        cal = calibrate_channel(channel, router, direction, seed=seed)
    for rate in rates:
        bers = []
        for k in range(seeds):
            s = seed + k
            payload = random_payload(s, payload_size)
            if timing:
                tx = transmit_timing(channel, router, direction, payload, cal.at_bit_rate(rate), seed=s)
            else:
                tx = transmit_direct(channel, router, direction, payload, seed=s, bit_rate=rate)
            bers.append(tx.ber)
        result.sweep.append((rate, float(np.mean(bers)), cal.p_value if timing else None))
    return result


def write_sweep(result: ExperimentResult, fp: IO[str]) -> None:
    fp.write("rate_bps,ber\n")
    for rate, ber, _ in result.sweep:
        fp.write(f"{rate:g},{ber:.6f}\n")


def cliff_midpoint(sweep: Sequence[tuple[float, float, Optional[float]]], low: float = 0.05,
                   high: float = 0.2) -> float:
    """Midpoint between the last clean rate and the first broken one."""
    good = [r for r, b, _ in sweep if b < low]
    bad = [r for r, b, _ in sweep if b >= high]
    if not good or not bad:
        return math.nan
    last_good = max(r for r in good if r < min(bad)) if any(r < min(bad) for r in good) else math.nan
    return (last_good + min(bad)) / 2.0


# Latency histograms

@dataclass
class HistogramResult:
    channel: str
    profile: str
    direction: str
    samples: dict[float, np.ndarray]
    summary: list[tuple[float, int, float, float, float]]


def timing_histogram(channel: str, profile, loads: Iterable[float], n: int = 1000, seed: int = 0,
                     direction: Optional[str] = None, router: Optional[Router] = None) -> HistogramResult:
    router = router or _router(profile)
    prof = router.profile
    if channel_class(channel) is not ChannelClass.TIMING:
        raise ChannelUnsupported(f"{channel} is not a timing channel")
    direction = direction or default_direction(channel, prof)
    spec = make_spec(channel, prof, direction)
    sender, receiver = timing_pair(spec, prof)
    sender.check(prof)
    receiver.check(prof)
    samples = {}
    for load in sorted(float(x) for x in loads):
        s = SenderGadget(sender.kind, load, sender.segment) if load > 0 else None
        samples[load] = measure(prof, receiver, n, s, seed=seed, router=router).capped()
    base = samples.get(0.0)
    summary = []
    for load, x in samples.items():
        p = t_test(x, base).p_value if base is not None and x.size >= 2 else math.nan
        summary.append((load, x.size, float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0, p))
    return HistogramResult(channel, prof.model_id, direction, samples, summary)


def write_histogram(result: HistogramResult, samples_fp: IO[str], summary_fp: IO[str]) -> None:
    samples_fp.write("load_pps,seq,rtt_us\n")
    for load, x in result.samples.items():
        for i, v in enumerate(x):
            samples_fp.write(f"{load:g},{i},{v:.3f}\n")
    summary_fp.write("load_pps,n,mean_us,std_us,p_value\n")
    for load, n, mean, std, p in result.summary:
        summary_fp.write(f"{load:g},{n},{mean:.3f},{std:.3f},{p:.6g}\n")


def mean_rtt_by_load(channel: str, profile, loads: Sequence[float], seeds: Sequence[int], n: int = 1000,
                     direction: Optional[str] = None) -> np.ndarray:
    """Seed-averaged mean probe RTT per load level."""
    out = np.zeros(len(loads))
    for s in seeds:
        res = timing_histogram(channel, profile, loads, n=n, seed=s, direction=direction)
        out += np.array([row[2] for row in res.summary])
    return out / len(seeds)


# Quality scoring

LOGGED_KINDS = {"ssh_kex"}
HIGH_PPS = 50.0


@dataclass
class QualityScore:
    channel: str
    pervasiveness: float
    supported: int
    rate_bps: float
    covertness: int
    logs: bool
    peak_pps: float
    profile: str


def _channel_kinds(channel: str) -> set[str]:
    if channel in TIMING_CHANNELS:
        return set(TIMING_CHANNELS[channel])
    return {"dhcp-direct": {"dhcp_nak"}, "igmp-direct": {"igmp_leave"}, "arp-direct": set()}[channel]


def _sender_pps(channel: str, prof: RouterProfile, direction: str) -> float:
    if channel_class(channel) is ChannelClass.TIMING:
        spec = make_spec(channel, prof, direction)
        sender, _ = timing_pair(spec, prof)
        return sender.rate_pps
    spec = make_spec(channel, prof, direction)
    frames_per_symbol = 2 if channel == "igmp-direct" else 1
    return spec.symbol_rate * frames_per_symbol


def quality(cells: dict[tuple[str, str], str], payload_size: int = 32, seeds: int = 2, seed: int = 0) -> list[QualityScore]:
    """Score every channel; rates are measured on the first supporting built-in profile."""
    builtins = builtin_profiles()
    models = [m for m in BUILTIN_ORDER if any(k[1] == m for k in cells)]
    scores = []
    for ch in CHANNELS:
        supporting = [m for m in models if cells.get((ch, m), "--") != "--"]
        if not supporting:
            scores.append(QualityScore(ch, 0.0, 0, 0.0, 3, False, 0.0, ""))
            continue
        prof = builtins[supporting[0]]
        direction = default_direction(ch, prof)
        if channel_class(ch) is ChannelClass.DIRECT:
            spec = make_spec(ch, prof, direction)
            sat = direct_saturation_symbol_rate(ch, prof) * spec.symbol_bits
            rates = [f * sat for f in (0.25, 0.5, 0.75, 0.9, 1.1, 1.5)]
            cal = None
        else:
            cal = calibrate_channel(ch, prof, direction, seed=seed)
            rates = [f * cal.saturation_bps for f in (0.25, 0.5, 1.0, 2.0)]
        res = ber_sweep(ch, prof, rates, payload_size=payload_size, seeds=seeds, seed=seed,
                        direction=direction, cal=cal)
        ok = [r for r, b, _ in res.sweep if b < 0.05]
        logs = bool(_channel_kinds(ch) & LOGGED_KINDS) or (
            bool(_channel_kinds(ch) & {"dhcp", "dhcp_nak"})
            and sum(builtins[m].logs_dhcp for m in supporting) * 2 > len(supporting))
        pps = _sender_pps(ch, prof, direction)
        high = pps > HIGH_PPS
        covert = 3 - int(logs) - int(high)
        scores.append(QualityScore(ch, len(supporting) / 7.0, len(supporting), max(ok) if ok else 0.0,
                                   covert, logs, pps, prof.model_id))
    scores.sort(key=lambda q: (-q.rate_bps, q.channel))
    return scores


def write_quality(scores: Sequence[QualityScore], fp: IO[str]) -> None:
    fp.write("channel,pervasiveness,supported_profiles,rate_bps,covertness_heuristic,logs,peak_pps,rate_profile\n")
    for q in scores:
        fp.write(f"{q.channel},{q.pervasiveness:.4f},{q.supported}/7,{q.rate_bps:.4g},{q.covertness},"
                 f"{int(q.logs)},{q.peak_pps:.4g},{q.profile}\n")


# Mitigations

@dataclass
class MitigationReport:
    channel: str
    profile: str
    mitigation: str
    rate_bps: float
    rows: list[tuple[str, float, Optional[float]]]


def mitigation_report(channel: str, profile, config: MitigationConfig, seed: int = 0, payload_size: int = 64,
                      rate_bps: Optional[float] = None, direction: Optional[str] = None,
                      seeds: int = 1) -> MitigationReport:
    """BER and calibration p-value with and without ``config`` at one fixed rate.

    Timing channels transmit with the unmitigated calibration in both runs,
    i.e. the parties do not adapt to the defence.
    """
    base = _router(profile)
    prof = base.profile
    direction = direction or default_direction(channel, prof)
    mitigated = apply_mitigation(prof, config)
    rows = []
    if channel_class(channel) is ChannelClass.TIMING:
        cal = calibrate_channel(channel, base, direction, seed=seed)
        rate = rate_bps or cal.saturation_bps
        cal_rate = cal.at_bit_rate(rate)
        try:
            p_mit = calibrate_channel(channel, mitigated, direction, seed=seed).p_value
        except ChannelTooWeak as exc:
            p_mit = exc.p_value
        for label, router, p in (("baseline", base, cal.p_value), ("mitigated", mitigated, p_mit)):
            bers = [transmit_timing(channel, router, direction, random_payload(seed + k, payload_size), cal_rate,
                                    seed=seed + k).ber for k in range(seeds)]
            rows.append((label, float(np.mean(bers)), p))
    else:
        spec = make_spec(channel, prof, direction)
        rate = rate_bps or spec.bit_rate
        for label, router in (("baseline", base), ("mitigated", mitigated)):
            bers = [transmit_direct(channel, router, direction, random_payload(seed + k, payload_size),
                                    seed=seed + k, bit_rate=rate).ber for k in range(seeds)]
            rows.append((label, float(np.mean(bers)), None))
    return MitigationReport(channel, prof.model_id, config.describe(), rate, rows)


def write_mitigation(report: MitigationReport, fp: IO[str]) -> None:
    fp.write("condition,ber,p_value\n")
    for label, ber, p in report.rows:
        fp.write(f"{label},{ber:.6f},{'' if p is None else f'{p:.6g}'}\n")


# Detection scenarios

def background(sim, rate_pps: float = 0.5, start_us: float = 0.0, duration_us: float = 60e6) -> None:
    """Low-rate ARP chatter from both segments."""
    for seg in (HOST, GUEST):
        run_sender(SenderGadget(SenderKind.ARP_FLOOD, rate_pps, seg), sim, start_us, duration_us, name=f"bg/{seg}")


def attack_timeline(seed: int = 0, attack_pps: float = 1000.0, duration_us: float = 10e6,
                    profile: str = "TP2", attack: bool = True):
    sim = Simulation(profile, seed=seed)
    background(sim, 0.5, 0.0, duration_us)
    if attack:
        run_sender(SenderGadget(SenderKind.ARP_FLOOD, attack_pps, GUEST), sim, 0.0, duration_us, name="attack")
    sim.run()
    return sim.timeline()


def transmission_timeline(channel: str = "arp-arp", profile: str = "TP2", direction: str = "g2h", seed: int = 0,
                          payload_size: int = 4, quiet_us: float = 10e6):
    """Background chatter, a quiet stretch, then one covert transmission.

    Returns ``(timeline, transmission start, transmission end)``.
    """
    router = _router(profile)
    cal = calibrate_channel(channel, router, direction, seed=seed)
    payload = random_payload(seed, payload_size)
    holder = {}

    def setup(sim):
        holder["sim"] = sim
        background(sim, 0.5, 0.0, quiet_us + 4 * cal.symbol_period * (payload_size * 8 + 60))

    tx = transmit_timing(channel, router, direction, payload, cal, seed=seed, start_us=quiet_us, setup=setup)
    return holder["sim"].timeline(), quiet_us, quiet_us + tx.duration_us + 2 * cal.symbol_period


# Run manifest

def manifest(command: str, seed: int, profiles: Sequence[RouterProfile] = (), **args) -> dict:
    return {
        "command": command,
        "seed": int(seed),
        "args": {k: v for k, v in sorted(args.items())},
        "profiles": {p.model_id: p.sha256() for p in profiles},
        "versions": {
            "crossrouter": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kernel": kernel.BACKEND,
        },
    }


def write_manifest(data: dict, fp: IO[str]) -> None:
    json.dump(data, fp, indent=2, sort_keys=True, ensure_ascii=False)
    fp.write("\n")


def transmission_summary(tx: Transmission) -> str:
    return f"{tx.channel} {tx.direction}: ber={tx.ber:.4f} rate={tx.bit_rate:.4g}bps error={tx.error or 'none'}"
