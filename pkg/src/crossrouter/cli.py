"""Command line entry point: ``crossrouter <verb> [options]``."""

from __future__ import annotations

import argparse
import io
import socket
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from .channels import CHANNELS, ChannelClass, channel_class, transmit_direct, transmit_timing
from .detection import MitigationConfig
from .errors import ChannelUnsupported, CrossRouterError
from .harness import (
    ber_sweep, calibrate_channel, default_direction, manifest, mitigation_report, quality, support_matrix,
    timing_histogram, write_histogram, write_manifest, write_matrix, write_mitigation, write_quality, write_sweep,
)
from .profiles import BUILTIN_ORDER, builtin_profiles, get_profile
from .router import Router

DEFAULT_PORT = 47011


def _floats(text: str) -> list[float]:
    text = text.strip()
    return [float(x) for x in text.split(",") if x.strip()] if text else []


def _emit(args, render: Callable[[io.StringIO], None], data: dict, suffix: str = "") -> str:
    buf = io.StringIO()
    render(buf)
    text = buf.getvalue()
    if args.out:
        out = Path(args.out)
        if suffix:
            out = out.with_name(out.stem + suffix + out.suffix)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        if not suffix:
            with open(str(args.out) + ".manifest.json", "w", encoding="utf-8") as fp:
                write_manifest(data, fp)
    return text


def _direction(args, prof) -> str:
    return args.direction or default_direction(args.channel, prof)


def cmd_matrix(args) -> int:
    if args.profile:
        profiles = [get_profile(p) for p in args.profile]
    else:
        b = builtin_profiles()
        profiles = [b[k] for k in BUILTIN_ORDER]
    cells = support_matrix(profiles, seed=args.seed, n=args.n)
    data = manifest("matrix", args.seed, profiles, n=args.n)
    sys.stdout.write(_emit(args, lambda fp: write_matrix(cells, fp), data))
    return 0


def cmd_ber_sweep(args) -> int:
    prof = get_profile(args.profile)
    res = ber_sweep(args.channel, prof, _floats(args.rates), payload_size=args.payload_size, seeds=args.seeds,
                    seed=args.seed, direction=args.direction)
    data = manifest("ber-sweep", args.seed, [prof], channel=args.channel, rates=args.rates,
                    payload_size=args.payload_size, seeds=args.seeds, direction=res.direction)
    sys.stdout.write(_emit(args, lambda fp: write_sweep(res, fp), data))
    return 0


def cmd_timing_hist(args) -> int:
    prof = get_profile(args.profile)
    res = timing_histogram(args.channel, prof, _floats(args.loads), n=args.n, seed=args.seed,
                           direction=args.direction)
    data = manifest("timing-hist", args.seed, [prof], channel=args.channel, loads=args.loads, n=args.n,
                    direction=res.direction)
    summary = io.StringIO()
    _emit(args, lambda fp: write_histogram(res, fp, summary), data)
    _emit(args, lambda fp: fp.write(summary.getvalue()), data, suffix="_summary")
    sys.stdout.write(summary.getvalue())
    return 0


def cmd_quality(args) -> int:
    b = builtin_profiles()
    profiles = [b[k] for k in BUILTIN_ORDER]
    cells = support_matrix(profiles, seed=args.seed)
    scores = quality(cells, payload_size=args.payload_size, seeds=args.seeds, seed=args.seed)
    data = manifest("quality", args.seed, profiles, payload_size=args.payload_size, seeds=args.seeds)
    text = _emit(args, lambda fp: write_quality(scores, fp), data)
    sys.stdout.write(text)
    sys.stdout.write("# covertness_heuristic: 3 = no log entries and low rate, 2 = one of them, 1 = neither\n")
    return 0


def _mitigation(args) -> MitigationConfig:
    if args.mitigation == "none":
        return MitigationConfig.none()
    if args.mitigation == "random-delay":
        if args.max_us is None:
            prof = get_profile(args.profile)
            if channel_class(args.channel) is ChannelClass.TIMING:
                cal = calibrate_channel(args.channel, prof, _direction(args, prof), seed=args.seed)
                return MitigationConfig.random_delay(4.0 * cal.gap_us)
            return MitigationConfig.random_delay(1000.0)
        return MitigationConfig.random_delay(args.max_us)
    return MitigationConfig.time_slice(args.slice_us)


def cmd_mitigate(args) -> int:
    prof = get_profile(args.profile)
    config = _mitigation(args)
    rep = mitigation_report(args.channel, prof, config, seed=args.seed, payload_size=args.payload_size,
                            rate_bps=args.rate, direction=args.direction, seeds=args.seeds)
    data = manifest("mitigate", args.seed, [prof], channel=args.channel, mitigation=rep.mitigation,
                    rate_bps=rep.rate_bps, payload_size=args.payload_size, seeds=args.seeds)
    sys.stdout.write(_emit(args, lambda fp: write_mitigation(rep, fp), data))
    return 0


class ChatLink:
    """Carries text lines across the simulated router over one covert channel."""

    def __init__(self, channel: str, profile: str, direction: Optional[str] = None, seed: int = 0,
                 rate: Optional[float] = None):
        self.router = Router(get_profile(profile))
        self.channel = channel
        self.direction = direction or default_direction(channel, self.router.profile)
        self.seed = seed
        self.rate = rate
        self.count = 0
        self.cal = None
        if channel_class(channel) is ChannelClass.TIMING:
            self.cal = calibrate_channel(channel, self.router, self.direction, seed=seed)
            if rate:
                self.cal = self.cal.at_bit_rate(rate)

    def send(self, text: str):
        payload = text.encode("utf-8")
        seed = self.seed + self.count
        self.count += 1
        if self.cal is not None:
            tx = transmit_timing(self.channel, self.router, self.direction, payload, self.cal, seed=seed)
        else:
            tx = transmit_direct(self.channel, self.router, self.direction, payload, seed=seed, bit_rate=self.rate)
        received = tx.payload.decode("utf-8", errors="replace") if tx.payload is not None else None
        return received, tx


def _chat_line(link: ChatLink, line: str, out) -> None:
    received, tx = link.send(line)
    if received is None:
        out.write(f"[lost: {tx.error}, ber={tx.ber:.3f}]\n")
    else:
        out.write(f"{received}\n")
        out.write(f"[{len(line.encode())} bytes over {link.channel} {link.direction} in "
                  f"{tx.duration_us / 1e6:.2f} simulated s]\n")
    out.flush()


def cmd_chat(args) -> int:
    try:
        if args.role == "sender":
            return _chat_sender(args)
        link = ChatLink(args.channel, args.profile, args.direction, args.seed, args.rate)
        if args.role == "receiver":
            return _chat_receiver(args, link)
        sys.stderr.write(f"chat over {link.channel} ({link.direction}) on {link.router.profile.model_id}; "
                         "type lines, Ctrl-D to quit\n")
        for line in sys.stdin:
            _chat_line(link, line.rstrip("\n"), sys.stdout)
    except KeyboardInterrupt:
        sys.stderr.write("\n")
    return 0


def _chat_receiver(args, link: ChatLink) -> int:
    with socket.create_server(("127.0.0.1", args.port)) as srv:
        sys.stderr.write(f"receiver waiting on 127.0.0.1:{args.port}\n")
        while True:
            conn, _ = srv.accept()
            with conn, conn.makefile("r", encoding="utf-8") as stream_in:
                for line in stream_in:
                    _chat_line(link, line.rstrip("\n"), sys.stdout)


def _chat_sender(args) -> int:
    with socket.create_connection(("127.0.0.1", args.port)) as conn:
        for line in sys.stdin:
            conn.sendall(line.encode("utf-8"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossrouter", description="Covert channels across a simulated guest/host router.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, channel=True, profile=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="write CSV here (plus <out>.manifest.json)")
        if channel:
            sp.add_argument("--channel", required=True, choices=CHANNELS)
            sp.add_argument("--direction", choices=("g2h", "h2g"))
        if profile:
            sp.add_argument("--profile", default="TP2", help="built-in model id or YAML path")

    sp = sub.add_parser("matrix", help="measure which channels each profile supports")
    common(sp, channel=False, profile=False)
    sp.add_argument("--profile", action="append", help="repeatable; default all built-ins")
    sp.add_argument("--n", type=int, default=1000, help="probes per calibration condition")
    sp.set_defaults(func=cmd_matrix)

    sp = sub.add_parser("ber-sweep", help="bit error rate against bit rate")
    common(sp)
    sp.add_argument("--rates", required=True, help="comma-separated bit rates")
    sp.add_argument("--payload-size", type=int, default=256)
    sp.add_argument("--seeds", type=int, default=5)
    sp.set_defaults(func=cmd_ber_sweep)

    sp = sub.add_parser("timing-hist", help="probe RTT distributions under sender load")
    common(sp)
    sp.add_argument("--loads", default="0,100,200,400,800", help="comma-separated loads in pps")
    sp.add_argument("--n", type=int, default=1000)
    sp.set_defaults(func=cmd_timing_hist)

    sp = sub.add_parser("quality", help="pervasiveness, rate and covertness per channel")
    common(sp, channel=False, profile=False)
    sp.add_argument("--payload-size", type=int, default=32)
    sp.add_argument("--seeds", type=int, default=2)
    sp.set_defaults(func=cmd_quality)

    sp = sub.add_parser("chat", help="send text lines over a covert channel")
    common(sp)
    sp.add_argument("--role", choices=("both", "sender", "receiver"), default="both")
    sp.add_argument("--port", type=int, default=DEFAULT_PORT)
    sp.add_argument("--rate", type=float, help="bit rate (default: channel default)")
    sp.set_defaults(func=cmd_chat)

    sp = sub.add_parser("mitigate", help="channel quality with and without a defence")
    common(sp)
    sp.add_argument("--mitigation", choices=("none", "random-delay", "time-slice"), required=True)
    sp.add_argument("--max-us", type=float, help="random delay bound (default 4x calibrated gap)")
    sp.add_argument("--slice-us", type=float, default=10_000.0)
    sp.add_argument("--rate", type=float, help="bit rate (default: saturation rate)")
    sp.add_argument("--payload-size", type=int, default=64)
    sp.add_argument("--seeds", type=int, default=1)
    sp.set_defaults(func=cmd_mitigate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ChannelUnsupported as exc:
        sys.stderr.write(f"unsupported: {exc}\n")
        return 2
    except CrossRouterError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
