"""Router vulnerability profiles.

A profile is a YAML/JSON mapping. Every leak or coupling is expressed as a
direction: ``none``, ``g2h`` (guest to host), ``h2g`` (host to guest) or
``both``; plain booleans mean ``none``/``both``. Unknown keys are rejected so a
typo never silently disables a leak.

Timing couplings are per channel. A ``g2h`` entry for ``arp-csrf`` means
guest-side ARP load is felt by host-side HTTP requests; ``h2g`` means host-side
HTTP load is felt by guest-side ARP requests.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import SchemaError

HOST = "host"
GUEST = "guest"
SEGMENTS = (HOST, GUEST)

KINDS = ("arp", "icmp", "dhcp", "dhcp_nak", "igmp_leave", "http", "ssh_kex", "ssh_abort")

# (guest-side kind, host-side kind) of the gadget pair behind each timing channel
TIMING_CHANNELS = {
    "arp-ssh": ("arp", "ssh_kex"),
    "arp-arp": ("arp", "arp"),
    "arp-csrf": ("arp", "http"),
    "icmp-icmp": ("icmp", "icmp"),
    "dhcp-arp": ("dhcp", "arp"),
}
DIRECT_CHANNELS = ("dhcp-direct", "igmp-direct", "arp-direct")


class ArpForwarding(str, enum.Enum):
    NONE = "none"
    SUBNET_RESTRICTED = "subnet_restricted"
    UNRESTRICTED = "unrestricted"


@dataclass(frozen=True)
class Directions:
    g2h: bool = False
    h2g: bool = False

    def __bool__(self) -> bool:
        return self.g2h or self.h2g

    def allows(self, sender_segment: str) -> bool:
        return self.g2h if sender_segment == GUEST else self.h2g

    @property
    def arrow(self) -> str:
        return {(True, True): "⇔", (True, False): "⇒", (False, True): "⇐"}.get((self.g2h, self.h2g), "--")

    @property
    def label(self) -> str:
        return {(True, True): "both", (True, False): "g2h", (False, True): "h2g"}.get((self.g2h, self.h2g), "none")

    @classmethod
    def parse(cls, value: Any, path: str) -> "Directions":
        if isinstance(value, Directions):
            return value
        if isinstance(value, bool):
            return cls(value, value)
        table = {"none": (False, False), "g2h": (True, False), "h2g": (False, True), "both": (True, True)}
        if isinstance(value, str) and value.lower() in table:
            return cls(*table[value.lower()])
        raise SchemaError(path, f"expected one of none/g2h/h2g/both or a boolean, got {value!r}")


@dataclass(frozen=True)
class RouterProfile:
    model_id: str
    service_time_us: Mapping[str, float]
    dhcp_nak_broadcast_leak: Directions = Directions()
    igmp_query_leak: Directions = Directions()
    arp_broadcast_forwarding: ArpForwarding = ArpForwarding.NONE
    arp_forward_directions: Directions = Directions()
    ssh_enabled_on_host: bool = False
    icmp_on_guest: bool = False
    web_ui_on_host: bool = True
    jitter_stddev_us: float = 0.0
    logs_dhcp: bool = False
    dhcp_log_us: float = 3000.0
    queue_capacity: int = 64
    discipline: str = "ps"
    dhcp_backlog_limit: int = 0
    igmp_leave_holdoff_us: float = 0.0
    timing: Mapping[str, Directions] = field(default_factory=dict)
    cpu: str = ""

    def enabled(self, kind: str, segment: str) -> bool:
        """Whether the control plane accepts requests of ``kind`` from ``segment``."""
        if kind in ("ssh_kex", "ssh_abort"):
            return segment == HOST and self.ssh_enabled_on_host
        if kind == "http":
            return segment == HOST and self.web_ui_on_host
        if kind == "icmp":
            return segment == HOST or self.icmp_on_guest
        return kind in self.service_time_us

    def mean_service_us(self, kind: str) -> float:
        base = float(self.service_time_us[kind])
        if self.logs_dhcp and kind in ("dhcp", "dhcp_nak"):
            base += self.dhcp_log_us
        return base

    def timing_directions(self, channel: str) -> Directions:
        return self.timing.get(channel, Directions())

    def direct_directions(self, channel: str) -> Directions:
        if channel == "dhcp-direct":
            return self.dhcp_nak_broadcast_leak
        if channel == "igmp-direct":
            return self.igmp_query_leak
        if channel == "arp-direct":
            if self.arp_broadcast_forwarding is ArpForwarding.NONE:
                return Directions()
            return self.arp_forward_directions
        raise KeyError(channel)

    def to_document(self) -> dict:
        doc: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Directions):
                v = v.label
            elif isinstance(v, ArpForwarding):
                v = v.value
            elif f.name == "timing":
                v = {k: d.label for k, d in sorted(v.items())}
            elif f.name == "service_time_us":
                v = {k: float(x) for k, x in sorted(v.items())}
            doc[f.name] = v
        return doc

    def sha256(self) -> str:
        blob = json.dumps(self.to_document(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_changes(self, **changes) -> "RouterProfile":
        return replace(self, **changes)


_REQUIRED = ("model_id", "service_time_us")
_BOOL_FIELDS = ("ssh_enabled_on_host", "icmp_on_guest", "web_ui_on_host", "logs_dhcp")
_DIR_FIELDS = ("dhcp_nak_broadcast_leak", "igmp_query_leak", "arp_forward_directions")
_KNOWN = {f.name for f in fields(RouterProfile)}


def _number(doc, key, path, minimum=0.0, integer=False):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise SchemaError(f"{path}.{key}", "expected an integer")
    if v < minimum:
        raise SchemaError(f"{path}.{key}", f"must be >= {minimum}")
    return int(v) if integer else float(v)


def load_profile(document: Mapping[str, Any], path: str = "profile") -> RouterProfile:
    """Validate a parsed document and build a :class:`RouterProfile`."""
    if not isinstance(document, Mapping):
        raise SchemaError(path, "profile must be a mapping")
    for key in document:
        if key not in _KNOWN:
            raise SchemaError(f"{path}.{key}", "unknown field")
    for key in _REQUIRED:
        if key not in document:
            raise SchemaError(f"{path}.{key}", "required field missing")
    doc = dict(document)
    kw: dict[str, Any] = {"model_id": str(doc["model_id"])}

    st = doc["service_time_us"]
    if not isinstance(st, Mapping) or not st:
        raise SchemaError(f"{path}.service_time_us", "expected a non-empty mapping")
    services = {}
    for kind, value in st.items():
        if kind not in KINDS:
            raise SchemaError(f"{path}.service_time_us.{kind}", f"unknown request kind (known: {', '.join(KINDS)})")
        services[kind] = _number(st, kind, f"{path}.service_time_us")
    kw["service_time_us"] = services

    for key in _BOOL_FIELDS:
        if key in doc:
            if not isinstance(doc[key], bool):
                raise SchemaError(f"{path}.{key}", f"expected a boolean, got {doc[key]!r}")
            kw[key] = doc[key]
    for key in _DIR_FIELDS:
        if key in doc:
            kw[key] = Directions.parse(doc[key], f"{path}.{key}")
    if "arp_broadcast_forwarding" in doc:
        try:
            kw["arp_broadcast_forwarding"] = ArpForwarding(str(doc["arp_broadcast_forwarding"]).lower())
        except ValueError:
            raise SchemaError(f"{path}.arp_broadcast_forwarding",
                              "expected none, subnet_restricted or unrestricted") from None
    for key in ("jitter_stddev_us", "dhcp_log_us", "igmp_leave_holdoff_us"):
        if key in doc:
            kw[key] = _number(doc, key, path)
    for key in ("queue_capacity", "dhcp_backlog_limit"):
        if key in doc:
            kw[key] = _number(doc, key, path, integer=True)
    if "discipline" in doc:
        if doc["discipline"] not in ("ps", "fifo"):
            raise SchemaError(f"{path}.discipline", "expected ps or fifo")
        kw["discipline"] = doc["discipline"]
    if "cpu" in doc:
        kw["cpu"] = str(doc["cpu"])
    if "timing" in doc:
        tm = doc["timing"]
        if not isinstance(tm, Mapping):
            raise SchemaError(f"{path}.timing", "expected a mapping of channel to direction")
        timing = {}
        for ch, d in tm.items():
            if ch not in TIMING_CHANNELS:
                raise SchemaError(f"{path}.timing.{ch}", "unknown timing channel")
            timing[ch] = Directions.parse(d, f"{path}.timing.{ch}")
        kw["timing"] = timing

    prof = RouterProfile(**kw)
    _check_services(prof, path)
    return prof


def _check_services(prof: RouterProfile, path: str) -> None:
    needed = {"arp"}
    if prof.icmp_on_guest:
        needed.add("icmp")
    if prof.ssh_enabled_on_host:
        needed |= {"ssh_kex", "ssh_abort"}
    if prof.web_ui_on_host:
        needed.add("http")
    if prof.dhcp_nak_broadcast_leak:
        needed.add("dhcp_nak")
    if prof.igmp_query_leak:
        needed.add("igmp_leave")
    for ch, d in prof.timing.items():
        if d:
            needed |= set(TIMING_CHANNELS[ch])
    for kind in sorted(needed):
        if kind not in prof.service_time_us:
            raise SchemaError(f"{path}.service_time_us.{kind}", "missing service time for an enabled request kind")
    if prof.ssh_enabled_on_host:
        light = max(prof.service_time_us.get(k, 0.0) for k in ("arp", "icmp", "http"))
        if prof.service_time_us["ssh_kex"] < 10 * light:
            raise SchemaError(f"{path}.service_time_us.ssh_kex", "heavy requests must cost at least 10x light ones")


def _builtin_documents() -> dict:
    text = resources.files("crossrouter").joinpath("data/builtin_profiles.yaml").read_text("utf-8")
    return yaml.safe_load(text)


_BUILTINS: dict[str, RouterProfile] | None = None


def builtin_profiles() -> dict[str, RouterProfile]:
    global _BUILTINS
    if _BUILTINS is None:
        docs = _builtin_documents()
        _BUILTINS = {name: load_profile(doc, f"builtin.{name}") for name, doc in docs.items()}
    return dict(_BUILTINS)


BUILTIN_ORDER = ("TP1", "TP2", "DL1", "DL2", "ED1", "ED2", "LS1")


def get_profile(name_or_path: str | Path) -> RouterProfile:
    """Built-in model id (``"TP2"``) or a path to a YAML/JSON document."""
    builtins = builtin_profiles()
    key = str(name_or_path)
    if key.upper() in builtins:
        return builtins[key.upper()]
    p = Path(name_or_path)
    if not p.exists():
        raise SchemaError("", f"no built-in profile or file named {key!r}")
    doc = yaml.safe_load(p.read_text("utf-8"))
    return load_profile(doc, p.name)


def profile_document(name: str) -> dict:
    return copy.deepcopy(_builtin_documents()[name])
