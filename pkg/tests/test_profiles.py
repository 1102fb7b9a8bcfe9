import pytest
import yaml

from crossrouter.errors import SchemaError
from crossrouter.profiles import BUILTIN_ORDER, builtin_profiles, get_profile, load_profile, profile_document

MINIMAL = {"model_id": "X", "service_time_us": {"arp": 100, "http": 500}}


def test_builtins_load():
    profs = builtin_profiles()
    assert tuple(profs) == BUILTIN_ORDER or set(profs) == set(BUILTIN_ORDER)
    assert profs["LS1"].icmp_on_guest
    dl1 = profs["DL1"]
    assert not dl1.dhcp_nak_broadcast_leak and not dl1.igmp_query_leak
    assert dl1.direct_directions("arp-direct").label == "none"


def test_document_round_trip():
    for name in BUILTIN_ORDER:
        prof = get_profile(name)
        again = load_profile(prof.to_document(), name)
        assert again == prof and again.sha256() == prof.sha256()


def test_yaml_path(tmp_path):
    path = tmp_path / "custom.yaml"
    path.write_text(yaml.safe_dump(MINIMAL))
    assert get_profile(path).model_id == "X"


@pytest.mark.parametrize("doc,where", [
    ({"service_time_us": {"arp": 1}}, "profile.model_id"),
    ({**MINIMAL, "colour": "red"}, "profile.colour"),
    ({**MINIMAL, "service_time_us": {"arp": -1, "http": 1}}, "profile.service_time_us.arp"),
    ({**MINIMAL, "service_time_us": {"arp": 1, "http": 1, "teleport": 1}}, "profile.service_time_us.teleport"),
    ({**MINIMAL, "icmp_on_guest": "yes"}, "profile.icmp_on_guest"),
    ({**MINIMAL, "igmp_query_leak": "sideways"}, "profile.igmp_query_leak"),
    ({**MINIMAL, "igmp_query_leak": "both"}, "profile.service_time_us.igmp_leave"),
    ({**MINIMAL, "ssh_enabled_on_host": True,
      "service_time_us": {"arp": 100, "http": 500, "ssh_kex": 600, "ssh_abort": 10}}, "profile.service_time_us.ssh_kex"),
    ({**MINIMAL, "timing": {"smoke-signal": "both"}}, "profile.timing.smoke-signal"),
])
def test_schema_errors_name_the_path(doc, where):
    with pytest.raises(SchemaError) as info:
        load_profile(doc)
    assert info.value.path == where


def test_unknown_builtin():
    with pytest.raises((KeyError, SchemaError, FileNotFoundError)):
        get_profile("NOPE")


def test_profile_document_is_plain():
    doc = profile_document("TP2")
    assert doc["model_id"] == "TP2"
    yaml.safe_dump(doc)
