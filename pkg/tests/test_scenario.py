import copy

import pytest
from hypothesis import given
from hypothesis import strategies as st

from icenet.addressing import Ipv4Address, MacAddress, parse_ipv4
from icenet.devices import Bridge, Host, Router, Switch, WirelessGateway
from icenet.errors import BuildRejected, ScenarioParseError
from icenet.scenario import (
    GROUPS,
    SERVICES,
    AssocDecl,
    BridgeDecl,
    DnsRecordDecl,
    HostDecl,
    LinkDecl,
    PortDecl,
    RouterDecl,
    ScenarioDocument,
    ServiceDecl,
    SubifDecl,
    SwitchDecl,
    UserDecl,
    VlanDecl,
    WgwDecl,
    assign_macs,
    build_network,
    format_scenario,
    parse_expectations,
    parse_scenario,
    validate_scenario,
)

ip = parse_ipv4


# -- parsing ------------------------------------------------------------------


def test_grammar_examples():
    doc = parse_scenario("switch SW1 ports 24\nport SW1 24 trunk 10,20,30  # to SW2\n\n")
    assert doc.devices == [SwitchDecl("SW1", 24)]
    assert doc.ports == [PortDecl("SW1", 24, "trunk", (10, 20, 30))]
    assert doc.ports[0].line == 2


@pytest.mark.parametrize("text,line,token", [
    ("port SW1 0 access 10", 1, "0"),
    ("switch SW1 ports 24\nport SW1 3 trunk 10,5000", 2, "5000"),
    ("host A mac auto static 192.168.010.1/24 gw 1.1.1.1 dns 1.1.1.1", 1, "192.168.010.1/24"),
    ("subif R1 f0/0.10 dot1q 20 ip 192.168.10.1/24", 1, "20"),
    ("frobnicate X", 1, "frobnicate"),
    ("router R1 extra", 1, "extra"),
    ("user bob group wizards", 1, "wizards"),
    ("wgw W mode bridge ssid s lan 10.0.0.1/24", 1, "bridge"),
    ("link SW1-1 SW2:1", 1, "SW1-1"),
    ("switch SW1 ports", 1, "<end of line>"),
])
def test_parse_errors_carry_line_and_token(text, line, token):
    with pytest.raises(ScenarioParseError) as exc:
        parse_scenario(text)
    assert exc.value.line == line
    assert exc.value.token == token
    assert f"line {line}" in str(exc.value)


def test_host_and_wgw_forms():
    doc = parse_scenario(
        "host PC mac 02:00:00:00:00:AA static 192.168.10.21/24 gw 192.168.10.1 dns 192.168.10.12\n"
        "host W mac auto dhcp\n"
        "wgw G mode gateway ssid info.local lan 192.168.1.1/24 wan 192.168.10.2/24 gw 192.168.10.1 "
        "pool 192.168.1.100 192.168.1.149 dns 192.168.10.12\n"
        "assoc W info.local via G\n"
        "dnsrecord PC Info.Local. 192.168.10.12\n")
    pc, w, g = doc.devices
    assert pc.mac == MacAddress(0x0200000000AA) and not pc.dhcp
    assert w.dhcp and w.mac is None
    assert g.nat_enabled and g.lease_gateway == ip("192.168.1.1")
    assert doc.assocs == [AssocDecl("W", "info.local", "G")]
    assert doc.dnsrecords[0].fqdn == "info.local"


def test_expectation_grammar():
    exps = parse_expectations(
        "reach PC_V20_1 SERVER yes\nlease CORR_1 192.168.1.100\n"
        "resolve PC_A info.local 192.168.10.12\nresolve PC_A nope.local NXDOMAIN\n"
        "probe CORR_1 info.local 80 connected\n")
    assert [e.kind for e in exps] == ["reach", "lease", "resolve", "resolve", "probe"]
    assert exps[4].port == 80 and exps[3].expected == "NXDOMAIN"
    with pytest.raises(ScenarioParseError):
        parse_expectations("reach A B maybe")


# -- round trip ---------------------------------------------------------------

names = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,7}", fullmatch=True)
ips = st.builds(Ipv4Address, st.integers(0, 2**32 - 1))
pfx = st.integers(0, 32)
vids = st.integers(1, 4094)
port_names = st.sampled_from(["1", "24", "eth0", "f0/0", "wan", "lan1", "a", "b"])
fqdns = st.from_regex(r"[a-z][a-z0-9]{0,6}(\.[a-z][a-z0-9]{0,6}){0,2}", fullmatch=True)

static_hosts = st.builds(HostDecl, names, st.none() | st.builds(MacAddress, st.integers(0, 2**48 - 1)),
                         ips, pfx, ips, ips, st.booleans())
dhcp_hosts = st.builds(HostDecl, names, st.none() | st.builds(MacAddress, st.integers(0, 2**48 - 1)),
                       server=st.booleans())


@st.composite
def wgws(draw):
    wan = draw(st.booleans())
    pool = draw(st.booleans())
    return WgwDecl(
        draw(names), draw(st.sampled_from(["gateway", "ap"])), draw(names), draw(ips), draw(pfx),
        draw(ips) if wan else None, draw(pfx) if wan else None, draw(ips) if wan else None,
        draw(st.none() | st.booleans()),
        draw(ips) if pool else None, draw(ips) if pool else None, draw(ips) if pool else None,
        draw(st.none() | ips) if pool else None)


devices = st.one_of(
    st.builds(SwitchDecl, names, st.integers(1, 48), st.integers(0, 4)),
    st.builds(RouterDecl, names), static_hosts, dhcp_hosts, wgws(), st.builds(BridgeDecl, names, names))


@st.composite
def ports(draw):
    if draw(st.booleans()):
        return PortDecl(draw(names), draw(st.integers(1, 48)), "access", (draw(vids),))
    return PortDecl(draw(names), draw(st.integers(1, 48)), "trunk",
                    tuple(draw(st.lists(vids, min_size=1, max_size=4, unique=True))))


@st.composite
def subifs(draw):
    v = draw(vids)
    return SubifDecl(draw(names), draw(st.sampled_from(["f0/0", "g0", "Gi0/1"])), v, draw(ips), draw(pfx))


documents = st.builds(
    ScenarioDocument,
    devices=st.lists(devices, max_size=6),
    vlans=st.lists(st.builds(VlanDecl, names, vids, names), max_size=3),
    ports=st.lists(ports(), max_size=4),
    subifs=st.lists(subifs(), max_size=3),
    links=st.lists(st.builds(LinkDecl, names, port_names, names, port_names), max_size=4),
    assocs=st.lists(st.builds(AssocDecl, names, names, st.none() | names), max_size=3),
    services=st.lists(st.builds(ServiceDecl, names, st.sampled_from(SERVICES), st.integers(1, 65535)),
                      max_size=3),
    dnsrecords=st.lists(st.builds(DnsRecordDecl, names, fqdns, ips), max_size=3),
    users=st.lists(st.builds(UserDecl, names, st.sampled_from(GROUPS)), max_size=3),
)


@given(documents)
def test_format_parse_round_trip(doc):
    text = format_scenario(doc)
    assert parse_scenario(text) == doc
    assert format_scenario(parse_scenario(text)) == text


def test_bundled_round_trip(ice_doc):
    assert parse_scenario(format_scenario(ice_doc)) == ice_doc


# -- validation ---------------------------------------------------------------

BASE = """\
switch SW1 ports 8
router R1
subif R1 f0/0.10 dot1q 10 ip 192.168.10.1/24
subif R1 f0/0.20 dot1q 20 ip 192.168.20.1/24
vlan SW1 10 name A
vlan SW1 20 name B
port SW1 1 trunk 10,20
port SW1 2 access 10
port SW1 3 access 20
link SW1:1 R1:f0/0
"""


def rules_of(text):
    return {f.rule for f in validate_scenario(parse_scenario(text)).findings}


def errors_of(text):
    return {f.rule for f in validate_scenario(parse_scenario(text)).errors}


def test_clean_base_has_no_findings():
    assert rules_of(BASE) == set()


@pytest.mark.parametrize("extra,rule", [
    ("host A mac auto static 192.168.10.12/24 gw 192.168.10.1 dns 192.168.10.12\n"
     "host B mac auto static 192.168.10.12/24 gw 192.168.10.1 dns 192.168.10.12\n", "duplicate-ip"),
    ("host A mac auto static 192.168.10.12/24 gw 192.168.20.1 dns 192.168.10.12\n", "gateway-outside-subnet"),
    ("switch SW2 ports 8\nport SW2 1 trunk 10\nlink SW1:4 SW2:1\nport SW1 4 trunk 10,20\n",
     "trunk-vlan-mismatch"),
    ("host A mac auto static 192.168.10.22/24 gw 192.168.10.1 dns 192.168.10.12\nlink SW1:3 A:eth0\n",
     "access-vlan-mismatch"),
    ("host A mac auto static 192.168.10.22/24 gw 192.168.10.1 dns 192.168.10.12\nlink SW1:1 A:eth0\n",
     "duplicate-link-endpoint"),
    ("link SW1:9 R1:f0/1\n", "bad-port"),
    ("port SW1 9 access 10\n", "port-out-of-range"),
    ("link SW1:5 GHOST:eth0\n", "dangling-name"),
    ("assoc GHOST info.local\n", "dangling-name"),
    ("wgw G mode gateway ssid s lan 192.168.1.1/24 wan 192.168.10.2/24 gw 192.168.10.1 "
     "pool 192.168.2.100 192.168.2.149 dns 192.168.10.12\n", "dhcp-pool-outside-subnet"),
    ("wgw G mode ap ssid s lan 192.168.10.3/24 pool 192.168.10.149 192.168.10.100 dns 192.168.10.12\n",
     "dhcp-pool-empty"),
    ("wgw G mode ap ssid s lan 192.168.10.3/24 pool 192.168.10.1 192.168.10.149 dns 192.168.10.12\n",
     "dhcp-pool-overlap"),
    ("wgw G mode gateway ssid s lan 192.168.1.1/24\n", "wgw-mode"),
    ("wgw G mode ap ssid s lan 192.168.1.1/24 nat on\n", "wgw-mode"),
    ("switch SW2 ports 8\nlink SW1:5 SW2:1\nlink SW1:6 SW2:2\n", "l2-loop"),
    ("bridge BR ssid x\nlink SW1:5 BR:a\nlink BR:b SW1:6\n", "l2-loop"),
    ("host A mac 02:00:00:00:00:01 dhcp\nhost B mac 02:00:00:00:00:01 dhcp\n", "duplicate-mac"),
    ("host A mac auto dhcp\nlink SW1:2 A:eth0\nlink SW1:4 A:eth1\n", "host-multi-link"),
    ("subif R1 f0/0.10 dot1q 10 ip 192.168.11.1/24\n", "duplicate-subif"),
])
def test_error_rules(extra, rule):
    assert rule in errors_of(BASE + extra)


@pytest.mark.parametrize("extra,rule", [
    ("subif R1 f0/0.30 dot1q 30 ip 192.168.30.1/24\n", "subif-vlan-not-on-trunk"),
    ("host A mac auto dhcp\n", "host-unattached"),
    ("port SW1 4 access 99\n", "vlan-undeclared"),
])
def test_warning_rules(extra, rule):
    report = validate_scenario(parse_scenario(BASE + extra))
    assert rule in {f.rule for f in report.warnings}
    assert report.ok


def test_triangle_is_a_loop(load_fixture):
    report = validate_scenario(load_fixture("triangle.scenario"))
    assert [f.rule for f in report.errors] == ["l2-loop"]


def test_paper_pool_is_clean():
    text = ("wgw WGW1 mode gateway ssid info.local lan 192.168.1.1/24 wan 192.168.10.2/24 gw 192.168.10.1 "
            "nat on pool 192.168.1.100 192.168.1.149 dns 192.168.10.12\n")
    assert rules_of(BASE + text) == set()


def test_validation_is_pure(ice_doc):
    before = copy.deepcopy(ice_doc)
    first = validate_scenario(ice_doc)
    assert validate_scenario(ice_doc) == first
    assert ice_doc == before


def test_bundled_validates_clean(ice_doc):
    assert validate_scenario(ice_doc).findings == []


# -- build --------------------------------------------------------------------


def test_empty_document_builds_empty_network():
    net = build_network(ScenarioDocument())
    assert net.devices == {} and net.links == []


def test_errors_reject_build(load_fixture):
    with pytest.raises(BuildRejected) as exc:
        build_network(load_fixture("duplicate_ip.scenario"))
    assert exc.value.report.errors[0].rule == "duplicate-ip"


def test_auto_macs_follow_declaration_order():
    doc = parse_scenario(BASE + "host A mac auto dhcp\nhost B mac 02:aa:00:00:00:01 dhcp\nhost C mac auto dhcp\n")
    macs = assign_macs(doc)
    assert [str(macs[(n, "eth")]) for n in "ABC"] == ["02:00:00:00:00:01", "02:aa:00:00:00:01",
                                                     "02:00:00:00:00:02"]
    assert str(macs[("R1", "f0/0")]) == "02:00:00:00:00:00"
    assert assign_macs(doc) == macs


def test_bundled_builds_the_department(ice_doc, ice_net):
    kinds = {}
    for d in ice_net.devices.values():
        kinds.setdefault(type(d), []).append(d)
    assert len(kinds[Switch]) == 3 and all(s.port_count == 24 for s in kinds[Switch])
    (r1,) = kinds[Router]
    assert sorted(s.label for s in r1.subinterfaces.values()) == ["f0/0.10", "f0/0.20", "f0/0.30"]
    assert len(kinds[WirelessGateway]) == 3 and len(kinds[Bridge]) == 1
    assert kinds[Bridge][0].ssid_label == "info.comm"
    server = ice_net.host("SERVER")
    assert str(server.current_config.address) == "192.168.10.12"
    assert sorted(server.services) == [21, 25, 80]
    assert server.zone.lookup("info.local") == ip("192.168.10.12")
    wired = [h for h in kinds[Host] if h.name.startswith("PC_V")]
    assert len(wired) == 69
    for vid in (10, 20, 30):
        block = sorted(h.current_config.address.value & 0xFF for h in wired if h.name.startswith(f"PC_V{vid}_"))
        assert block == list(range(21, 44))
    assert set(ice_doc.user_roster.values()) == set(GROUPS)
