from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from icenet.addressing import BROADCAST_MAC, IpInterfaceConfig, Ipv4Address, MacAddress, parse_ipv4
from icenet.devices import (
    NAT_PORT_BASE,
    Bridge,
    DhcpServer,
    DnsZone,
    Router,
    Switch,
    SwitchPortConfig,
    WirelessGateway,
)
from icenet.errors import DeviceError
from icenet.protocol import (
    ArpKind,
    ArpMessage,
    DhcpKind,
    DhcpMessage,
    DnsKind,
    DnsMessage,
    EthernetFrame,
    IcmpKind,
    IcmpMessage,
    IpProto,
    Ipv4Packet,
    TcpKind,
    TcpSegment,
    UdpDatagram,
)

ip = parse_ipv4


def echo(src, dst, ident=1, seq=1, ttl=64):
    return Ipv4Packet(ip(src), ip(dst), IcmpMessage(IcmpKind.ECHO_REQUEST, ident, seq), ttl)


def two_vlan_switch():
    sw = Switch("SW", 6)
    for i in (1, 2, 3):
        sw.configure(SwitchPortConfig.access(i, 10))
    sw.configure(SwitchPortConfig.access(4, 20))
    sw.configure(SwitchPortConfig.trunk(6, [10, 20]))
    return sw


# -- switch -------------------------------------------------------------------

station = st.integers(1, 6)  # small MAC population so learning actually happens


@given(st.lists(st.tuples(station, st.integers(0, 6), st.integers(1, 6), st.sampled_from([None, 10, 20])),
                min_size=1, max_size=40))
def test_mac_learning_single_egress(events):
    sw = two_vlan_switch()
    for src, dst, port, tag in events:
        cfg = sw.ports[port]
        if cfg.mode == "trunk" and tag is None:
            tag = 10
        if cfg.mode == "access":
            tag = None
        dmac = BROADCAST_MAC if dst == 0 else MacAddress(dst)
        frame = EthernetFrame(MacAddress(src), dmac, echo("10.0.0.1", "10.0.0.2"), tag)
        vlan = cfg.access_vlan if cfg.mode == "access" else tag
        known = None if dst == 0 else sw.mac_table.get((vlan, dmac))
        if dst == src:
            known = port  # source is learned before the lookup
        out = sw.ingress(port, frame)
        egress = [p for p, _ in out]
        assert port not in egress
        assert all(sw.ports[p].carries(vlan) for p in egress)
        if known is not None:
            assert egress == ([] if known == port else [known])
        for p, f in out:
            assert f.vlan_tag == (vlan if sw.ports[p].mode == "trunk" else None)
        assert sw.mac_table[(vlan, MacAddress(src))] == port


def test_switch_drops_untagged_on_trunk_and_tagged_on_access():
    sw = two_vlan_switch()
    f = EthernetFrame(MacAddress(1), BROADCAST_MAC, echo("10.0.0.1", "10.0.0.2"))
    assert sw.ingress(6, f) == []
    assert sw.ingress(1, replace(f, vlan_tag=10)) == []
    assert sw.violations == 2
    # broadcast in vlan 10 reaches access ports 2,3 and the trunk, tagged
    out = sw.ingress(1, f)
    assert [p for p, _ in out] == [2, 3, 6]
    assert out[-1][1].vlan_tag == 10


def test_bridge_forwards_identical_frame():
    br = Bridge("BR1", "info.comm")
    f = EthernetFrame(MacAddress(1), MacAddress(2), echo("10.0.0.1", "10.0.0.2"), 30)
    side, out = br.forward("a", f)
    assert side == "b" and out is f
    assert br.forward("b", f)[0] == "a"
    with pytest.raises(DeviceError):
        br.forward("c", f)


# -- dhcp ---------------------------------------------------------------------


def corridor_pool(end="192.168.1.149"):
    return DhcpServer(ip("192.168.1.100"), ip(end), 24, ip("192.168.1.1"), ip("192.168.10.12"),
                      server_id=ip("192.168.1.1"))


def dora(server, mac, xid=1):
    offer = server.handle(DhcpMessage(DhcpKind.DISCOVER, mac, xid))
    if offer is None:
        return None
    ack = server.handle(DhcpMessage(DhcpKind.REQUEST, mac, xid, offer.address, server_id=offer.server_id))
    return ack


def test_lowest_free_order_and_exhaustion():
    s = corridor_pool()
    got = [dora(s, MacAddress(i)).address for i in range(1, 51)]
    assert got == [Ipv4Address(ip("192.168.1.100").value + k) for k in range(50)]
    assert s.free_count == 0
    assert dora(s, MacAddress(99), xid=7) is None
    assert dora(s, MacAddress(99), xid=7) is None
    assert s.exhaustion_events == [(MacAddress(99), 7)]
    # a returning client keeps its lease
    assert dora(s, MacAddress(3)).address == ip("192.168.1.102")


def test_request_for_unoffered_address_naks():
    s = corridor_pool()
    nak = s.handle(DhcpMessage(DhcpKind.REQUEST, MacAddress(1), 1, ip("192.168.1.120")))
    assert nak.kind is DhcpKind.NAK
    assert s.leases == {}


@given(st.lists(st.tuples(st.integers(1, 12), st.booleans(), st.integers(0, 3)), max_size=60))
def test_lease_injectivity(steps):
    s = corridor_pool(end="192.168.1.107")
    offers = {}
    for mac_n, is_request, xid in steps:
        mac = MacAddress(mac_n)
        if is_request:
            addr = offers.get(mac, ip("192.168.1.100"))
            s.handle(DhcpMessage(DhcpKind.REQUEST, mac, xid, addr, server_id=ip("192.168.1.1")))
        else:
            reply = s.handle(DhcpMessage(DhcpKind.DISCOVER, mac, xid))
            if reply is not None:
                offers[mac] = reply.address
        leased = list(s.leases.values())
        assert len(leased) == len(set(leased))
        assert all(s.pool_start <= a <= s.pool_end for a in leased)
        assert len(s.leases) + s.free_count == s.pool_size == 8


# -- dns ----------------------------------------------------------------------


def test_dns_zone():
    z = DnsZone({"info.local": ip("192.168.10.12"), "Mail.Info.Local.": ip("192.168.10.12")})
    assert z.handle(DnsMessage(DnsKind.QUERY, "mail.info.local", 5)).address == ip("192.168.10.12")
    miss = z.handle(DnsMessage(DnsKind.QUERY, "local.info", 6))
    assert miss.kind is DnsKind.NAME_ERROR and miss.transaction_id == 6


# -- router -------------------------------------------------------------------


def stick_router():
    r = Router("R1")
    r.add_physical("f0/0", MacAddress(0x0200000000AA))
    for v in (10, 20, 30):
        r.add_subinterface("f0/0", v, ip(f"192.168.{v}.1"), 24)
    return r


def test_router_answers_arp_on_its_subinterface():
    r = stick_router()
    req = ArpMessage(ArpKind.REQUEST, MacAddress(5), ip("192.168.20.21"), MacAddress(0), ip("192.168.20.1"))
    out = r.handle(("f0/0", 20), EthernetFrame(MacAddress(5), BROADCAST_MAC, req, 20))
    assert len(out) == 1
    key, reply = out[0]
    assert key == ("f0/0", 20)
    assert reply.payload.kind is ArpKind.REPLY and reply.dst == MacAddress(5)


def test_router_forwards_with_one_ttl_decrement():
    r = stick_router()
    mac = r.macs["f0/0"]
    r.subinterfaces[("f0/0", 10)].stack.arp_cache[ip("192.168.10.12")] = MacAddress(9)
    f = EthernetFrame(MacAddress(5), mac, echo("192.168.20.21", "192.168.10.12"), 20)
    ((key, out),) = r.handle(("f0/0", 20), f)
    assert key == ("f0/0", 10)
    assert out.payload.ttl == 63 and out.dst == MacAddress(9) and out.src == mac


def test_router_reports_ttl_expiry_and_no_route():
    r = stick_router()
    mac = r.macs["f0/0"]
    r.subinterfaces[("f0/0", 20)].stack.arp_cache[ip("192.168.20.21")] = MacAddress(5)
    expired = EthernetFrame(MacAddress(5), mac, echo("192.168.20.21", "192.168.10.12", ttl=1), 20)
    ((_, err),) = r.handle(("f0/0", 20), expired)
    assert err.payload.payload.kind is IcmpKind.TTL_EXCEEDED
    nowhere = EthernetFrame(MacAddress(5), mac, echo("192.168.20.21", "192.168.1.100"), 20)
    ((_, err),) = r.handle(("f0/0", 20), nowhere)
    assert err.payload.payload.kind is IcmpKind.DEST_UNREACHABLE
    assert err.payload.payload.quoted.dst == ip("192.168.1.100")


def test_disabled_router_is_silent():
    r = stick_router()
    r.set_enabled(False)
    f = EthernetFrame(MacAddress(5), r.macs["f0/0"], echo("192.168.20.21", "192.168.10.12"), 20)
    assert r.handle(("f0/0", 20), f) == []
    assert r.routing_table == []


def test_longest_prefix_wins():
    r = Router("R")
    r.add_physical("g0", MacAddress(1))
    r.add_subinterface("g0", 10, ip("10.0.0.1"), 8)
    r.add_subinterface("g0", 20, ip("10.1.0.1"), 16)
    assert r.lookup(ip("10.1.2.3")) == ("g0", 20)
    assert r.lookup(ip("10.2.2.3")) == ("g0", 10)
    assert r.lookup(ip("11.0.0.1")) is None
    with pytest.raises(DeviceError):
        r.add_subinterface("g0", 20, ip("10.2.0.1"), 16)


# -- nat ----------------------------------------------------------------------


def corridor_gateway():
    return WirelessGateway("WGW1", "gateway", "info.local", MacAddress(0x020000000001),
                           IpInterfaceConfig(ip("192.168.1.1"), 24), MacAddress(0x020000000002),
                           IpInterfaceConfig(ip("192.168.10.2"), 24, ip("192.168.10.1")), True)


inside = st.integers(100, 149).map(lambda k: ip(f"192.168.1.{k}"))
outside = st.sampled_from(["192.168.10.12", "192.168.20.21", "192.168.30.40"]).map(ip)
flow = st.tuples(st.sampled_from(["icmp", "udp", "tcp"]), inside, outside,
                 st.integers(1, 65535), st.integers(1, 65535))


def outbound_packet(kind, src, dst, a, b):
    if kind == "icmp":
        return Ipv4Packet(src, dst, IcmpMessage(IcmpKind.ECHO_REQUEST, a, b))
    if kind == "udp":
        return Ipv4Packet(src, dst, UdpDatagram(a, b, DnsMessage(DnsKind.QUERY, "info.local", 1)))
    return Ipv4Packet(src, dst, TcpSegment(TcpKind.SYN, a, b))


def reply_to(p):
    inner = p.payload
    if isinstance(inner, IcmpMessage):
        inner = IcmpMessage(IcmpKind.ECHO_REPLY, inner.ident, inner.sequence)
    elif isinstance(inner, UdpDatagram):
        inner = UdpDatagram(inner.dst_port, inner.src_port, DnsMessage(DnsKind.ANSWER, "info.local", 1))
    else:
        inner = TcpSegment(TcpKind.SYN_ACK, inner.dst_port, inner.src_port)
    return Ipv4Packet(p.dst, p.src, inner)


@given(st.lists(flow, min_size=1, max_size=30))
def test_nat_outbound_inbound_inversion(flows):
    gw = corridor_gateway()
    seen = {}
    for f in flows:
        original = outbound_packet(*f)
        out = gw.nat_outbound(original)
        assert out.src == ip("192.168.10.2")
        ident = gw._flow_id(out, outbound=True)
        assert ident >= NAT_PORT_BASE
        key = (original.protocol, original.src, gw._flow_id(original, outbound=True))
        # one translation per inside flow, distinct across flows of a protocol
        assert seen.setdefault(key, ident) == ident
        back = gw.nat_inbound(reply_to(out))
        assert back == reply_to(original)
    by_proto = {}
    for (proto, _, _), ident in seen.items():
        by_proto.setdefault(proto, []).append(ident)
    for idents in by_proto.values():
        assert len(idents) == len(set(idents))


def test_unsolicited_inbound_dropped():
    gw = corridor_gateway()
    probe = Ipv4Packet(ip("192.168.10.12"), ip("192.168.10.2"), TcpSegment(TcpKind.SYN, 40000, 80))
    assert gw.nat_inbound(probe) is None
    assert gw.nat_inbound(echo("192.168.10.12", "192.168.10.2")) is None
    assert gw.nat_drops == 2


def test_nat_translates_icmp_errors_back():
    gw = corridor_gateway()
    original = echo("192.168.1.100", "192.168.40.1", ident=7)
    out = gw.nat_outbound(original)
    err = Ipv4Packet(ip("192.168.10.1"), out.src,
                     IcmpMessage(IcmpKind.DEST_UNREACHABLE, 0, 0, quoted=replace(out, ttl=63)))
    back = gw.nat_inbound(err)
    assert back.dst == ip("192.168.1.100")
    assert back.payload.quoted.src == ip("192.168.1.100")
    assert back.payload.quoted.payload.ident == 7
    assert back.payload.quoted.protocol is IpProto.ICMP


def test_wgw_mode_invariants():
    with pytest.raises(DeviceError):
        WirelessGateway("X", "gateway", "s", MacAddress(1), IpInterfaceConfig(ip("10.0.0.1"), 24))
    with pytest.raises(DeviceError):
        WirelessGateway("X", "ap", "s", MacAddress(1), IpInterfaceConfig(ip("10.0.0.1"), 24), nat_enabled=True)
    ap = WirelessGateway("X", "ap", "s", MacAddress(1), IpInterfaceConfig(ip("10.0.0.1"), 24))
    with pytest.raises(DeviceError):
        ap.nat_outbound(echo("10.0.0.5", "10.0.1.1"))
