"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines appear in the
terminal output even though pytest captures stdout).
"""

import subprocess
import sys
import time

import pytest
from hypothesis import settings

import test_devices
import test_protocol
from conftest import fixture_path
from icenet.addressing import parse_ipv4
from icenet.cli import main as cli_main
from icenet.devices import Bridge, Host, Router, Switch, WirelessGateway
from icenet.protocol import EthernetFrame, IcmpKind, IcmpMessage, Ipv4Packet, TcpKind, TcpSegment, parse_trace_line
from icenet.scenario import (
    build_network,
    bundled_ice_scenario,
    bundled_ice_text,
    load_scenario,
    parse_scenario,
    validate_scenario,
)
from icenet.verify import check_vlan_isolation, compute_reachability, dhcp_pool_report, oracle_reachability

ip = parse_ipv4
SERVER_IP = ip("192.168.10.12")


@pytest.fixture
def verdict(capsys):
    def emit(tag: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {tag}: {detail}")
        assert ok, detail
    return emit


def test_ac01_bundled_topology(verdict):
    t0 = time.perf_counter()
    doc = bundled_ice_scenario()
    report = validate_scenario(doc)
    net = build_network(doc, report=report)
    elapsed = time.perf_counter() - t0
    devs = list(net.devices.values())
    switches = [d for d in devs if isinstance(d, Switch)]
    routers = [d for d in devs if isinstance(d, Router)]
    hosts = [d for d in devs if isinstance(d, Host)]
    wired = [h for h in hosts if not h.is_server and net.link_at(h.name, "eth0") is not None]
    server = [h for h in hosts if h.is_server]
    vids = sorted(v for r in routers for (_, v) in r.subinterfaces)
    ok = (len(report.errors) == 0 and len(switches) == 3 and all(s.port_count == 24 for s in switches)
          and len(routers) == 1 and vids == [10, 20, 30] and len(wired) == 69
          and len(server) == 1 and server[0].current_config.address == SERVER_IP
          and sum(isinstance(d, WirelessGateway) for d in devs) == 3
          and sum(isinstance(d, Bridge) for d in devs) == 1 and elapsed < 1.0)
    verdict("AC1 bundled scenario", ok,
            f"errors={len(report.errors)} switches={len(switches)} subif_vlans={vids} wired_hosts={len(wired)} "
            f"server={server[0].current_config.address} time={elapsed:.3f}s (<1s)")


def test_ac02_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    cases = [("ice", bundled_ice_scenario())]
    for name in ("single_switch", "two_vlans_no_router", "two_vlans_router", "nat_gateway", "bridge"):
        cases.append((name, load_scenario(fixture_path(f"{name}.scenario"))))
    mismatches = {}
    for name, doc in cases:
        diff = compute_reachability(build_network(doc)).diff(oracle_reachability(doc))
        mismatches[name] = len(diff)
    elapsed = time.perf_counter() - t0
    ok = all(v == 0 for v in mismatches.values()) and elapsed < 30
    verdict("AC2 oracle equivalence", ok, f"mismatches={mismatches} time={elapsed:.1f}s (<30s)")


def test_ac03_vlan_isolation(verdict):
    net = build_network(bundled_ice_scenario())
    pcs = [h.name for h in net.hosts if h.name.startswith("PC_V")]
    report = check_vlan_isolation(net, hosts=pcs)
    ok = (report.pairs == 23 * 23 * 6 and not report.reachable_when_down
          and not report.unreachable_when_up and not report.wrong_ttl)
    verdict("AC3 vlan isolation", ok,
            f"pairs={report.pairs} reachable_down={len(report.reachable_when_down)} "
            f"unreachable_up={len(report.unreachable_when_up)} ttl_not_63={len(report.wrong_ttl)}")


def corridor_doc(clients: int):
    extra = []
    for k in range(5, clients + 1):
        extra.append(f"host CORR_{k} mac auto dhcp")
        extra.append(f"assoc CORR_{k} info.local via WGW1")
    return parse_scenario(bundled_ice_text() + "\n".join(extra) + "\n")


def test_ac04_dhcp_pool(verdict):
    net = build_network(corridor_doc(51))
    pool = net.devices["WGW1"].dhcp
    balanced = [pool.pool_size == 50 and len(pool.leases) + pool.free_count == 50]
    leases = []
    for k in range(1, 51):
        leases.append(net.inject_dhcp_boot(f"CORR_{k}").address)
        balanced.append(len(pool.leases) + pool.free_count == 50)
    expected = [ip(f"192.168.1.{100 + k}") for k in range(50)]
    last = net.inject_dhcp_boot("CORR_51")
    balanced.append(len(pool.leases) + pool.free_count == 50)
    (report,) = [p for p in dhcp_pool_report(net) if p.server == "WGW1"]
    ok = (leases == expected and not last.bound and report.exhaustion_events == 1
          and net.counters["dhcp-pool-exhausted"] == 1 and all(balanced))
    verdict("AC4 dhcp pool", ok,
            f"leases={leases[0]}..{leases[-1]} n={len(set(leases))} 51st_bound={last.bound} "
            f"exhaustion_events={report.exhaustion_events} leases+free==50 always={all(balanced)}")


def test_ac05_dns(verdict):
    net = build_network(bundled_ice_scenario())
    net.boot_dhcp_hosts()
    got = {}
    for host in ("PC_V10_1", "CORR_1", "LAB_1"):
        for name in ("info.local", "mail.info.local"):
            got[(host, name)] = net.inject_dns_query(host, name).address
    miss = net.inject_dns_query("PC_V10_1", "unknown.info.local")
    ok = all(a == SERVER_IP for a in got.values()) and miss.status == "name-error"
    verdict("AC5 dns", ok, f"answers={sorted({str(a) for a in got.values()})} over {len(got)} queries "
            f"unknown={miss.status}")


def test_ac06_bridge(verdict):
    net = build_network(bundled_ice_scenario(), trace=True)
    net.boot_dhcp_hosts()
    br = net.devices["BR1"]
    crossings = []
    original = br.forward

    def spy(endpoint, frame):
        side, out = original(endpoint, frame)
        crossings.append((frame, out))
        return side, out

    br.forward = spy
    mark = len(net.trace)
    res = net.inject_ping("LAB_1", "SERVER")
    lab_addr = net.host("LAB_1").current_config.address
    identical = bool(crossings) and all(a is b or a == b for a, b in crossings)
    # trace lines on both sides of the bridge differ only in port and direction
    records = [parse_trace_line(line) for line in net.trace[mark:]]
    rx = [r for r in records if r.device == "BR1" and r.direction == "RX"]
    tx = [r for r in records if r.device == "BR1" and r.direction == "TX"]
    same_fields = len(rx) == len(tx) and all(
        (a.proto, a.subkind, a.src, a.dst, a.smac, a.dmac, a.vlan, a.ttl, a.extras)
        == (b.proto, b.subkind, b.src, b.dst, b.smac, b.dmac, b.vlan, b.ttl, b.extras)
        for a, b in zip(rx, tx))
    ok = (res.success and res.probes[0].reply_ttl == 64 and lab_addr.value >> 8 == ip("192.168.10.0").value >> 8
          and identical and same_fields)
    verdict("AC6 bridge", ok, f"LAB_1={lab_addr} reply_ttl={res.probes[0].reply_ttl} "
            f"crossings={len(crossings)} bit_identical={identical and same_fields}")


def test_ac07_nat(verdict):
    net = build_network(bundled_ice_scenario(), trace=True)
    net.boot_dhcp_hosts()
    mark = len(net.trace)
    status = net.inject_tcp_probe("CORR_1", "info.local", 80)
    seen = [parse_trace_line(line) for line in net.trace[mark:]]
    syn = [r for r in seen if r.device == "SERVER" and r.direction == "RX" and r.subkind == "syn"]
    wan = net.devices["WGW1"].wan
    wgw = net.devices["WGW1"]
    client = net.host("CORR_1").current_config.address
    drops_before = wgw.nat_drops
    mark = len(net.trace)
    # unsolicited packets: one to an unmapped wan port, one aimed straight at the client address
    for dst, port in ((wan.address, 31337), (client, 80)):
        pkt = Ipv4Packet(SERVER_IP, dst, TcpSegment(TcpKind.SYN, 40000, port))
        net.inject_frame("WGW1", "wan", EthernetFrame(net.host("SERVER").mac, wan.mac, pkt))
    net.inject_frame("WGW1", "wan", EthernetFrame(
        net.host("SERVER").mac, wan.mac,
        Ipv4Packet(SERVER_IP, wan.address, IcmpMessage(IcmpKind.ECHO_REPLY, 4242, 1))))
    net.run_until_idle()
    reached = [line for line in net.trace[mark:] if " CORR_1:" in line]
    dropped = wgw.nat_drops - drops_before
    ok = (status == "connected" and syn and all(r.src == wan.address for r in syn)
          and dropped == 3 and not reached)
    verdict("AC7 nat", ok, f"probe={status} server_saw_src={sorted({str(r.src) for r in syn})} "
            f"unsolicited_dropped={dropped}/3 delivered_to_client={len(reached)}")


def test_ac08_services(verdict):
    net = build_network(bundled_ice_scenario())
    got = {p: net.inject_tcp_probe("PC_V20_4", "info.local", p) for p in (80, 21, 25, 8080)}
    ok = got == {80: "connected", 21: "connected", 25: "connected", 8080: "refused"}
    verdict("AC8 services", ok, " ".join(f"{p}={s}" for p, s in got.items()))


def test_ac09_determinism(verdict, tmp_path):
    paths = []
    for seed in ("1", "2"):
        path = tmp_path / f"trace{seed}.txt"
        proc = subprocess.run([sys.executable, "-m", "icenet", "verify", "@ice", "@ice", "--trace", str(path)],
                              capture_output=True, env={"PYTHONHASHSEED": seed, "PATH": ""})
        assert proc.returncode == 0, proc.stderr
        paths.append(path)
    assert cli_main(["verify", "@ice", "@ice", "--trace", str(tmp_path / "inproc.txt")]) == 0
    blobs = [p.read_bytes() for p in paths] + [(tmp_path / "inproc.txt").read_bytes()]
    ok = blobs[0] == blobs[1] == blobs[2] and len(blobs[0]) > 0
    verdict("AC9 determinism", ok, f"trace_bytes={len(blobs[0])} identical_runs=3 (two hash seeds)")


PROPERTIES = [
    ("tag/untag inverse", test_protocol.test_untag_inverts_tag),
    ("mac-learning single egress", test_devices.test_mac_learning_single_egress),
    ("lease injectivity", test_devices.test_lease_injectivity),
    ("nat inversion", test_devices.test_nat_outbound_inbound_inversion),
    ("trace round trip", test_protocol.test_trace_line_round_trip),
]


def test_ac10_property_suites(verdict):
    counts = {}
    for label, prop in PROPERTIES:
        inner = prop.hypothesis.inner_test
        calls = [0]

        def counting(*a, _inner=inner, _calls=calls, **kw):
            _calls[0] += 1
            return _inner(*a, **kw)

        prop.hypothesis.inner_test = counting
        try:
            settings(max_examples=1000, deadline=None)(prop)()
        finally:
            prop.hypothesis.inner_test = inner
        counts[label] = calls[0]
    ok = all(n >= 1000 for n in counts.values())
    verdict("AC10 property suites", ok, ", ".join(f"{k}={v}" for k, v in counts.items()) + " cases, 0 failures")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
