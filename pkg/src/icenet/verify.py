"""Reachability matrices, VLAN isolation, DHCP pool accounting and expectation runs.

``oracle_reachability`` never touches the packet engine. It reasons over the
scenario document alone: a union-find over layer-2 vertices gives broadcast
domains, leases are predicted from pool order, and a small forwarding walk
follows next hops through router subinterfaces and NAT gateways.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .addressing import Ipv4Address, same_subnet
from .devices import Router, WirelessGateway
from .engine import Network
from .protocol import DEFAULT_TTL
from .scenario import (
    BridgeDecl,
    Expectation,
    HostDecl,
    RouterDecl,
    ScenarioDocument,
    SwitchDecl,
    WgwDecl,
    _UnionFind,
    find_wgw_for_assoc,
)

REACHABLE = "reachable"
UNREACHABLE = "unreachable"
UNTESTED = "untested"
_CELL_CHAR = {REACHABLE: "#", UNREACHABLE: ".", UNTESTED: "?"}


@dataclass
class ReachabilityMatrix:
    hosts: list
    cells: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.hosts)
        if not self.cells:
            self.cells = [[UNTESTED] * n for _ in range(n)]
        self._index = {h: i for i, h in enumerate(self.hosts)}

    def get(self, a: str, b: str) -> str:
        return self.cells[self._index[a]][self._index[b]]

    def set(self, a: str, b: str, value: str) -> None:
        if value not in _CELL_CHAR:
            raise ValueError(f"bad cell value {value!r}")
        self.cells[self._index[a]][self._index[b]] = value

    def __eq__(self, other):
        if not isinstance(other, ReachabilityMatrix):
            return NotImplemented
        return self.hosts == other.hosts and self.cells == other.cells

    def count(self, value: str) -> int:
        return sum(row.count(value) for row in self.cells)

    def diff(self, other: "ReachabilityMatrix") -> list[tuple[str, str, str, str]]:
        if self.hosts != other.hosts:
            raise ValueError("matrices cover different hosts")
        out = []
        for i, a in enumerate(self.hosts):
            for j, b in enumerate(self.hosts):
                if self.cells[i][j] != other.cells[i][j]:
                    out.append((a, b, self.cells[i][j], other.cells[i][j]))
        return out

    def format_table(self) -> str:
        """One row per source host; ``#`` reachable, ``.`` unreachable, ``?`` untested."""
        width = max((len(h) for h in self.hosts), default=0)
        lines = []
        for i, h in enumerate(self.hosts):
            lines.append(f"{h:<{width}} {''.join(_CELL_CHAR[c] for c in self.cells[i])}")
        return "\n".join(lines)

    def as_lines(self) -> list[str]:
        return [
            f"hosts={len(self.hosts)}",
            f"reachable={self.count(REACHABLE)}",
            f"unreachable={self.count(UNREACHABLE)}",
            f"untested={self.count(UNTESTED)}",
        ]


# -- engine-backed matrix ----------------------------------------------------------


def boot_unbound(net: Network) -> None:
    for h in net.hosts:
        if h.config_mode == "dhcp" and not h.bound:
            net.inject_dhcp_boot(h.name)


def compute_reachability(net: Network, hosts: Optional[list[str]] = None) -> ReachabilityMatrix:
    """One echo per ordered pair after every DHCP host has been booted."""
    boot_unbound(net)
    names = hosts if hosts is not None else [h.name for h in net.hosts]
    m = ReachabilityMatrix(list(names))
    for a in names:
        src = net.host(a)
        for b in names:
            if a == b:
                m.set(a, b, REACHABLE if src.bound else UNREACHABLE)
                continue
            ok = src.bound and net.host(b).bound and net.inject_ping(a, b).success
            m.set(a, b, REACHABLE if ok else UNREACHABLE)
    return m


# -- graph oracle -------------------------------------------------------------------


@dataclass(frozen=True)
class _Iface:
    owner: str
    kind: str  # host | subif | wgw-lan | wgw-wan | ap-lan
    address: Ipv4Address
    prefix: int
    comp: object
    gateway: Optional[Ipv4Address] = None


class _Oracle:
    def __init__(self, doc: ScenarioDocument, routers_enabled: bool = True):
        self.doc = doc
        self.routers_enabled = routers_enabled
        self.by_name = {}
        for d in doc.devices:
            self.by_name.setdefault(d.name, d)
        self.uf = _UnionFind()
        self._l2()
        self.leases = self._predict_leases()
        self.ifaces = self._interfaces()
        self.at = {}
        for i in self.ifaces:
            self.at.setdefault((i.comp, i.address), i)

    # layer 2

    def _channels(self, dev: str, port: str) -> Optional[dict]:
        """Map channel ('u' or a vlan id) to vertex for one link endpoint; None = any channel."""
        d = self.by_name.get(dev)
        if isinstance(d, SwitchDecl):
            cfg = None
            for p in self.doc.ports:
                if p.switch == dev and str(p.index) == port:
                    cfg = p
            if cfg is None or cfg.mode == "access":
                return {"u": (dev, cfg.vlans[0] if cfg else 1)}
            return {v: (dev, v) for v in cfg.vlans}
        if isinstance(d, BridgeDecl):
            return None
        if isinstance(d, WgwDecl):
            side = "wan" if d.mode == "gateway" and port == "wan" else "lan"
            return {"u": (dev, side)}
        if isinstance(d, RouterDecl):
            return {s.vid: (dev, s.phys, s.vid) for s in self.doc.subifs
                    if s.router == dev and s.phys == port}
        if isinstance(d, HostDecl):
            return {"u": (dev, "")}
        return {}

    def _l2(self) -> None:
        every = {"u"} | {v for p in self.doc.ports for v in p.vlans} | {s.vid for s in self.doc.subifs}
        for link in self.doc.links:
            (ad, ap), (bd, bp) = link.ends
            a, b = self._channels(ad, ap), self._channels(bd, bp)
            if a is None and b is None:
                for c in every:
                    self.uf.union((ad, c), (bd, c))
                continue
            if a is None:
                a = {c: (ad, c) for c in b}
            if b is None:
                b = {c: (bd, c) for c in a}
            for c, va in a.items():
                if c in b:
                    self.uf.union(va, b[c])
        for assoc in self.doc.assocs:
            wgw = find_wgw_for_assoc(self.doc, assoc)
            if wgw is not None:
                self.uf.union((assoc.host, ""), (wgw.name, "lan"))

    def comp(self, vertex):
        return self.uf.find(vertex)

    # addressing

    def _predict_leases(self) -> dict:
        servers = [d for d in self.doc.of_type(WgwDecl) if d.has_pool]
        used: dict[str, set] = {s.name: set() for s in servers}
        leases = {}
        for h in self.doc.hosts:
            if not h.dhcp:
                continue
            here = self.comp((h.name, ""))
            for s in servers:
                if self.comp((s.name, "lan")) != here:
                    continue
                for v in range(s.pool_start.value, s.pool_end.value + 1):
                    if v not in used[s.name]:
                        used[s.name].add(v)
                        leases[h.name] = (Ipv4Address(v), s.lan_prefix, s.lease_gateway)
                        break
                break  # first server in the broadcast domain answers
        return leases

    def host_config(self, h: HostDecl):
        if not h.dhcp:
            return h.address, h.prefix_length, h.gateway
        return self.leases.get(h.name)

    def _interfaces(self) -> list[_Iface]:
        out = []
        for d in self.doc.devices:
            if isinstance(d, HostDecl):
                cfg = self.host_config(d)
                if cfg is not None:
                    out.append(_Iface(d.name, "host", cfg[0], cfg[1], self.comp((d.name, "")), cfg[2]))
            elif isinstance(d, WgwDecl):
                kind = "wgw-lan" if d.mode == "gateway" else "ap-lan"
                out.append(_Iface(d.name, kind, d.lan_address, d.lan_prefix, self.comp((d.name, "lan"))))
                if d.mode == "gateway" and d.wan_address is not None:
                    out.append(_Iface(d.name, "wgw-wan", d.wan_address, d.wan_prefix,
                                      self.comp((d.name, "wan")), d.wan_gateway))
        if self.routers_enabled:
            for s in self.doc.subifs:
                out.append(_Iface(s.router, "subif", s.address, s.prefix_length,
                                  self.comp((s.router, s.phys, s.vid))))
        return out

    def _iface_of(self, owner: str, kind: str) -> Optional[_Iface]:
        for i in self.ifaces:
            if i.owner == owner and i.kind == kind:
                return i
        return None

    # layer 3 walk

    def walk(self, sender: _Iface, src: Ipv4Address, dst: Ipv4Address,
             nat: Optional[dict] = None):
        """Follow a packet hop by hop. Returns (receiver, src as seen, ttl, nat records) or None."""
        ttl = DEFAULT_TTL
        nat = dict(nat or {})
        replying = bool(nat)
        for _ in range(4 * DEFAULT_TTL):
            if same_subnet(dst, sender.address, sender.prefix):
                hop = dst
            elif sender.gateway is not None:
                hop = sender.gateway
            else:
                return None
            recv = self.at.get((sender.comp, hop))
            if recv is None:
                return None
            if recv.address == dst:
                if recv.kind == "wgw-wan" and replying and recv.owner in nat:
                    # reply to a translated flow
                    if ttl <= 1:
                        return None
                    ttl -= 1
                    dst = nat.pop(recv.owner)
                    sender = self._iface_of(recv.owner, "wgw-lan")
                    continue
                return recv, src, ttl, nat
            if recv.kind == "subif":
                if ttl <= 1:
                    return None
                ttl -= 1
                routes = [i for i in self.ifaces if i.kind == "subif" and i.owner == recv.owner
                          and same_subnet(dst, i.address, i.prefix)]
                if not routes:
                    return None
                sender = max(routes, key=lambda i: i.prefix)
                continue
            if recv.kind == "wgw-lan" and not same_subnet(dst, recv.address, recv.prefix):
                wan = self._iface_of(recv.owner, "wgw-wan")
                if wan is None or ttl <= 1:
                    return None
                ttl -= 1
                nat[recv.owner] = src
                src = wan.address
                sender = wan
                continue
            return None
        return None

    def reachable(self, a: HostDecl, b: HostDecl) -> bool:
        src = self._iface_of(a.name, "host")
        dst = self._iface_of(b.name, "host")
        if src is None or dst is None:
            return False
        there = self.walk(src, src.address, dst.address)
        if there is None or there[0] != dst:
            return False
        _, seen_src, _, nat = there
        back = self.walk(dst, dst.address, seen_src, nat)
        return back is not None and back[0] == src


def oracle_reachability(doc: ScenarioDocument, hosts: Optional[list[str]] = None,
                        routers_enabled: bool = True) -> ReachabilityMatrix:
    """Reachability predicted from the document alone, without running the engine."""
    o = _Oracle(doc, routers_enabled)
    decls = {h.name: h for h in doc.hosts}
    names = hosts if hosts is not None else [h.name for h in doc.hosts]
    m = ReachabilityMatrix(list(names))
    for a in names:
        bound = o._iface_of(a, "host") is not None
        for b in names:
            if a == b:
                ok = bound
            else:
                ok = bound and o.reachable(decls[a], decls[b])
            m.set(a, b, REACHABLE if ok else UNREACHABLE)
    return m


def predicted_leases(doc: ScenarioDocument) -> dict[str, Ipv4Address]:
    return {h: cfg[0] for h, cfg in _Oracle(doc).leases.items()}


# -- vlan isolation ---------------------------------------------------------------


@dataclass
class IsolationReport:
    pairs: int = 0
    reachable_when_down: list = field(default_factory=list)
    unreachable_when_up: list = field(default_factory=list)
    wrong_ttl: list = field(default_factory=list)  # (a, b, observed request ttl)

    @property
    def ok(self) -> bool:
        return not (self.reachable_when_down or self.unreachable_when_up or self.wrong_ttl)

    @property
    def findings(self) -> list[str]:
        out = [f"isolation-breach {a} -> {b}" for a, b in self.reachable_when_down]
        out += [f"not-routed {a} -> {b}" for a, b in self.unreachable_when_up]
        out += [f"hop-count {a} -> {b} ttl={t}" for a, b, t in self.wrong_ttl]
        return out

    def as_lines(self) -> list[str]:
        return [
            f"pairs={self.pairs}",
            f"reachable_when_down={len(self.reachable_when_down)}",
            f"unreachable_when_up={len(self.unreachable_when_up)}",
            f"wrong_ttl={len(self.wrong_ttl)}",
            f"ok={int(self.ok)}",
        ]


def host_vlans(net: Network) -> dict[str, int]:
    """VLAN of each bound host, judged by which router subinterface subnet holds its address."""
    subifs = [s for d in net.devices.values() if isinstance(d, Router) for s in d.subinterfaces.values()]
    out = {}
    for h in net.hosts:
        cfg = h.current_config
        if cfg is None:
            continue
        for s in subifs:
            if cfg.address in s.subnet:
                out[h.name] = s.vlan
                break
    return out


def check_vlan_isolation(net: Network, hosts: Optional[list[str]] = None) -> IsolationReport:
    """Cross-VLAN pairs must fail with routers down and be routed in one hop with routers up."""
    boot_unbound(net)
    vlans = host_vlans(net)
    names = [h for h in (hosts if hosts is not None else list(vlans)) if h in vlans]
    pairs = [(a, b) for a in names for b in names if vlans[a] != vlans[b]]
    routers = [d for d in net.devices.values() if isinstance(d, Router)]
    before = {r.name: [s.enabled for s in r.subinterfaces.values()] for r in routers}
    report = IsolationReport(pairs=len(pairs))
    try:
        for r in routers:
            r.set_enabled(False)
        for a, b in pairs:
            if net.inject_ping(a, b).success:
                report.reachable_when_down.append((a, b))
        for r in routers:
            r.set_enabled(True)
        for a, b in pairs:
            res = net.inject_ping(a, b)
            if not res.success:
                report.unreachable_when_up.append((a, b))
            elif res.probes[0].request_ttl != DEFAULT_TTL - 1:
                report.wrong_ttl.append((a, b, res.probes[0].request_ttl))
    finally:
        for r in routers:
            for s, state in zip(r.subinterfaces.values(), before[r.name]):
                s.enabled = state
    return report


# -- dhcp pools -------------------------------------------------------------------


@dataclass
class PoolReport:
    server: str
    pool_start: Ipv4Address
    pool_end: Ipv4Address
    size: int
    leases: int
    free: int
    exhaustion_events: int

    def as_lines(self) -> list[str]:
        p = f"pool.{self.server}"
        return [f"{p}.range={self.pool_start}-{self.pool_end}", f"{p}.size={self.size}",
                f"{p}.leases={self.leases}", f"{p}.free={self.free}",
                f"{p}.exhaustion_events={self.exhaustion_events}"]


def dhcp_pool_report(net: Network) -> list[PoolReport]:
    out = []
    for d in net.devices.values():
        if isinstance(d, WirelessGateway) and d.dhcp is not None:
            s = d.dhcp
            out.append(PoolReport(d.name, s.pool_start, s.pool_end, s.pool_size,
                                  len(s.leases), s.free_count, len(s.exhaustion_events)))
    return out


# -- expectations -----------------------------------------------------------------


@dataclass
class Outcome:
    expectation: Expectation
    actual: str

    @property
    def passed(self) -> bool:
        return self.actual == self.expectation.expected


@dataclass
class VerificationReport:
    outcomes: list = field(default_factory=list)

    @property
    def failed(self) -> list[Outcome]:
        return [o for o in self.outcomes if not o.passed]

    @property
    def passed_count(self) -> int:
        return len(self.outcomes) - len(self.failed)

    @property
    def exit_status(self) -> int:
        return 0 if not self.failed else 1

    def format_table(self) -> str:
        rows = []
        for o in self.outcomes:
            verdict = "pass" if o.passed else f"FAIL expected={o.expectation.expected} actual={o.actual}"
            rows.append(f"{str(o.expectation):<48} {verdict}")
        return "\n".join(rows)

    def as_lines(self) -> list[str]:
        return [f"expectations={len(self.outcomes)}", f"passed={self.passed_count}",
                f"failed={len(self.failed)}", f"exit_status={self.exit_status}"]


def _evaluate(net: Network, e: Expectation) -> str:
    hosts = {h.name for h in net.hosts}
    needed = [e.host] + ([e.target] if e.kind == "reach" else [])
    missing = [n for n in needed if n not in hosts]
    if missing:
        return f"no-such-host:{missing[0]}"
    if e.kind == "reach":
        return "yes" if net.inject_ping(e.host, e.target).success else "no"
    host = net.host(e.host)
    if e.kind == "lease":
        cfg = host.current_config
        return "-" if cfg is None else str(cfg.address)
    if not host.bound:
        return "unreachable" if e.kind == "probe" else "resolve-failed"
    if e.kind == "resolve":
        res = net.inject_dns_query(e.host, e.target)
        if res.status == "answer":
            return str(res.address)
        return "NXDOMAIN" if res.status == "name-error" else res.status
    return net.inject_tcp_probe(e.host, e.target, e.port)


def run_expectations(net: Network, expectations: list[Expectation]) -> VerificationReport:
    """Boot DHCP hosts, then check each expectation in file order."""
    boot_unbound(net)
    return VerificationReport([Outcome(e, _evaluate(net, e)) for e in expectations])


__all__ = [
    "REACHABLE", "UNREACHABLE", "UNTESTED", "ReachabilityMatrix", "compute_reachability",
    "oracle_reachability", "predicted_leases", "IsolationReport", "check_vlan_isolation",
    "host_vlans", "PoolReport", "dhcp_pool_report", "Outcome", "VerificationReport",
    "run_expectations",
]
