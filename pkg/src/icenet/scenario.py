"""Scenario language: parsing, formatting, static validation and network build.

One statement per line, whitespace separated, ``#`` starts a comment::

    switch <name> ports <n> [uplinks <m>]
    vlan <switch> <vid> name <label>
    port <switch> <idx> access <vid>
    port <switch> <idx> trunk <vid>[,<vid>]*
    router <name>
    subif <router> <phys>.<vid> dot1q <vid> ip <a.b.c.d>/<p>
    host <name> mac (auto|<mac>) (static <a.b.c.d>/<p> gw <ip> dns <ip> | dhcp)
    server <name> ...                     (same arguments as host)
    wgw <name> mode (gateway|ap) ssid <label> lan <a.b.c.d>/<p>
        [wan <a.b.c.d>/<p> gw <ip>] [nat (on|off)] [pool <start> <end> dns <ip> [gw <ip>]]
    bridge <name> ssid <label>
    link <dev>:<port> <dev>:<port>
    assoc <host> <ssid> [via <wgw>]
    service <host> (http|ftp|mail) <port>
    dnsrecord <host> <fqdn> <ip>
    user <name> group (students|lecturers|employers|administrator)

Expectation files use ``reach``, ``lease``, ``resolve`` and ``probe`` lines
(see :func:`parse_expectations`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Union

from .addressing import (
    IpInterfaceConfig,
    Ipv4Address,
    MacAddress,
    next_auto_mac,
    parse_interface,
    parse_ipv4,
    same_subnet,
)
from .devices import WGW_LAN_PORTS, Bridge, DhcpServer, DnsZone, Host, Router, Switch, SwitchPortConfig, WirelessGateway
from .engine import WIRED_LATENCY_US, WIRELESS_LATENCY_US, Network
from .errors import AddressError, BuildRejected, ScenarioParseError

GROUPS = ("students", "lecturers", "employers", "administrator")
SERVICES = ("http", "ftp", "mail")
HOST_WIRELESS_PORT = "wlan0"
_NAME = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.\-]*")
_PORT = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_./\-]*")


# -- document model -------------------------------------------------------------


@dataclass(frozen=True)
class SwitchDecl:
    name: str
    ports: int
    uplinks: int = 0
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RouterDecl:
    name: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class HostDecl:
    name: str
    mac: Optional[MacAddress]  # None means auto
    address: Optional[Ipv4Address] = None  # None means dhcp
    prefix_length: Optional[int] = None
    gateway: Optional[Ipv4Address] = None
    dns: Optional[Ipv4Address] = None
    server: bool = False
    line: int = field(default=0, compare=False)

    @property
    def dhcp(self) -> bool:
        return self.address is None


@dataclass(frozen=True)
class WgwDecl:
    name: str
    mode: str
    ssid: str
    lan_address: Ipv4Address
    lan_prefix: int
    wan_address: Optional[Ipv4Address] = None
    wan_prefix: Optional[int] = None
    wan_gateway: Optional[Ipv4Address] = None
    nat: Optional[bool] = None
    pool_start: Optional[Ipv4Address] = None
    pool_end: Optional[Ipv4Address] = None
    pool_dns: Optional[Ipv4Address] = None
    pool_gateway: Optional[Ipv4Address] = None
    line: int = field(default=0, compare=False)

    @property
    def nat_enabled(self) -> bool:
        return self.mode == "gateway" if self.nat is None else self.nat

    @property
    def has_pool(self) -> bool:
        return self.pool_start is not None

    @property
    def lease_gateway(self) -> Optional[Ipv4Address]:
        """Default gateway handed out with leases."""
        if self.pool_gateway is not None:
            return self.pool_gateway
        return self.lan_address if self.mode == "gateway" else None


@dataclass(frozen=True)
class BridgeDecl:
    name: str
    ssid: str
    line: int = field(default=0, compare=False)


DeviceDecl = Union[SwitchDecl, RouterDecl, HostDecl, WgwDecl, BridgeDecl]


@dataclass(frozen=True)
class VlanDecl:
    switch: str
    vid: int
    label: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PortDecl:
    switch: str
    index: int
    mode: str
    vlans: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SubifDecl:
    router: str
    phys: str
    vid: int
    address: Ipv4Address
    prefix_length: int
    line: int = field(default=0, compare=False)

    @property
    def label(self) -> str:
        return f"{self.phys}.{self.vid}"


@dataclass(frozen=True)
class LinkDecl:
    a_device: str
    a_port: str
    b_device: str
    b_port: str
    line: int = field(default=0, compare=False)

    @property
    def ends(self) -> tuple[tuple[str, str], tuple[str, str]]:
        return (self.a_device, self.a_port), (self.b_device, self.b_port)


@dataclass(frozen=True)
class AssocDecl:
    host: str
    ssid: str
    via: Optional[str] = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ServiceDecl:
    host: str
    service: str
    port: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class DnsRecordDecl:
    host: str
    fqdn: str
    address: Ipv4Address
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class UserDecl:
    name: str
    group: str
    line: int = field(default=0, compare=False)


@dataclass
class ScenarioDocument:
    devices: list = field(default_factory=list)
    vlans: list = field(default_factory=list)
    ports: list = field(default_factory=list)
    subifs: list = field(default_factory=list)
    links: list = field(default_factory=list)
    assocs: list = field(default_factory=list)
    services: list = field(default_factory=list)
    dnsrecords: list = field(default_factory=list)
    users: list = field(default_factory=list)

    def device(self, name: str) -> Optional[DeviceDecl]:
        for d in self.devices:
            if d.name == name:
                return d
        return None

    def of_type(self, cls) -> list:
        return [d for d in self.devices if isinstance(d, cls)]

    @property
    def hosts(self) -> list[HostDecl]:
        return self.of_type(HostDecl)

    @property
    def user_roster(self) -> dict[str, str]:
        return {u.name: u.group for u in self.users}

    def statements(self) -> list:
        return [*self.devices, *self.vlans, *self.ports, *self.subifs, *self.links,
                *self.assocs, *self.services, *self.dnsrecords, *self.users]


# -- parsing ------------------------------------------------------------------


class _Tokens:
    def __init__(self, tokens: list[str], line: int):
        self.tokens = tokens
        self.pos = 0
        self.line = line

    def fail(self, message: str, token: Optional[str] = None):
        if token is None:
            token = self.tokens[self.pos] if self.pos < len(self.tokens) else "<end of line>"
        raise ScenarioParseError(self.line, token, message)

    def peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, what: str) -> str:
        if self.pos >= len(self.tokens):
            self.fail(f"expected {what}")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def keyword(self, *words: str) -> str:
        tok = self.next(" or ".join(repr(w) for w in words))
        if tok not in words:
            self.fail(f"expected {' or '.join(repr(w) for w in words)}", tok)
        return tok

    def name(self, what: str = "name") -> str:
        tok = self.next(what)
        if not _NAME.fullmatch(tok):
            self.fail(f"invalid {what}", tok)
        return tok

    def integer(self, what: str, lo: int, hi: int) -> int:
        tok = self.next(what)
        if not re.fullmatch(r"0|[1-9][0-9]*", tok) or not lo <= int(tok) <= hi:
            self.fail(f"{what} must be an integer in {lo}..{hi}", tok)
        return int(tok)

    def ip(self, what: str = "address") -> Ipv4Address:
        tok = self.next(what)
        try:
            return parse_ipv4(tok)
        except AddressError as exc:
            self.fail(str(exc), tok)

    def iface(self, what: str = "address/prefix") -> tuple[Ipv4Address, int]:
        tok = self.next(what)
        try:
            return parse_interface(tok)
        except AddressError as exc:
            self.fail(str(exc), tok)

    def end(self) -> None:
        if self.pos < len(self.tokens):
            self.fail("unexpected trailing token")


def _vid(toks: _Tokens, text: Optional[str] = None) -> int:
    if text is None:
        return toks.integer("vlan id", 1, 4094)
    if not re.fullmatch(r"[1-9][0-9]*", text) or not 1 <= int(text) <= 4094:
        toks.fail("vlan id must be in 1..4094", text)
    return int(text)


def _p_switch(t: _Tokens, line):
    name = t.name("switch name")
    t.keyword("ports")
    ports = t.integer("port count", 1, 4096)
    uplinks = 0
    if t.peek() == "uplinks":
        t.next("uplinks")
        uplinks = t.integer("uplink count", 0, 64)
    return SwitchDecl(name, ports, uplinks, line=line)


def _p_vlan(t: _Tokens, line):
    sw = t.name("switch name")
    vid = _vid(t)
    t.keyword("name")
    return VlanDecl(sw, vid, t.name("vlan label"), line=line)


def _p_port(t: _Tokens, line):
    sw = t.name("switch name")
    idx = t.integer("port index", 1, 4096)
    mode = t.keyword("access", "trunk")
    if mode == "access":
        vlans = (_vid(t),)
    else:
        raw = t.next("vlan list")
        vlans = tuple(_vid(t, v) for v in raw.split(","))
        if len(set(vlans)) != len(vlans):
            t.fail("duplicate vlan in trunk list", raw)
    return PortDecl(sw, idx, mode, vlans, line=line)


def _p_router(t: _Tokens, line):
    return RouterDecl(t.name("router name"), line=line)


def _p_subif(t: _Tokens, line):
    router = t.name("router name")
    tok = t.next("subinterface")
    m = re.fullmatch(r"([A-Za-z0-9_/\-]+)\.([0-9]+)", tok)
    if m is None:
        t.fail("subinterface must be <phys>.<vid>", tok)
    phys, number = m.group(1), _vid(t, m.group(2))
    t.keyword("dot1q")
    vid = _vid(t)
    if vid != number:
        t.fail(f"subinterface number {number} differs from dot1q vlan {vid}", str(vid))
    t.keyword("ip")
    addr, prefix = t.iface()
    return SubifDecl(router, phys, vid, addr, prefix, line=line)


def _p_host(t: _Tokens, line, server=False):
    name = t.name("host name")
    t.keyword("mac")
    tok = t.next("mac address or 'auto'")
    if tok == "auto":
        mac = None
    else:
        try:
            mac = MacAddress.parse(tok.lower())
        except AddressError as exc:
            t.fail(str(exc), tok)
    mode = t.keyword("static", "dhcp")
    if mode == "dhcp":
        return HostDecl(name, mac, server=server, line=line)
    addr, prefix = t.iface()
    t.keyword("gw")
    gw = t.ip("gateway")
    t.keyword("dns")
    dns = t.ip("dns server")
    return HostDecl(name, mac, addr, prefix, gw, dns, server=server, line=line)


def _p_wgw(t: _Tokens, line):
    name = t.name("wireless gateway name")
    t.keyword("mode")
    mode = t.keyword("gateway", "ap")
    t.keyword("ssid")
    ssid = t.name("ssid")
    t.keyword("lan")
    lan, lan_p = t.iface()
    fields: dict = {}
    while t.peek() is not None:
        word = t.keyword("wan", "nat", "pool")
        if word in fields:
            t.fail(f"duplicate {word} clause", word)
        if word == "wan":
            addr, prefix = t.iface()
            t.keyword("gw")
            fields["wan"] = (addr, prefix, t.ip("gateway"))
        elif word == "nat":
            fields["nat"] = t.keyword("on", "off") == "on"
        else:
            start, end = t.ip("pool start"), t.ip("pool end")
            t.keyword("dns")
            dns = t.ip("dns server")
            gw = None
            if t.peek() == "gw":
                t.next("gw")
                gw = t.ip("gateway")
            fields["pool"] = (start, end, dns, gw)
    wan = fields.get("wan", (None, None, None))
    pool = fields.get("pool", (None, None, None, None))
    return WgwDecl(name, mode, ssid, lan, lan_p, *wan, fields.get("nat"), *pool, line=line)


def _p_bridge(t: _Tokens, line):
    name = t.name("bridge name")
    t.keyword("ssid")
    return BridgeDecl(name, t.name("ssid"), line=line)


def _endpoint(t: _Tokens) -> tuple[str, str]:
    tok = t.next("<device>:<port>")
    dev, sep, port = tok.partition(":")
    if not sep or not _NAME.fullmatch(dev) or not _PORT.fullmatch(port):
        t.fail("endpoint must be <device>:<port>", tok)
    return dev, port


def _p_link(t: _Tokens, line):
    a, b = _endpoint(t), _endpoint(t)
    return LinkDecl(a[0], a[1], b[0], b[1], line=line)


def _p_assoc(t: _Tokens, line):
    host, ssid = t.name("host name"), t.name("ssid")
    via = None
    if t.peek() == "via":
        t.next("via")
        via = t.name("wireless gateway name")
    return AssocDecl(host, ssid, via, line=line)


def _p_service(t: _Tokens, line):
    host = t.name("host name")
    svc = t.keyword(*SERVICES)
    return ServiceDecl(host, svc, t.integer("tcp port", 1, 65535), line=line)


def _p_dnsrecord(t: _Tokens, line):
    host = t.name("host name")
    fqdn = t.name("domain name")
    return DnsRecordDecl(host, fqdn.lower().rstrip("."), t.ip(), line=line)


def _p_user(t: _Tokens, line):
    name = t.name("user name")
    t.keyword("group")
    return UserDecl(name, t.keyword(*GROUPS), line=line)


_STATEMENTS = {
    "switch": ("devices", _p_switch),
    "vlan": ("vlans", _p_vlan),
    "port": ("ports", _p_port),
    "router": ("devices", _p_router),
    "subif": ("subifs", _p_subif),
    "host": ("devices", _p_host),
    "server": ("devices", lambda t, line: _p_host(t, line, server=True)),
    "wgw": ("devices", _p_wgw),
    "bridge": ("devices", _p_bridge),
    "link": ("links", _p_link),
    "assoc": ("assocs", _p_assoc),
    "service": ("services", _p_service),
    "dnsrecord": ("dnsrecords", _p_dnsrecord),
    "user": ("users", _p_user),
}


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            yield lineno, tokens


def parse_scenario(text: str) -> ScenarioDocument:
    doc = ScenarioDocument()
    for lineno, tokens in _lines(text):
        t = _Tokens(tokens, lineno)
        verb = t.next("statement")
        if verb not in _STATEMENTS:
            t.fail("unknown statement", verb)
        attr, parser = _STATEMENTS[verb]
        stmt = parser(t, lineno)
        t.end()
        getattr(doc, attr).append(stmt)
    return doc


def load_scenario(path) -> ScenarioDocument:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- formatting -----------------------------------------------------------------


def _fmt_host(d: HostDecl) -> str:
    verb = "server" if d.server else "host"
    mac = "auto" if d.mac is None else str(d.mac)
    if d.dhcp:
        return f"{verb} {d.name} mac {mac} dhcp"
    return (f"{verb} {d.name} mac {mac} static {d.address}/{d.prefix_length} "
            f"gw {d.gateway} dns {d.dns}")


def _fmt_wgw(d: WgwDecl) -> str:
    parts = [f"wgw {d.name} mode {d.mode} ssid {d.ssid} lan {d.lan_address}/{d.lan_prefix}"]
    if d.wan_address is not None:
        parts.append(f"wan {d.wan_address}/{d.wan_prefix} gw {d.wan_gateway}")
    if d.nat is not None:
        parts.append("nat on" if d.nat else "nat off")
    if d.pool_start is not None:
        pool = f"pool {d.pool_start} {d.pool_end} dns {d.pool_dns}"
        if d.pool_gateway is not None:
            pool += f" gw {d.pool_gateway}"
        parts.append(pool)
    return " ".join(parts)


def format_statement(stmt) -> str:
    if isinstance(stmt, SwitchDecl):
        up = f" uplinks {stmt.uplinks}" if stmt.uplinks else ""
        return f"switch {stmt.name} ports {stmt.ports}{up}"
    if isinstance(stmt, RouterDecl):
        return f"router {stmt.name}"
    if isinstance(stmt, HostDecl):
        return _fmt_host(stmt)
    if isinstance(stmt, WgwDecl):
        return _fmt_wgw(stmt)
    if isinstance(stmt, BridgeDecl):
        return f"bridge {stmt.name} ssid {stmt.ssid}"
    if isinstance(stmt, VlanDecl):
        return f"vlan {stmt.switch} {stmt.vid} name {stmt.label}"
    if isinstance(stmt, PortDecl):
        return f"port {stmt.switch} {stmt.index} {stmt.mode} {','.join(map(str, stmt.vlans))}"
    if isinstance(stmt, SubifDecl):
        return (f"subif {stmt.router} {stmt.label} dot1q {stmt.vid} "
                f"ip {stmt.address}/{stmt.prefix_length}")
    if isinstance(stmt, LinkDecl):
        return f"link {stmt.a_device}:{stmt.a_port} {stmt.b_device}:{stmt.b_port}"
    if isinstance(stmt, AssocDecl):
        via = f" via {stmt.via}" if stmt.via else ""
        return f"assoc {stmt.host} {stmt.ssid}{via}"
    if isinstance(stmt, ServiceDecl):
        return f"service {stmt.host} {stmt.service} {stmt.port}"
    if isinstance(stmt, DnsRecordDecl):
        return f"dnsrecord {stmt.host} {stmt.fqdn} {stmt.address}"
    if isinstance(stmt, UserDecl):
        return f"user {stmt.name} group {stmt.group}"
    raise TypeError(f"not a scenario statement: {stmt!r}")


def format_scenario(doc: ScenarioDocument) -> str:
    return "".join(format_statement(s) + "\n" for s in doc.statements())


# -- validation -----------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    severity: str  # error | warning
    rule: str
    message: str
    line: int = 0

    def __str__(self):
        return f"{self.severity}\t{self.rule}\tline {self.line}\t{self.message}"


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def rules(self) -> set[str]:
        return {f.rule for f in self.findings}


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def router_physicals(doc: ScenarioDocument, router: str) -> list[str]:
    """Physical interfaces of ``router`` in order of first mention."""
    seen: dict[str, None] = {}
    for s in doc.subifs:
        if s.router == router:
            seen.setdefault(s.phys)
    for link in doc.links:
        for dev, port in link.ends:
            if dev == router:
                seen.setdefault(port)
    return list(seen)


def assign_macs(doc: ScenarioDocument) -> dict[tuple[str, str], MacAddress]:
    """MAC per (device, interface), auto addresses drawn in declaration order."""
    macs = {}
    counter = 0

    def auto():
        nonlocal counter
        mac = next_auto_mac(counter)
        counter += 1
        return mac

    for d in doc.devices:
        if isinstance(d, HostDecl):
            macs[(d.name, "eth")] = d.mac if d.mac is not None else auto()
        elif isinstance(d, RouterDecl):
            for phys in router_physicals(doc, d.name):
                macs[(d.name, phys)] = auto()
        elif isinstance(d, WgwDecl):
            macs[(d.name, "lan")] = auto()
            if d.mode == "gateway":
                macs[(d.name, "wan")] = auto()
    return macs


def _port_ok(doc: ScenarioDocument, decl, port: str) -> bool:
    if isinstance(decl, SwitchDecl):
        return port.isdigit() and 1 <= int(port) <= decl.ports + decl.uplinks
    if isinstance(decl, WgwDecl):
        return port == "wan" or port in WGW_LAN_PORTS
    if isinstance(decl, BridgeDecl):
        return port in Bridge.ENDPOINTS
    return True


def find_wgw_for_assoc(doc: ScenarioDocument, assoc: AssocDecl) -> Optional[WgwDecl]:
    for d in doc.of_type(WgwDecl):
        if d.ssid == assoc.ssid and (assoc.via is None or assoc.via == d.name):
            return d
    return None


def validate_scenario(doc: ScenarioDocument) -> ValidationReport:
    findings: list[Finding] = []

    def err(rule, msg, line=0):
        findings.append(Finding("error", rule, msg, line))

    def warn(rule, msg, line=0):
        findings.append(Finding("warning", rule, msg, line))

    # names
    by_name: dict[str, DeviceDecl] = {}
    for d in doc.devices:
        if d.name in by_name:
            err("duplicate-name", f"device {d.name} declared twice", d.line)
        else:
            by_name[d.name] = d

    def expect(name, cls, what, line):
        d = by_name.get(name)
        if not isinstance(d, cls):
            err("dangling-name", f"{what} {name} is not declared", line)
            return None
        return d

    switches = {d.name: d for d in doc.of_type(SwitchDecl)}
    declared_vlans: dict[str, set] = {}
    for v in doc.vlans:
        if expect(v.switch, SwitchDecl, "switch", v.line):
            declared_vlans.setdefault(v.switch, set()).add(v.vid)

    port_cfg: dict[tuple[str, int], PortDecl] = {}
    for p in doc.ports:
        sw = expect(p.switch, SwitchDecl, "switch", p.line)
        if sw is None:
            continue
        if p.index > sw.ports + sw.uplinks:
            err("port-out-of-range", f"{p.switch} has no port {p.index}", p.line)
            continue
        if (p.switch, p.index) in port_cfg:
            warn("port-reconfigured", f"{p.switch} port {p.index} configured twice", p.line)
        port_cfg[(p.switch, p.index)] = p
        missing = [v for v in p.vlans if v not in declared_vlans.get(p.switch, ())]
        if missing:
            warn("vlan-undeclared", f"{p.switch} port {p.index} uses undeclared vlan(s) "
                 f"{','.join(map(str, missing))}", p.line)

    def port_mode(sw: str, idx: int) -> tuple[str, tuple]:
        p = port_cfg.get((sw, idx))
        return ("access", (1,)) if p is None else (p.mode, p.vlans)

    subifs_seen = set()
    for s in doc.subifs:
        expect(s.router, RouterDecl, "router", s.line)
        if (s.router, s.phys, s.vid) in subifs_seen:
            err("duplicate-subif", f"{s.router} {s.label} declared twice", s.line)
        subifs_seen.add((s.router, s.phys, s.vid))

    # links
    endpoint_use: dict[tuple[str, str], LinkDecl] = {}
    host_links: dict[str, int] = {}
    for link in doc.links:
        for dev, port in link.ends:
            decl = expect(dev, (SwitchDecl, RouterDecl, HostDecl, WgwDecl, BridgeDecl), "device", link.line)
            if decl is None:
                continue
            if not _port_ok(doc, decl, port):
                err("bad-port", f"{dev} has no port {port}", link.line)
            if (dev, port) in endpoint_use:
                err("duplicate-link-endpoint", f"{dev}:{port} used by more than one link", link.line)
            endpoint_use[(dev, port)] = link
            if isinstance(decl, HostDecl):
                host_links[dev] = host_links.get(dev, 0) + 1
        if link.ends[0] == link.ends[1]:
            err("bad-port", f"link joins {link.a_device}:{link.a_port} to itself", link.line)
    for host, n in host_links.items():
        if n > 1:
            err("host-multi-link", f"host {host} has {n} links; hosts have one interface")

    # associations
    assoc_seen: set[str] = set()
    for a in doc.assocs:
        if expect(a.host, HostDecl, "host", a.line) is None:
            continue
        if a.via is not None and expect(a.via, WgwDecl, "wireless gateway", a.line) is None:
            continue
        if find_wgw_for_assoc(doc, a) is None:
            err("dangling-name", f"no wireless gateway broadcasts ssid {a.ssid}"
                + (f" via {a.via}" if a.via else ""), a.line)
        if a.host in assoc_seen or a.host in host_links:
            err("assoc-conflict", f"host {a.host} is attached more than once", a.line)
        assoc_seen.add(a.host)
    for h in doc.hosts:
        if h.name not in assoc_seen and h.name not in host_links:
            warn("host-unattached", f"host {h.name} has no link or association", h.line)

    for s in doc.services:
        expect(s.host, HostDecl, "host", s.line)
    dns_names: set[str] = set()
    for r in doc.dnsrecords:
        expect(r.host, HostDecl, "host", r.line)
        if (r.host, r.fqdn) in dns_names:
            warn("dns-duplicate", f"{r.fqdn} defined twice on {r.host}", r.line)
        dns_names.add((r.host, r.fqdn))
    users: set[str] = set()
    for u in doc.users:
        if u.name in users:
            warn("user-duplicate", f"user {u.name} listed twice", u.line)
        users.add(u.name)

    # addressing
    statics: list[tuple[Ipv4Address, str, int]] = []
    for d in doc.devices:
        if isinstance(d, HostDecl) and not d.dhcp:
            statics.append((d.address, d.name, d.line))
            if not same_subnet(d.gateway, d.address, d.prefix_length):
                err("gateway-outside-subnet", f"{d.name} gateway {d.gateway} outside "
                    f"{d.address}/{d.prefix_length}", d.line)
        elif isinstance(d, WgwDecl):
            statics.append((d.lan_address, f"{d.name}/lan", d.line))
            if d.mode == "gateway" and (d.wan_address is None or not d.nat_enabled):
                err("wgw-mode", f"{d.name}: gateway mode needs a wan clause and nat on", d.line)
            if d.mode == "ap" and (d.wan_address is not None or d.nat_enabled):
                err("wgw-mode", f"{d.name}: access-point mode forbids wan and nat", d.line)
            if d.wan_address is not None:
                statics.append((d.wan_address, f"{d.name}/wan", d.line))
                if not same_subnet(d.wan_gateway, d.wan_address, d.wan_prefix):
                    err("gateway-outside-subnet", f"{d.name} wan gateway {d.wan_gateway} outside "
                        f"{d.wan_address}/{d.wan_prefix}", d.line)
            if d.has_pool:
                if d.pool_start > d.pool_end:
                    err("dhcp-pool-empty", f"{d.name} pool start after end", d.line)
                for edge in (d.pool_start, d.pool_end):
                    if not same_subnet(edge, d.lan_address, d.lan_prefix):
                        err("dhcp-pool-outside-subnet", f"{d.name} pool bound {edge} outside "
                            f"{d.lan_address}/{d.lan_prefix}", d.line)
                gw = d.lease_gateway
                if gw is not None and not same_subnet(gw, d.lan_address, d.lan_prefix):
                    err("gateway-outside-subnet", f"{d.name} pool gateway {gw} outside "
                        f"{d.lan_address}/{d.lan_prefix}", d.line)
    for s in doc.subifs:
        statics.append((s.address, f"{s.router}/{s.label}", s.line))

    seen_ip: dict[Ipv4Address, str] = {}
    for addr, owner, line in statics:
        if addr in seen_ip:
            err("duplicate-ip", f"{addr} assigned to both {seen_ip[addr]} and {owner}", line)
        else:
            seen_ip[addr] = owner

    pools = [d for d in doc.of_type(WgwDecl) if d.has_pool and d.pool_start <= d.pool_end]
    for d in pools:
        for addr, owner, _ in statics:
            if d.pool_start <= addr <= d.pool_end:
                err("dhcp-pool-overlap", f"{d.name} pool contains static {addr} of {owner}", d.line)
    for i, a in enumerate(pools):
        for b in pools[i + 1:]:
            if a.pool_start <= b.pool_end and b.pool_start <= a.pool_end:
                err("dhcp-pool-overlap", f"pools of {a.name} and {b.name} overlap", b.line)

    macs = assign_macs(doc)
    mac_owner: dict[MacAddress, str] = {}
    for (dev, iface), mac in macs.items():
        if mac in mac_owner:
            err("duplicate-mac", f"{mac} used by {mac_owner[mac]} and {dev}")
        mac_owner[mac] = dev

    # vlan consistency across links (bridges are transparent)
    def far_end(dev, port, hops=0):
        """Follow bridges from the given endpoint; return the first non-bridge endpoint."""
        link = endpoint_use.get((dev, port))
        if link is None:
            return None
        other = link.ends[1] if link.ends[0] == (dev, port) else link.ends[0]
        if isinstance(by_name.get(other[0]), BridgeDecl) and hops < 16:
            peer = "b" if other[1] == "a" else "a"
            return far_end(other[0], peer, hops + 1)
        return other

    subnet_of_vlan: dict[int, list] = {}
    for s in doc.subifs:
        subnet_of_vlan.setdefault(s.vid, []).append((s.address, s.prefix_length))

    checked = set()
    for (dev, port), link in endpoint_use.items():
        if not isinstance(by_name.get(dev), SwitchDecl) or not port.isdigit():
            continue
        other = far_end(dev, port)
        if other is None:
            continue
        pair = frozenset([(dev, port), other])
        if pair in checked:
            continue
        checked.add(pair)
        mode, vlans = port_mode(dev, int(port))
        odecl = by_name.get(other[0])
        if isinstance(odecl, SwitchDecl) and other[1].isdigit():
            omode, ovlans = port_mode(other[0], int(other[1]))
            if mode != omode or (mode == "trunk" and set(vlans) != set(ovlans)):
                if "trunk" in (mode, omode):
                    err("trunk-vlan-mismatch", f"{dev}:{port} ({mode} {vlans}) vs "
                        f"{other[0]}:{other[1]} ({omode} {ovlans})", link.line)
            elif mode == "access" and vlans != ovlans:
                err("access-vlan-mismatch", f"{dev}:{port} vlan {vlans[0]} vs "
                    f"{other[0]}:{other[1]} vlan {ovlans[0]}", link.line)
        elif isinstance(odecl, HostDecl):
            if mode == "trunk":
                err("access-vlan-mismatch", f"host {odecl.name} on trunk port {dev}:{port}", link.line)
            elif not odecl.dhcp:
                nets = subnet_of_vlan.get(vlans[0], [])
                if nets and not any(same_subnet(odecl.address, a, p) for a, p in nets):
                    err("access-vlan-mismatch", f"host {odecl.name} address {odecl.address} "
                        f"not in the subnet of vlan {vlans[0]}", link.line)
        elif isinstance(odecl, RouterDecl):
            for s in doc.subifs:
                if s.router == odecl.name and s.phys == other[1]:
                    if mode != "trunk" or s.vid not in vlans:
                        warn("subif-vlan-not-on-trunk", f"{odecl.name} {s.label} vlan {s.vid} "
                             f"not carried by {dev}:{port}", s.line)

    # layer-2 loops over switches, bridges and wireless gateways
    def l2_node(dev, port):
        decl = by_name.get(dev)
        if isinstance(decl, (SwitchDecl, BridgeDecl)):
            return (dev, "")
        if isinstance(decl, WgwDecl):
            return (dev, "wan" if decl.mode == "gateway" and port == "wan" else "lan")
        return None

    uf = _UnionFind()
    for link in doc.links:
        a, b = (l2_node(*e) for e in link.ends)
        if a is None or b is None:
            continue
        if not uf.union(a, b):
            err("l2-loop", f"link {format_statement(link)[5:]} closes a layer-2 loop", link.line)

    return ValidationReport(findings)


# -- build --------------------------------------------------------------------


def _latency(*decls) -> int:
    return WIRELESS_LATENCY_US if any(isinstance(d, BridgeDecl) for d in decls) else WIRED_LATENCY_US


def build_network(doc: ScenarioDocument, trace: bool = False,
                  report: Optional[ValidationReport] = None) -> Network:
    report = report or validate_scenario(doc)
    if not report.ok:
        raise BuildRejected(report)
    net = Network(trace=trace)
    net.doc = doc
    macs = assign_macs(doc)

    for d in doc.devices:
        if isinstance(d, SwitchDecl):
            net.add_device(Switch(d.name, d.ports, d.uplinks))
        elif isinstance(d, RouterDecl):
            r = Router(d.name)
            for phys in router_physicals(doc, d.name):
                r.add_physical(phys, macs[(d.name, phys)])
            net.add_device(r)
        elif isinstance(d, HostDecl):
            static = None
            if not d.dhcp:
                static = IpInterfaceConfig(d.address, d.prefix_length, d.gateway, d.dns)
            net.add_device(Host(d.name, macs[(d.name, "eth")], static, is_server=d.server))
        elif isinstance(d, WgwDecl):
            dhcp = None
            if d.has_pool:
                dhcp = DhcpServer(d.pool_start, d.pool_end, d.lan_prefix, d.lease_gateway,
                                  d.pool_dns, server_id=d.lan_address)
            wan = None
            if d.wan_address is not None:
                wan = IpInterfaceConfig(d.wan_address, d.wan_prefix, d.wan_gateway)
            net.add_device(WirelessGateway(
                d.name, d.mode, d.ssid, macs[(d.name, "lan")],
                IpInterfaceConfig(d.lan_address, d.lan_prefix), macs.get((d.name, "wan")),
                wan, d.nat_enabled, dhcp))
        elif isinstance(d, BridgeDecl):
            net.add_device(Bridge(d.name, d.ssid))

    for v in doc.vlans:
        net.devices[v.switch].vlan_names[v.vid] = v.label
    for p in doc.ports:
        cfg = SwitchPortConfig(p.index, p.mode, frozenset(p.vlans))
        net.devices[p.switch].configure(cfg)
    for s in doc.subifs:
        net.devices[s.router].add_subinterface(s.phys, s.vid, s.address, s.prefix_length)
    for s in doc.services:
        net.devices[s.host].services[s.port] = s.service
    for r in doc.dnsrecords:
        host = net.devices[r.host]
        if host.zone is None:
            host.zone = DnsZone()
        host.zone.add(r.fqdn, r.address)

    for link in doc.links:
        a, b = net.devices[link.a_device], net.devices[link.b_device]
        net.connect(a, link.a_port, b, link.b_port,
                    _latency(doc.device(link.a_device), doc.device(link.b_device)))
    for a in doc.assocs:
        wgw_decl = find_wgw_for_assoc(doc, a)
        host, wgw = net.devices[a.host], net.devices[wgw_decl.name]
        port = wgw.associate(host.name, host.mac)
        net.connect(host, HOST_WIRELESS_PORT, wgw, port, WIRELESS_LATENCY_US)
    return net


# -- bundled scenario -------------------------------------------------------------


def bundled_ice_text() -> str:
    return resources.files("icenet").joinpath("data/ice.scenario").read_text(encoding="utf-8")


def bundled_ice_expectations_text() -> str:
    return resources.files("icenet").joinpath("data/ice.expect").read_text(encoding="utf-8")


def bundled_ice_scenario() -> ScenarioDocument:
    return parse_scenario(bundled_ice_text())


def read_scenario_arg(arg: str) -> str:
    """Scenario text for a CLI argument; ``@ice`` names the bundled scenario."""
    if arg == "@ice":
        return bundled_ice_text()
    with open(arg, encoding="utf-8") as fh:
        return fh.read()


# -- expectations -----------------------------------------------------------------


@dataclass(frozen=True)
class Expectation:
    kind: str  # reach | lease | resolve | probe
    host: str
    target: str
    expected: str
    port: Optional[int] = None
    line: int = field(default=0, compare=False)

    def __str__(self):
        if self.kind == "probe":
            return f"probe {self.host} {self.target} {self.port} {self.expected}"
        if self.kind == "lease":
            return f"lease {self.host} {self.expected}"
        return f"{self.kind} {self.host} {self.target} {self.expected}"


def parse_expectations(text: str) -> list[Expectation]:
    """Parse ``reach``/``lease``/``resolve``/``probe`` lines."""
    out = []
    for lineno, tokens in _lines(text):
        t = _Tokens(tokens, lineno)
        verb = t.keyword("reach", "lease", "resolve", "probe")
        if verb == "reach":
            a, b = t.name("host"), t.name("host")
            out.append(Expectation("reach", a, b, t.keyword("yes", "no"), line=lineno))
        elif verb == "lease":
            host = t.name("host")
            out.append(Expectation("lease", host, "", str(t.ip()), line=lineno))
        elif verb == "resolve":
            host, fqdn = t.name("host"), t.name("domain name").lower()
            tok = t.next("address or NXDOMAIN")
            if tok != "NXDOMAIN":
                try:
                    tok = str(parse_ipv4(tok))
                except AddressError as exc:
                    t.fail(str(exc), tok)
            out.append(Expectation("resolve", host, fqdn, tok, line=lineno))
        else:
            host, target = t.name("host"), t.name("target")
            port = t.integer("tcp port", 1, 65535)
            status = t.keyword("connected", "refused", "unreachable")
            out.append(Expectation("probe", host, target, status, port, line=lineno))
        t.end()
    return out
