"""Per-device state machines.

Every device talks to the engine through a small duck-typed interface:
``sim.now``, ``sim.transmit(device, port, frame, label=None)``,
``sim.set_timer(device, delay_us, token)``, ``sim.cancel(event)``,
``sim.count(name)`` and ``sim.note(kind, **data)``.  The pure per-device
operations (``Switch.ingress``, ``Router.handle``, ``DhcpServer.handle``,
``DnsZone.handle``, the NAT pair and ``Bridge.forward``) do not need a
simulator at all and are tested directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

from .addressing import (
    BROADCAST_IP,
    BROADCAST_MAC,
    ZERO_IP,
    ZERO_MAC,
    Cidr,
    IpInterfaceConfig,
    Ipv4Address,
    MacAddress,
    check_vlan,
    same_subnet,
)
from .errors import DeviceError, NatTableFull, NoGateway, TtlExpired, UnboundHost
from .protocol import (
    DHCP_CLIENT_PORT,
    DHCP_SERVER_PORT,
    DNS_PORT,
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
    decrement_ttl,
    tag_frame,
    untag_frame,
)

log = logging.getLogger(__name__)

SECOND_US = 1_000_000
ARP_ATTEMPTS = 3
ARP_RETRY_US = SECOND_US
DHCP_ATTEMPTS = 3
DHCP_RETRY_US = SECOND_US
DNS_ATTEMPTS = 3
DNS_RETRY_US = SECOND_US
PING_TIMEOUT_US = 2 * SECOND_US
TCP_TIMEOUT_US = 2 * SECOND_US
EPHEMERAL_PORT_BASE = 49152
NAT_PORT_BASE = 20000
NAT_PORT_LIMIT = 65535
WGW_LAN_PORTS = ("lan1", "lan2", "lan3", "lan4")
LOCAL = "local"


class Device:
    kind = "device"

    def __init__(self, name: str):
        self.name = name
        # ports with a link attached; None means "treat every port as attached"
        self.link_up: Optional[set] = None

    def attach(self, port: str) -> None:
        """Mark ``port`` as cabled; flooding only reaches attached ports."""
        if self.link_up is None:
            self.link_up = set()
        self.link_up.add(port)

    def trace_port(self, port: str, frame: EthernetFrame) -> str:
        return port

    def receive(self, sim, port: str, frame: EthernetFrame) -> None:
        raise NotImplementedError

    def on_timer(self, sim, token) -> None:
        pass

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


# -- layer 2 ------------------------------------------------------------------


@dataclass(frozen=True)
class SwitchPortConfig:
    index: int
    mode: str  # "access" | "trunk"
    vlans: frozenset

    def __post_init__(self):
        if self.mode not in ("access", "trunk"):
            raise ValueError(f"bad port mode {self.mode!r}")
        if not self.vlans:
            raise ValueError("port carries no vlan")
        if self.mode == "access" and len(self.vlans) != 1:
            raise ValueError("access port must carry exactly one vlan")
        for vid in self.vlans:
            check_vlan(vid)

    @classmethod
    def access(cls, index: int, vlan: int) -> "SwitchPortConfig":
        return cls(index, "access", frozenset([vlan]))

    @classmethod
    def trunk(cls, index: int, vlans) -> "SwitchPortConfig":
        return cls(index, "trunk", frozenset(vlans))

    @property
    def access_vlan(self) -> int:
        (vid,) = self.vlans
        return vid

    def carries(self, vlan: int) -> bool:
        return vlan in self.vlans


class Switch(Device):
    """VLAN-aware learning switch. Unconfigured ports are access ports in VLAN 1.

    Uplink ports (the 2950T's gigabit pair) are numbered after the regular
    ports and otherwise behave identically.
    """

    kind = "switch"

    def __init__(self, name: str, port_count: int, uplink_count: int = 0):
        super().__init__(name)
        if port_count < 1 or uplink_count < 0:
            raise ValueError("switch needs at least one port")
        self.port_count = port_count
        self.uplink_count = uplink_count
        total = port_count + uplink_count
        self.ports = {i: SwitchPortConfig.access(i, 1) for i in range(1, total + 1)}
        self.vlan_names: dict[int, str] = {}
        self.mac_table: dict[tuple[int, MacAddress], int] = {}
        self.violations = 0

    def configure(self, cfg: SwitchPortConfig) -> None:
        if cfg.index not in self.ports:
            raise DeviceError(f"{self.name} has no port {cfg.index}")
        self.ports[cfg.index] = cfg

    def _attached(self, index: int) -> bool:
        return self.link_up is None or str(index) in self.link_up

    def ingress(self, port: int, frame: EthernetFrame) -> list[tuple[int, EthernetFrame]]:
        cfg = self.ports[port]
        if cfg.mode == "access":
            if frame.vlan_tag is not None:
                self.violations += 1
                return []
            vlan, inner = cfg.access_vlan, frame
        else:
            # no native vlan: untagged frames on trunks are dropped
            if frame.vlan_tag is None or not cfg.carries(frame.vlan_tag):
                self.violations += 1
                return []
            inner, vlan = untag_frame(frame)

        self.mac_table[(vlan, inner.src)] = port

        known = None if inner.dst.is_broadcast else self.mac_table.get((vlan, inner.dst))
        if known is not None:
            egress = [] if known == port else [known]
        else:
            egress = [i for i, c in self.ports.items()
                      if i != port and c.carries(vlan) and self._attached(i)]

        out = []
        for i in egress:
            if self.ports[i].mode == "trunk":
                out.append((i, tag_frame(inner, vlan)))
            else:
                out.append((i, inner))
        return out

    def receive(self, sim, port, frame):
        before = self.violations
        for egress, f in self.ingress(int(port), frame):
            sim.transmit(self, str(egress), f)
        if self.violations != before:
            sim.count("vlan-violation")


class LearningBridge:
    """Untagged learning bridge used inside wireless gateways."""

    def __init__(self, ports):
        self.ports = list(ports)
        self.mac_table: dict[MacAddress, str] = {}
        self.link_up: Optional[set] = None

    def add_port(self, port: str) -> None:
        if port not in self.ports:
            self.ports.append(port)

    def ingress(self, port: str, frame: EthernetFrame) -> list[tuple[str, EthernetFrame]]:
        if frame.vlan_tag is not None:
            return []
        self.mac_table[frame.src] = port
        known = None if frame.dst.is_broadcast else self.mac_table.get(frame.dst)
        if known is not None:
            return [] if known == port else [(known, frame)]
        return [(p, frame) for p in self.ports
                if p != port and (p == LOCAL or self.link_up is None or p in self.link_up)]


class Bridge(Device):
    """Transparent point-to-point bridge with two endpoints ``a`` and ``b``."""

    kind = "bridge"
    ENDPOINTS = ("a", "b")

    def __init__(self, name: str, ssid_label: str):
        super().__init__(name)
        self.ssid_label = ssid_label
        self.forwarded = 0

    def forward(self, from_endpoint: str, frame: EthernetFrame) -> tuple[str, EthernetFrame]:
        if from_endpoint not in self.ENDPOINTS:
            raise DeviceError(f"{self.name} has no endpoint {from_endpoint!r}")
        self.forwarded += 1
        return ("b" if from_endpoint == "a" else "a"), frame

    def receive(self, sim, port, frame):
        other, f = self.forward(port, frame)
        sim.transmit(self, other, f)


# -- layer 3 helpers ------------------------------------------------------------


class IpStack:
    """One IP interface: address config, ARP cache and packets awaiting ARP."""

    def __init__(self, mac: MacAddress, config: Optional[IpInterfaceConfig], vlan: Optional[int] = None):
        self.mac = mac
        self.config = config
        self.vlan = vlan
        self.arp_cache: dict[Ipv4Address, MacAddress] = {}
        self.pending: dict[Ipv4Address, list[Ipv4Packet]] = {}
        self.attempts: dict[Ipv4Address, int] = {}
        self._started: list[Ipv4Address] = []
        self._resolved: list[Ipv4Address] = []

    @property
    def address(self) -> Optional[Ipv4Address]:
        return None if self.config is None else self.config.address

    def frame(self, dst: MacAddress, payload) -> EthernetFrame:
        return EthernetFrame(self.mac, dst, payload, self.vlan)

    def arp_request(self, target: Ipv4Address) -> EthernetFrame:
        msg = ArpMessage(ArpKind.REQUEST, self.mac, self.address, ZERO_MAC, target)
        return self.frame(BROADCAST_MAC, msg)

    def resolve(self, packet: Ipv4Packet, next_hop: Ipv4Address) -> list[EthernetFrame]:
        mac = self.arp_cache.get(next_hop)
        if mac is not None:
            return [self.frame(mac, packet)]
        if next_hop in self.pending:
            self.pending[next_hop].append(packet)
            return []
        self.pending[next_hop] = [packet]
        self.attempts[next_hop] = 1
        self._started.append(next_hop)
        return [self.arp_request(next_hop)]

    def handle_arp(self, msg: ArpMessage) -> list[EthernetFrame]:
        own = self.address
        if own is None or msg.target_ip != own:
            return []
        self.arp_cache[msg.sender_ip] = msg.sender_mac
        out = []
        if msg.kind is ArpKind.REQUEST:
            reply = ArpMessage(ArpKind.REPLY, self.mac, own, msg.sender_mac, msg.sender_ip)
            out.append(self.frame(msg.sender_mac, reply))
        queued = self.pending.pop(msg.sender_ip, None)
        if queued is not None:
            self.attempts.pop(msg.sender_ip, None)
            self._resolved.append(msg.sender_ip)
            out.extend(self.frame(msg.sender_mac, p) for p in queued)
        return out

    def retry(self, ip: Ipv4Address) -> tuple[list[EthernetFrame], list[Ipv4Packet]]:
        """Timer expiry for ``ip``: returns (frames to resend, packets given up on)."""
        if ip not in self.pending:
            return [], []
        if self.attempts[ip] < ARP_ATTEMPTS:
            self.attempts[ip] += 1
            return [self.arp_request(ip)], []
        self.attempts.pop(ip)
        return [], self.pending.pop(ip)

    def drain(self) -> tuple[list[Ipv4Address], list[Ipv4Address]]:
        started, resolved = self._started, self._resolved
        self._started, self._resolved = [], []
        return started, resolved


def _icmp_error(kind: IcmpKind, src: Ipv4Address, offending: Ipv4Packet) -> Ipv4Packet:
    inner = offending.payload
    ident, seq = (inner.ident, inner.sequence) if isinstance(inner, IcmpMessage) else (0, 0)
    return Ipv4Packet(src, offending.src, IcmpMessage(kind, ident, seq, quoted=offending))


def _may_report(packet: Ipv4Packet) -> bool:
    """ICMP errors are never sent about ICMP errors or from unspecified sources."""
    inner = packet.payload
    if isinstance(inner, IcmpMessage) and inner.is_error:
        return False
    return packet.src not in (ZERO_IP, BROADCAST_IP)


class L3Device(Device):
    """Shared ARP timer plumbing for devices owning one or more IpStacks."""

    def __init__(self, name: str):
        super().__init__(name)
        self._arp_timers: dict = {}

    def _stack(self, key) -> IpStack:
        raise NotImplementedError

    def _emit(self, sim, key, frames: list[EthernetFrame]) -> None:
        raise NotImplementedError

    def _arp_failed(self, sim, key, packets: list[Ipv4Packet]) -> None:
        sim.count("arp-failed")

    def _flush_timers(self, sim, key) -> None:
        stack = self._stack(key)
        started, resolved = stack.drain()
        for ip in resolved:
            ev = self._arp_timers.pop((key, ip), None)
            if ev is not None:
                sim.cancel(ev)
        for ip in started:
            self._arp_timers[(key, ip)] = sim.set_timer(self, ARP_RETRY_US, ("arp", key, ip))

    def _send(self, sim, key, packet: Ipv4Packet, next_hop: Ipv4Address) -> None:
        frames = self._stack(key).resolve(packet, next_hop)
        self._emit(sim, key, frames)
        self._flush_timers(sim, key)

    def _arp_input(self, sim, key, msg: ArpMessage) -> None:
        frames = self._stack(key).handle_arp(msg)
        self._emit(sim, key, frames)
        self._flush_timers(sim, key)

    def _arp_timer(self, sim, key, ip) -> None:
        self._arp_timers.pop((key, ip), None)
        stack = self._stack(key)
        frames, failed = stack.retry(ip)
        if frames:
            self._emit(sim, key, frames)
            self._arp_timers[(key, ip)] = sim.set_timer(self, ARP_RETRY_US, ("arp", key, ip))
        if failed:
            self._arp_failed(sim, key, failed)

    def on_timer(self, sim, token):
        if token[0] == "arp":
            self._arp_timer(sim, token[1], token[2])


# -- servers ------------------------------------------------------------------


class DhcpServer:
    """Lowest-free address pool; leases never expire."""

    def __init__(self, pool_start: Ipv4Address, pool_end: Ipv4Address, prefix_length: int,
                 gateway: Ipv4Address, dns_server: Ipv4Address,
                 server_id: Optional[Ipv4Address] = None):
        if pool_start > pool_end:
            raise ValueError(f"empty pool {pool_start}-{pool_end}")
        self.pool_start = pool_start
        self.pool_end = pool_end
        self.prefix_length = prefix_length
        self.gateway = gateway
        self.dns_server = dns_server
        self.server_id = server_id
        self.leases: dict[MacAddress, Ipv4Address] = {}
        self.offers: dict[MacAddress, Ipv4Address] = {}
        self.exhaustion_events: list[tuple[MacAddress, int]] = []

    @property
    def pool_size(self) -> int:
        return self.pool_end.value - self.pool_start.value + 1

    @property
    def free_count(self) -> int:
        return self.pool_size - len(self.leases)

    def _lowest_free(self, mac: MacAddress) -> Optional[Ipv4Address]:
        taken = set(self.leases.values())
        taken.update(a for m, a in self.offers.items() if m != mac)
        for value in range(self.pool_start.value, self.pool_end.value + 1):
            addr = Ipv4Address(value)
            if addr not in taken:
                return addr
        return None

    def _reply(self, kind: DhcpKind, msg: DhcpMessage, addr: Optional[Ipv4Address]) -> DhcpMessage:
        if kind is DhcpKind.NAK:
            return DhcpMessage(kind, msg.client_mac, msg.transaction_id, server_id=self.server_id)
        return DhcpMessage(kind, msg.client_mac, msg.transaction_id, addr,
                           self.prefix_length, self.gateway, self.dns_server, self.server_id)

    def handle(self, msg: DhcpMessage) -> Optional[DhcpMessage]:
        mac = msg.client_mac
        if msg.kind is DhcpKind.DISCOVER:
            addr = self.leases.get(mac) or self._lowest_free(mac)
            if addr is None:
                event = (mac, msg.transaction_id)
                if event not in self.exhaustion_events:
                    self.exhaustion_events.append(event)
                    log.info("dhcp pool %s-%s exhausted for %s", self.pool_start, self.pool_end, mac)
                return None
            self.offers[mac] = addr
            return self._reply(DhcpKind.OFFER, msg, addr)
        if msg.kind is DhcpKind.REQUEST:
            if msg.server_id is not None and msg.server_id != self.server_id:
                # client picked another server
                self.offers.pop(mac, None)
                return None
            if msg.address is not None and msg.address in (self.offers.get(mac), self.leases.get(mac)):
                self.offers.pop(mac, None)
                self.leases[mac] = msg.address
                return self._reply(DhcpKind.ACK, msg, msg.address)
            return self._reply(DhcpKind.NAK, msg, None)
        return None


class DnsZone:
    def __init__(self, records: Optional[dict] = None):
        self.records: dict[str, Ipv4Address] = {}
        for name, addr in (records or {}).items():
            self.add(name, addr)

    def add(self, name: str, addr: Ipv4Address) -> None:
        self.records[name.lower().rstrip(".")] = addr

    def lookup(self, name: str) -> Optional[Ipv4Address]:
        return self.records.get(name.lower().rstrip("."))

    def handle(self, msg: DnsMessage) -> DnsMessage:
        if msg.kind is not DnsKind.QUERY:
            raise DeviceError(f"dns server got {msg.kind.value}")
        addr = self.lookup(msg.name)
        if addr is None:
            return DnsMessage(DnsKind.NAME_ERROR, msg.name, msg.transaction_id)
        return DnsMessage(DnsKind.ANSWER, msg.name, msg.transaction_id, addr)


# -- router -------------------------------------------------------------------


@dataclass
class Subinterface:
    phys: str
    vlan: int
    stack: IpStack
    enabled: bool = True

    @property
    def label(self) -> str:
        return f"{self.phys}.{self.vlan}"

    @property
    def subnet(self) -> Cidr:
        return self.stack.config.subnet


class Router(L3Device):
    """Router-on-a-stick: dot1q subinterfaces on physical ports, connected routes only."""

    kind = "router"

    def __init__(self, name: str):
        super().__init__(name)
        self.macs: dict[str, MacAddress] = {}
        self.subinterfaces: dict[tuple[str, int], Subinterface] = {}

    def add_physical(self, phys: str, mac: MacAddress) -> None:
        self.macs.setdefault(phys, mac)

    def add_subinterface(self, phys: str, vlan: int, address: Ipv4Address, prefix_length: int) -> Subinterface:
        if phys not in self.macs:
            raise DeviceError(f"{self.name}: unknown interface {phys}")
        key = (phys, check_vlan(vlan))
        if key in self.subinterfaces:
            raise DeviceError(f"{self.name}: duplicate subinterface {phys}.{vlan}")
        sub = Subinterface(phys, vlan, IpStack(self.macs[phys], IpInterfaceConfig(address, prefix_length), vlan))
        self.subinterfaces[key] = sub
        return sub

    def set_enabled(self, enabled: bool) -> None:
        for sub in self.subinterfaces.values():
            sub.enabled = enabled

    @property
    def routing_table(self) -> list[tuple[Cidr, tuple[str, int]]]:
        return [(s.subnet, k) for k, s in self.subinterfaces.items() if s.enabled]

    @property
    def arp_cache(self) -> dict[Ipv4Address, MacAddress]:
        merged = {}
        for sub in self.subinterfaces.values():
            merged.update(sub.stack.arp_cache)
        return merged

    def lookup(self, dst: Ipv4Address) -> Optional[tuple[str, int]]:
        best, best_len = None, -1
        for cidr, key in self.routing_table:
            if dst in cidr and cidr.prefix_length > best_len:
                best, best_len = key, cidr.prefix_length
        return best

    def _stack(self, key):
        return self.subinterfaces[key].stack

    def _own(self, addr: Ipv4Address) -> bool:
        return any(s.enabled and s.stack.address == addr for s in self.subinterfaces.values())

    def _route(self, packet: Ipv4Packet) -> list[tuple[tuple[str, int], EthernetFrame]]:
        key = self.lookup(packet.dst)
        if key is None:
            return []
        return [(key, f) for f in self.subinterfaces[key].stack.resolve(packet, packet.dst)]

    def _error(self, kind: IcmpKind, ingress, packet: Ipv4Packet):
        if not _may_report(packet):
            return []
        src = self.subinterfaces[ingress].stack.address
        return self._route(_icmp_error(kind, src, packet))

    def handle(self, subif: tuple[str, int], frame: EthernetFrame) -> list[tuple[tuple[str, int], EthernetFrame]]:
        sub = self.subinterfaces.get(subif)
        if sub is None or not sub.enabled:
            return []
        if frame.vlan_tag is not None:
            frame, _ = untag_frame(frame)
        if not (frame.dst.is_broadcast or frame.dst == sub.stack.mac):
            return []
        payload = frame.payload
        if isinstance(payload, ArpMessage):
            return [(subif, f) for f in sub.stack.handle_arp(payload)]
        packet = payload
        if packet.dst == BROADCAST_IP:
            return []
        if self._own(packet.dst):
            inner = packet.payload
            if isinstance(inner, IcmpMessage) and inner.kind is IcmpKind.ECHO_REQUEST:
                reply = Ipv4Packet(packet.dst, packet.src,
                                   IcmpMessage(IcmpKind.ECHO_REPLY, inner.ident, inner.sequence))
                return self._route(reply)
            return []
        try:
            forwarded = decrement_ttl(packet)
        except TtlExpired:
            return self._error(IcmpKind.TTL_EXCEEDED, subif, packet)
        if self.lookup(packet.dst) is None:
            return self._error(IcmpKind.DEST_UNREACHABLE, subif, packet)
        return self._route(forwarded)

    def trace_port(self, port, frame):
        if frame.vlan_tag is not None and (port, frame.vlan_tag) in self.subinterfaces:
            return f"{port}.{frame.vlan_tag}"
        return port

    def receive(self, sim, port, frame):
        if frame.vlan_tag is None:
            sim.count("router-untagged-drop")
            return
        key = (port, frame.vlan_tag)
        out = self.handle(key, frame)
        for k, f in out:
            sim.transmit(self, k[0], f, label=self.subinterfaces[k].label)
        for k in self.subinterfaces:
            self._flush_timers(sim, k)

    def _emit(self, sim, key, frames):
        for f in frames:
            sim.transmit(self, key[0], f, label=self.subinterfaces[key].label)

    def _arp_failed(self, sim, key, packets):
        super()._arp_failed(sim, key, packets)
        for p in packets:
            for k, f in self._error(IcmpKind.DEST_UNREACHABLE, key, p):
                self._emit(sim, k, [f])
        for k in self.subinterfaces:
            self._flush_timers(sim, k)


# -- host ---------------------------------------------------------------------


@dataclass
class Operation:
    """An in-flight host activity started by an injector (ping, dns, tcp, dhcp)."""

    kind: str
    started_us: int
    status: str = "pending"
    finished_us: Optional[int] = None
    detail: dict = field(default_factory=dict)
    timer: object = None

    @property
    def done(self) -> bool:
        return self.status != "pending"


class Host(L3Device):
    kind = "host"

    def __init__(self, name: str, mac: MacAddress, static: Optional[IpInterfaceConfig] = None,
                 services: Optional[dict] = None, zone: Optional[DnsZone] = None,
                 is_server: bool = False):
        super().__init__(name)
        self.mac = mac
        self.config_mode = "static" if static is not None else "dhcp"
        self.stack = IpStack(mac, static)
        self.dhcp_state = "bound" if static is not None else "idle"
        self.services: dict[int, str] = dict(services or {})
        self.zone = zone
        self.is_server = is_server
        self.port: Optional[str] = None
        self.ops: dict = {}
        self._ident = 0
        self._ephemeral = EPHEMERAL_PORT_BASE
        self._dhcp_key = None

    @property
    def current_config(self) -> Optional[IpInterfaceConfig]:
        return self.stack.config

    @property
    def arp_cache(self):
        return self.stack.arp_cache

    @property
    def open_tcp_ports(self) -> set:
        return set(self.services)

    @property
    def bound(self) -> bool:
        return self.stack.config is not None

    def attach(self, port: str) -> None:
        super().attach(port)
        self.port = port

    def next_ident(self) -> int:
        self._ident += 1
        return self._ident

    def next_port(self) -> int:
        port = self._ephemeral
        self._ephemeral = EPHEMERAL_PORT_BASE if port >= 65535 else port + 1
        return port

    # addressing

    def next_hop(self, dst: Ipv4Address) -> Ipv4Address:
        cfg = self.stack.config
        if cfg is None:
            raise UnboundHost(f"{self.name} has no address")
        if same_subnet(dst, cfg.address, cfg.prefix_length):
            return dst
        if cfg.gateway is None:
            raise NoGateway(f"{self.name} has no gateway for {dst}")
        return cfg.gateway

    def resolve_and_send(self, packet: Ipv4Packet) -> list[EthernetFrame]:
        """Frames to put on the wire for ``packet``: the data frame or an ARP request."""
        return self.stack.resolve(packet, self.next_hop(packet.dst))

    def _stack(self, key):
        return self.stack

    def _emit(self, sim, key, frames):
        if self.port is None:
            sim.count("host-unattached")
            return
        for f in frames:
            sim.transmit(self, self.port, f)

    def send_ip(self, sim, packet: Ipv4Packet) -> None:
        try:
            frames = self.resolve_and_send(packet)
        except NoGateway:
            sim.count("no-gateway")
            self._fail_for(sim, packet, "unreachable")
            return
        self._emit(sim, None, frames)
        self._flush_timers(sim, None)

    # operations

    def _finish(self, sim, key, status: str, **detail) -> None:
        op = self.ops.get(key)
        if op is None or op.done:
            return
        op.status = status
        op.finished_us = sim.now
        op.detail.update(detail)
        if op.timer is not None:
            sim.cancel(op.timer)
            op.timer = None

    def start_ping(self, sim, dst: Ipv4Address, ident: int, seq: int):
        key = ("icmp", ident, seq)
        op = self.ops[key] = Operation("ping", sim.now)
        packet = Ipv4Packet(self.stack.address, dst, IcmpMessage(IcmpKind.ECHO_REQUEST, ident, seq))
        op.timer = sim.set_timer(self, PING_TIMEOUT_US, ("op-timeout", key))
        self.send_ip(sim, packet)
        return key

    def start_dns(self, sim, name: str):
        cfg = self.stack.config
        if cfg is None:
            raise UnboundHost(f"{self.name} has no address")
        if cfg.dns_server is None:
            raise DeviceError(f"{self.name} has no dns server")
        sport = self.next_port()
        key = ("udp", sport)
        op = self.ops[key] = Operation("dns", sim.now, detail={"name": name.lower(), "attempts": 0,
                                                              "xid": sim.next_xid()})
        self._dns_attempt(sim, key)
        return key

    def _dns_attempt(self, sim, key):
        op = self.ops[key]
        op.detail["attempts"] += 1
        query = DnsMessage(DnsKind.QUERY, op.detail["name"], op.detail["xid"])
        packet = Ipv4Packet(self.stack.address, self.stack.config.dns_server,
                            UdpDatagram(key[1], DNS_PORT, query))
        op.timer = sim.set_timer(self, DNS_RETRY_US, ("dns-retry", key))
        self.send_ip(sim, packet)

    def start_tcp(self, sim, dst: Ipv4Address, port: int):
        sport = self.next_port()
        key = ("tcp", sport)
        op = self.ops[key] = Operation("tcp", sim.now, detail={"dst": dst, "port": port})
        op.timer = sim.set_timer(self, TCP_TIMEOUT_US, ("op-timeout", key))
        self.send_ip(sim, Ipv4Packet(self.stack.address, dst, TcpSegment(TcpKind.SYN, sport, port)))
        return key

    def start_dhcp(self, sim):
        if self.config_mode != "dhcp":
            raise DeviceError(f"{self.name} is statically addressed")
        xid = sim.next_xid()
        key = ("dhcp", xid)
        self.ops[key] = Operation("dhcp", sim.now, detail={"attempts": 0})
        self._dhcp_key = key
        self.stack.config = None
        self.stack.arp_cache.clear()
        self._dhcp_attempt(sim, key)
        return key

    def _dhcp_broadcast(self, sim, msg: DhcpMessage) -> None:
        packet = Ipv4Packet(ZERO_IP, BROADCAST_IP, UdpDatagram(DHCP_CLIENT_PORT, DHCP_SERVER_PORT, msg))
        self._emit(sim, None, [EthernetFrame(self.mac, BROADCAST_MAC, packet)])

    def _dhcp_attempt(self, sim, key):
        op = self.ops[key]
        op.detail["attempts"] += 1
        self.dhcp_state = "discovering"
        op.timer = sim.set_timer(self, DHCP_RETRY_US, ("dhcp-retry", key))
        self._dhcp_broadcast(sim, DhcpMessage(DhcpKind.DISCOVER, self.mac, key[1]))

    def on_timer(self, sim, token):
        kind = token[0]
        if kind == "arp":
            super().on_timer(sim, token)
            return
        key = token[1]
        op = self.ops.get(key)
        if op is None or op.done:
            return
        op.timer = None
        if kind == "op-timeout":
            self._finish(sim, key, "timeout")
        elif kind == "dns-retry":
            if op.detail["attempts"] < DNS_ATTEMPTS:
                self._dns_attempt(sim, key)
            else:
                self._finish(sim, key, "timeout")
        elif kind == "dhcp-retry":
            if op.detail["attempts"] < DHCP_ATTEMPTS:
                self._dhcp_attempt(sim, key)
            else:
                self.dhcp_state = "idle"
                self._finish(sim, key, "no-offer")

    def _arp_failed(self, sim, key, packets):
        super()._arp_failed(sim, key, packets)
        for p in packets:
            self._fail_for(sim, p, "unreachable")

    def _fail_for(self, sim, packet: Ipv4Packet, status: str) -> None:
        inner = packet.payload
        if isinstance(inner, IcmpMessage):
            self._finish(sim, ("icmp", inner.ident, inner.sequence), status)
        elif isinstance(inner, UdpDatagram):
            self._finish(sim, ("udp", inner.src_port), status)
        elif isinstance(inner, TcpSegment):
            self._finish(sim, ("tcp", inner.src_port), status)

    # receive path

    def receive(self, sim, port, frame):
        if frame.vlan_tag is not None:
            sim.count("host-tagged-drop")
            return
        if not (frame.dst.is_broadcast or frame.dst == self.mac):
            return
        payload = frame.payload
        if isinstance(payload, ArpMessage):
            self._arp_input(sim, None, payload)
            return
        own = self.stack.address
        inner = payload.payload
        if isinstance(inner, UdpDatagram) and inner.dst_port == DHCP_CLIENT_PORT:
            self._dhcp_input(sim, inner.payload)
            return
        if own is None or payload.dst != own:
            return
        if isinstance(inner, IcmpMessage):
            self._icmp_input(sim, payload, inner)
        elif isinstance(inner, UdpDatagram):
            self._udp_input(sim, payload, inner)
        else:
            self._tcp_input(sim, payload, inner)

    def _icmp_input(self, sim, packet, msg):
        if msg.kind is IcmpKind.ECHO_REQUEST:
            sim.note("echo-rx", host=self.name, src=packet.src, ttl=packet.ttl,
                     ident=msg.ident, seq=msg.sequence)
            reply = Ipv4Packet(packet.dst, packet.src,
                               IcmpMessage(IcmpKind.ECHO_REPLY, msg.ident, msg.sequence))
            self.send_ip(sim, reply)
        elif msg.kind is IcmpKind.ECHO_REPLY:
            self._finish(sim, ("icmp", msg.ident, msg.sequence), "ok",
                         reply_ttl=packet.ttl, reply_src=packet.src)
        elif msg.quoted is not None:
            self._fail_for(sim, msg.quoted, "unreachable")

    def _udp_input(self, sim, packet, dgram):
        app = dgram.payload
        if dgram.dst_port == DNS_PORT and self.zone is not None and isinstance(app, DnsMessage):
            answer = self.zone.handle(app)
            self.send_ip(sim, Ipv4Packet(packet.dst, packet.src,
                                         UdpDatagram(DNS_PORT, dgram.src_port, answer)))
            return
        key = ("udp", dgram.dst_port)
        op = self.ops.get(key)
        if op is not None and isinstance(app, DnsMessage) and app.transaction_id == op.detail["xid"]:
            if app.kind is DnsKind.ANSWER:
                self._finish(sim, key, "answer", address=app.address)
            elif app.kind is DnsKind.NAME_ERROR:
                self._finish(sim, key, "name-error")
            return
        if op is None and _may_report(packet):
            err = _icmp_error(IcmpKind.DEST_UNREACHABLE, packet.dst, packet)
            self.send_ip(sim, err)

    def _tcp_input(self, sim, packet, seg):
        if seg.kind is TcpKind.SYN:
            kind = TcpKind.SYN_ACK if seg.dst_port in self.services else TcpKind.RST
            self.send_ip(sim, Ipv4Packet(packet.dst, packet.src,
                                         TcpSegment(kind, seg.dst_port, seg.src_port)))
        elif seg.kind is TcpKind.SYN_ACK:
            key = ("tcp", seg.dst_port)
            op = self.ops.get(key)
            if op is not None and not op.done:
                self.send_ip(sim, Ipv4Packet(packet.dst, packet.src,
                                             TcpSegment(TcpKind.ACK, seg.dst_port, seg.src_port)))
                self._finish(sim, key, "connected")
        elif seg.kind is TcpKind.RST:
            self._finish(sim, ("tcp", seg.dst_port), "refused")
        elif seg.kind is TcpKind.ACK and seg.dst_port in self.services:
            sim.note("tcp-established", host=self.name, src=packet.src, sport=seg.src_port,
                     port=seg.dst_port)

    def _dhcp_input(self, sim, msg):
        key = self._dhcp_key
        if not isinstance(msg, DhcpMessage) or key is None or msg.client_mac != self.mac:
            return
        if msg.transaction_id != key[1]:
            return
        if msg.kind is DhcpKind.OFFER and self.dhcp_state == "discovering":
            self.dhcp_state = "requesting"
            self._dhcp_broadcast(sim, DhcpMessage(DhcpKind.REQUEST, self.mac, key[1], msg.address,
                                                  server_id=msg.server_id))
        elif msg.kind is DhcpKind.ACK and self.dhcp_state == "requesting":
            self.stack.config = IpInterfaceConfig(msg.address, msg.prefix_length,
                                                  msg.gateway, msg.dns_server)
            self.dhcp_state = "bound"
            self._finish(sim, key, "bound", config=self.stack.config)
        elif msg.kind is DhcpKind.NAK and self.dhcp_state == "requesting":
            self.dhcp_state = "discovering"
            self._dhcp_broadcast(sim, DhcpMessage(DhcpKind.DISCOVER, self.mac, key[1]))


# -- wireless gateway -----------------------------------------------------------


class WirelessGateway(L3Device):
    """Consumer wireless router in gateway mode (NAT + WAN uplink) or access-point mode.

    LAN ports, radio ports (one per associated client) and the local stack
    sit on an internal learning bridge. In access-point mode the ``wan``
    port joins that bridge too.
    """

    kind = "wgw"

    def __init__(self, name: str, mode: str, ssid: str, lan_mac: MacAddress,
                 lan_config: IpInterfaceConfig, wan_mac: Optional[MacAddress] = None,
                 wan_config: Optional[IpInterfaceConfig] = None, nat_enabled: bool = False,
                 dhcp: Optional[DhcpServer] = None):
        super().__init__(name)
        if mode == "gateway" and (wan_config is None or not nat_enabled or wan_mac is None):
            raise DeviceError(f"{name}: gateway mode requires a wan config and nat")
        if mode == "ap" and (wan_config is not None or nat_enabled):
            raise DeviceError(f"{name}: access-point mode forbids nat and wan config")
        if mode not in ("gateway", "ap"):
            raise DeviceError(f"{name}: unknown mode {mode!r}")
        self.mode = mode
        self.ssid = ssid
        self.lan = IpStack(lan_mac, lan_config)
        self.wan = IpStack(wan_mac, wan_config) if wan_config is not None else None
        self.nat_enabled = nat_enabled
        self.nat_table: dict[tuple[IpProto, Ipv4Address, int], int] = {}
        self._nat_reverse: dict[tuple[IpProto, int], tuple[Ipv4Address, int]] = {}
        self._nat_next = NAT_PORT_BASE
        self.nat_drops = 0
        self.dhcp = dhcp
        self.associated_clients: set = set()
        ports = [LOCAL, *WGW_LAN_PORTS]
        if mode == "ap":
            ports.append("wan")
        self.bridge = LearningBridge(ports)
        self.bridge.mac_table[lan_mac] = LOCAL

    @property
    def lan_config(self) -> IpInterfaceConfig:
        return self.lan.config

    @property
    def wan_config(self) -> Optional[IpInterfaceConfig]:
        return None if self.wan is None else self.wan.config

    def attach(self, port: str) -> None:
        super().attach(port)
        self.bridge.link_up = self.link_up

    def associate(self, client: str, mac: MacAddress) -> str:
        port = f"radio.{client}"
        self.bridge.add_port(port)
        self.associated_clients.add(mac)
        return port

    # NAT

    @staticmethod
    def _flow_id(packet: Ipv4Packet, outbound: bool) -> Optional[int]:
        inner = packet.payload
        if isinstance(inner, IcmpMessage):
            return None if inner.is_error else inner.ident
        return inner.src_port if outbound else inner.dst_port

    @staticmethod
    def _with_id(packet: Ipv4Packet, value: int, outbound: bool) -> Ipv4Packet:
        inner = packet.payload
        if isinstance(inner, IcmpMessage):
            inner = replace(inner, ident=value)
        elif outbound:
            inner = replace(inner, src_port=value)
        else:
            inner = replace(inner, dst_port=value)
        return replace(packet, payload=inner)

    def nat_outbound(self, packet: Ipv4Packet) -> Ipv4Packet:
        if self.mode != "gateway":
            raise DeviceError(f"{self.name}: nat only in gateway mode")
        flow = self._flow_id(packet, outbound=True)
        if flow is None:
            raise DeviceError("icmp errors are not translated outbound")
        key = (packet.protocol, packet.src, flow)
        translated = self.nat_table.get(key)
        if translated is None:
            if self._nat_next > NAT_PORT_LIMIT:
                raise NatTableFull(f"{self.name}: nat table full")
            translated = self._nat_next
            self._nat_next += 1
            self.nat_table[key] = translated
            self._nat_reverse[(packet.protocol, translated)] = (packet.src, flow)
        out = self._with_id(packet, translated, outbound=True)
        return replace(out, src=self.wan.address)

    def nat_inbound(self, packet: Ipv4Packet) -> Optional[Ipv4Packet]:
        if self.mode != "gateway":
            raise DeviceError(f"{self.name}: nat only in gateway mode")
        inner = packet.payload
        if isinstance(inner, IcmpMessage) and inner.is_error:
            quoted = inner.quoted
            if quoted is None or quoted.src != self.wan.address:
                self.nat_drops += 1
                return None
            hit = self._nat_reverse.get((quoted.protocol, self._flow_id(quoted, outbound=True)))
            if hit is None:
                self.nat_drops += 1
                return None
            inside, flow = hit
            restored = replace(self._with_id(quoted, flow, outbound=True), src=inside)
            ident = flow if isinstance(restored.payload, IcmpMessage) else inner.ident
            msg = replace(inner, quoted=restored, ident=ident)
            return replace(packet, dst=inside, payload=msg)
        if isinstance(inner, IcmpMessage) and inner.kind is not IcmpKind.ECHO_REPLY:
            self.nat_drops += 1
            return None
        hit = self._nat_reverse.get((packet.protocol, self._flow_id(packet, outbound=False)))
        if hit is None or packet.dst != self.wan.address:
            self.nat_drops += 1
            return None
        inside, flow = hit
        return replace(self._with_id(packet, flow, outbound=False), dst=inside)

    # plumbing

    def _stack(self, key):
        return self.lan if key == "lan" else self.wan

    def _emit(self, sim, key, frames):
        if key == "wan":
            for f in frames:
                sim.transmit(self, "wan", f)
            return
        for f in frames:
            for port, out in self.bridge.ingress(LOCAL, f):
                sim.transmit(self, port, out)

    def _send_lan(self, sim, packet: Ipv4Packet, next_hop: Ipv4Address) -> None:
        self._send(sim, "lan", packet, next_hop)

    def _send_wan(self, sim, packet: Ipv4Packet) -> None:
        cfg = self.wan.config
        if same_subnet(packet.dst, cfg.address, cfg.prefix_length):
            hop = packet.dst
        elif cfg.gateway is not None:
            hop = cfg.gateway
        else:
            sim.count("wgw-no-route")
            return
        self._send(sim, "wan", packet, hop)

    def _reply_echo(self, sim, packet, msg, key):
        reply = Ipv4Packet(packet.dst, packet.src,
                           IcmpMessage(IcmpKind.ECHO_REPLY, msg.ident, msg.sequence))
        if key == "wan":
            self._send_wan(sim, reply)
        elif same_subnet(packet.src, self.lan.address, self.lan.config.prefix_length):
            self._send_lan(sim, reply, packet.src)

    def receive(self, sim, port, frame):
        if self.mode == "gateway" and port == "wan":
            self._wan_input(sim, frame)
            return
        for egress, f in self.bridge.ingress(port, frame):
            if egress == LOCAL:
                self._local_input(sim, f)
            else:
                sim.transmit(self, egress, f)

    def _local_input(self, sim, frame):
        if not (frame.dst.is_broadcast or frame.dst == self.lan.mac):
            return
        payload = frame.payload
        if isinstance(payload, ArpMessage):
            self._arp_input(sim, "lan", payload)
            return
        packet, inner = payload, payload.payload
        if isinstance(inner, UdpDatagram) and inner.dst_port == DHCP_SERVER_PORT:
            if self.dhcp is not None and isinstance(inner.payload, DhcpMessage):
                before = len(self.dhcp.exhaustion_events)
                reply = self.dhcp.handle(inner.payload)
                if len(self.dhcp.exhaustion_events) > before:
                    sim.count("dhcp-pool-exhausted")
                    sim.note("dhcp-pool-exhausted", server=self.name, mac=inner.payload.client_mac)
                if reply is not None:
                    out = Ipv4Packet(self.lan.address, reply.address or BROADCAST_IP,
                                     UdpDatagram(DHCP_SERVER_PORT, DHCP_CLIENT_PORT, reply))
                    self._emit(sim, "lan", [self.lan.frame(reply.client_mac, out)])
            return
        if packet.dst == self.lan.address:
            if isinstance(inner, IcmpMessage) and inner.kind is IcmpKind.ECHO_REQUEST:
                self._reply_echo(sim, packet, inner, "lan")
            return
        if self.mode != "gateway" or frame.dst != self.lan.mac or packet.dst == BROADCAST_IP:
            return
        if packet.dst in self.lan.config.subnet:
            return
        try:
            forwarded = decrement_ttl(packet)
        except TtlExpired:
            if _may_report(packet):
                err = _icmp_error(IcmpKind.TTL_EXCEEDED, self.lan.address, packet)
                self._send_lan(sim, err, packet.src)
            return
        if self._flow_id(forwarded, outbound=True) is None:
            sim.count("nat-untranslatable")
            return
        self._send_wan(sim, self.nat_outbound(forwarded))

    def _wan_input(self, sim, frame):
        if frame.vlan_tag is not None:
            sim.count("wgw-tagged-drop")
            return
        if not (frame.dst.is_broadcast or frame.dst == self.wan.mac):
            return
        payload = frame.payload
        if isinstance(payload, ArpMessage):
            self._arp_input(sim, "wan", payload)
            return
        packet, inner = payload, payload.payload
        if packet.dst != self.wan.address:
            # unicast to our MAC but aimed past us at the inside: never forwarded
            if not frame.dst.is_broadcast:
                self.nat_drops += 1
                sim.count("nat-drop")
            return
        if isinstance(inner, IcmpMessage) and inner.kind is IcmpKind.ECHO_REQUEST:
            self._reply_echo(sim, packet, inner, "wan")
            return
        inside = self.nat_inbound(packet)
        if inside is None:
            sim.count("nat-drop")
            return
        try:
            inside = decrement_ttl(inside)
        except TtlExpired:
            sim.count("ttl-expired")
            return
        self._send_lan(sim, inside, inside.dst)
