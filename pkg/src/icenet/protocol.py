"""Message model for every simulated layer plus the trace line grammar.

Frames and packets are immutable. Forwarding devices build new values with
``dataclasses.replace`` rather than editing in place, so a frame seen by one
device can never change under another.

Trace lines have the fixed layout::

    t=<12 digits> <device>:<port> <RX|TX> <ARP|ICMP|UDP|TCP> <subkind>
      src=<ip|-> dst=<ip|-> smac=<mac> dmac=<mac> vlan=<id|-> ttl=<n|-> [extras]

(one line, single spaces). Extras by protocol, in this order:

* ARP:  ``sha=<mac> tha=<mac>``
* ICMP: ``id=<n> seq=<n>``
* UDP:  ``sport=<n> dport=<n>`` then for DHCP ``xid=<n> chaddr=<mac> yiaddr=<ip|->``
  and for DNS ``xid=<n> name=<fqdn> addr=<ip|->``
* TCP:  ``sport=<n> dport=<n>``
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from typing import Optional, Union

from .addressing import (
    Ipv4Address,
    MacAddress,
    check_vlan,
    parse_ipv4,
)
from .errors import FrameError, TtlExpired

DEFAULT_TTL = 64
DHCP_SERVER_PORT = 67
DHCP_CLIENT_PORT = 68
DNS_PORT = 53


class ArpKind(enum.Enum):
    REQUEST = "request"
    REPLY = "reply"


class IcmpKind(enum.Enum):
    ECHO_REQUEST = "echo-request"
    ECHO_REPLY = "echo-reply"
    TTL_EXCEEDED = "ttl-exceeded"
    DEST_UNREACHABLE = "dest-unreachable"


class DhcpKind(enum.Enum):
    DISCOVER = "discover"
    OFFER = "offer"
    REQUEST = "request"
    ACK = "ack"
    NAK = "nak"


class DnsKind(enum.Enum):
    QUERY = "query"
    ANSWER = "answer"
    NAME_ERROR = "name-error"


class TcpKind(enum.Enum):
    SYN = "syn"
    SYN_ACK = "syn-ack"
    ACK = "ack"
    RST = "rst"


@dataclass(frozen=True, slots=True)
class ArpMessage:
    kind: ArpKind
    sender_mac: MacAddress
    sender_ip: Ipv4Address
    target_mac: MacAddress
    target_ip: Ipv4Address


@dataclass(frozen=True, slots=True)
class IcmpMessage:
    kind: IcmpKind
    ident: int
    sequence: int
    # error messages carry the offending packet so the sender (and NAT) can match it
    quoted: Optional["Ipv4Packet"] = None

    @property
    def is_error(self) -> bool:
        return self.kind in (IcmpKind.TTL_EXCEEDED, IcmpKind.DEST_UNREACHABLE)


@dataclass(frozen=True, slots=True)
class DhcpMessage:
    kind: DhcpKind
    client_mac: MacAddress
    transaction_id: int
    address: Optional[Ipv4Address] = None
    prefix_length: Optional[int] = None
    gateway: Optional[Ipv4Address] = None
    dns_server: Optional[Ipv4Address] = None
    server_id: Optional[Ipv4Address] = None


@dataclass(frozen=True, slots=True)
class DnsMessage:
    kind: DnsKind
    name: str
    transaction_id: int
    address: Optional[Ipv4Address] = None

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.lower().rstrip("."))


@dataclass(frozen=True, slots=True)
class UdpDatagram:
    src_port: int
    dst_port: int
    payload: Union[DhcpMessage, DnsMessage]


@dataclass(frozen=True, slots=True)
class TcpSegment:
    kind: TcpKind
    src_port: int
    dst_port: int


class IpProto(enum.Enum):
    ICMP = "ICMP"
    UDP = "UDP"
    TCP = "TCP"


_PROTO_OF = {IcmpMessage: IpProto.ICMP, UdpDatagram: IpProto.UDP, TcpSegment: IpProto.TCP}


@dataclass(frozen=True, slots=True)
class Ipv4Packet:
    src: Ipv4Address
    dst: Ipv4Address
    payload: Union[IcmpMessage, UdpDatagram, TcpSegment]
    ttl: int = DEFAULT_TTL

    def __post_init__(self):
        if not 0 <= self.ttl <= 255:
            raise ValueError(f"ttl out of range: {self.ttl}")

    @property
    def protocol(self) -> IpProto:
        return _PROTO_OF[type(self.payload)]


@dataclass(frozen=True, slots=True)
class EthernetFrame:
    src: MacAddress
    dst: MacAddress
    payload: Union[ArpMessage, Ipv4Packet]
    vlan_tag: Optional[int] = None

    def __post_init__(self):
        if self.src.is_broadcast:
            raise FrameError("broadcast address used as frame source")
        if self.vlan_tag is not None:
            check_vlan(self.vlan_tag)


def tag_frame(frame: EthernetFrame, vlan: int) -> EthernetFrame:
    if frame.vlan_tag is not None:
        raise FrameError(f"frame already tagged with vlan {frame.vlan_tag}")
    return replace(frame, vlan_tag=check_vlan(vlan))


def untag_frame(frame: EthernetFrame) -> tuple[EthernetFrame, int]:
    if frame.vlan_tag is None:
        raise FrameError("frame is not tagged")
    return replace(frame, vlan_tag=None), frame.vlan_tag


def decrement_ttl(packet: Ipv4Packet) -> Ipv4Packet:
    if packet.ttl <= 1:
        raise TtlExpired(f"ttl expired for {packet.src} -> {packet.dst}")
    return replace(packet, ttl=packet.ttl - 1)


# -- trace lines -------------------------------------------------------------


def _ip(addr: Optional[Ipv4Address]) -> str:
    return "-" if addr is None else str(addr)


def _opt(value) -> str:
    return "-" if value is None else str(value)


def frame_summary(frame: EthernetFrame) -> tuple[str, str, Optional[Ipv4Address], Optional[Ipv4Address], Optional[int], list[tuple[str, str]]]:
    """Return (proto, subkind, src, dst, ttl, extras) for a frame."""
    payload = frame.payload
    if isinstance(payload, ArpMessage):
        extras = [("sha", str(payload.sender_mac)), ("tha", str(payload.target_mac))]
        return "ARP", payload.kind.value, payload.sender_ip, payload.target_ip, None, extras
    inner = payload.payload
    if isinstance(inner, IcmpMessage):
        extras = [("id", str(inner.ident)), ("seq", str(inner.sequence))]
        return "ICMP", inner.kind.value, payload.src, payload.dst, payload.ttl, extras
    if isinstance(inner, TcpSegment):
        extras = [("sport", str(inner.src_port)), ("dport", str(inner.dst_port))]
        return "TCP", inner.kind.value, payload.src, payload.dst, payload.ttl, extras
    app = inner.payload
    extras = [("sport", str(inner.src_port)), ("dport", str(inner.dst_port)),
              ("xid", str(app.transaction_id))]
    if isinstance(app, DhcpMessage):
        extras += [("chaddr", str(app.client_mac)), ("yiaddr", _ip(app.address))]
        subkind = "dhcp-" + app.kind.value
    else:
        extras += [("name", app.name), ("addr", _ip(app.address))]
        subkind = "dns-" + app.kind.value
    return "UDP", subkind, payload.src, payload.dst, payload.ttl, extras


def format_trace_line(time_us: int, device: str, port: str, direction: str,
                      frame: EthernetFrame) -> str:
    if direction not in ("RX", "TX"):
        raise ValueError(f"direction must be RX or TX, not {direction!r}")
    proto, subkind, src, dst, ttl, extras = frame_summary(frame)
    head = (
        f"t={time_us:012d} {device}:{port} {direction} {proto} {subkind} "
        f"src={_ip(src)} dst={_ip(dst)} smac={frame.src} dmac={frame.dst} "
        f"vlan={_opt(frame.vlan_tag)} ttl={_opt(ttl)}"
    )
    return head + "".join(f" {k}={v}" for k, v in extras)


@dataclass(frozen=True)
class TraceRecord:
    time_us: int
    device: str
    port: str
    direction: str
    proto: str
    subkind: str
    src: Optional[Ipv4Address]
    dst: Optional[Ipv4Address]
    smac: MacAddress
    dmac: MacAddress
    vlan: Optional[int]
    ttl: Optional[int]
    extras: tuple[tuple[str, str], ...] = ()

    def extra(self, key: str) -> Optional[str]:
        return dict(self.extras).get(key)


_LINE = re.compile(
    r"t=(?P<t>\d{12}) (?P<dev>[^\s:]+):(?P<port>\S+) (?P<dir>RX|TX) "
    r"(?P<proto>ARP|ICMP|UDP|TCP) (?P<sub>\S+) src=(?P<src>\S+) dst=(?P<dst>\S+) "
    r"smac=(?P<smac>\S+) dmac=(?P<dmac>\S+) vlan=(?P<vlan>\S+) ttl=(?P<ttl>\S+)"
    r"(?P<rest>(?: \S+=\S+)*)"
)


def parse_trace_line(line: str) -> TraceRecord:
    m = _LINE.fullmatch(line.rstrip("\n"))
    if m is None:
        raise ValueError(f"not a trace line: {line!r}")

    def ip(text):
        return None if text == "-" else parse_ipv4(text)

    def num(text):
        return None if text == "-" else int(text)

    extras = tuple(tuple(tok.split("=", 1)) for tok in m["rest"].split())
    return TraceRecord(
        time_us=int(m["t"]),
        device=m["dev"],
        port=m["port"],
        direction=m["dir"],
        proto=m["proto"],
        subkind=m["sub"],
        src=ip(m["src"]),
        dst=ip(m["dst"]),
        smac=MacAddress.parse(m["smac"]),
        dmac=MacAddress.parse(m["dmac"]),
        vlan=num(m["vlan"]),
        ttl=num(m["ttl"]),
        extras=extras,
    )
