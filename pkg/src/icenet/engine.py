"""Deterministic discrete-event core.

Events are ordered by ``(time_us, sequence)``; the sequence number is a
global counter so events scheduled for the same instant run in insertion
order.  A network instance is single-threaded and holds no global state,
so separate instances can run side by side.
"""

from __future__ import annotations

import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .addressing import Ipv4Address, parse_ipv4
from .devices import SECOND_US, Device, Host
from .errors import AddressError, DeviceError, SimulationError, TimeInPast
from .protocol import EthernetFrame, format_trace_line

log = logging.getLogger(__name__)

WIRED_LATENCY_US = 10
WIRELESS_LATENCY_US = 100
INJECTION_BUDGET_US = 60 * SECOND_US


@dataclass
class FrameDelivery:
    link: "LinkChannel"
    side: int  # index of the receiving endpoint
    frame: EthernetFrame


@dataclass
class TimerFired:
    device: Device
    token: object


@dataclass
class Injection:
    kind: str
    params: dict
    run: Callable[[], None]


@dataclass(order=True)
class SimEvent:
    time_us: int
    sequence: int
    action: Union[FrameDelivery, TimerFired, Injection] = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


@dataclass
class LinkChannel:
    a: tuple[Device, str]
    b: tuple[Device, str]
    latency_us: int = WIRED_LATENCY_US
    up: bool = True

    def endpoint(self, side: int) -> tuple[Device, str]:
        return self.a if side == 0 else self.b

    def __str__(self):
        return f"{self.a[0].name}:{self.a[1]}<->{self.b[0].name}:{self.b[1]}"


@dataclass
class SimulationSummary:
    events: int
    frames_sent: int
    frames_delivered: int
    frames_dropped: int
    in_flight: int
    clock_us: int
    time_limit_exceeded: bool
    counters: dict

    @property
    def errors(self) -> int:
        return sum(self.counters.values())

    def as_lines(self) -> list[str]:
        lines = [
            f"events={self.events}",
            f"frames_sent={self.frames_sent}",
            f"frames_delivered={self.frames_delivered}",
            f"frames_dropped={self.frames_dropped}",
            f"in_flight={self.in_flight}",
            f"clock_us={self.clock_us}",
            f"time_limit_exceeded={int(self.time_limit_exceeded)}",
            f"errors={self.errors}",
        ]
        lines += [f"count.{k}={v}" for k, v in sorted(self.counters.items())]
        return lines


@dataclass
class ProbeOutcome:
    sequence: int
    status: str  # ok | timeout | unreachable
    rtt_us: Optional[int] = None
    reply_ttl: Optional[int] = None
    request_ttl: Optional[int] = None


@dataclass
class PingResult:
    src: str
    dst: str
    address: Optional[Ipv4Address]
    probes: list = field(default_factory=list)
    error: Optional[str] = None  # resolve-failed | host-unreachable | timeout

    @property
    def success(self) -> bool:
        return any(p.status == "ok" for p in self.probes)


@dataclass
class LeaseResult:
    host: str
    address: Optional[Ipv4Address]
    config: object = None
    error: Optional[str] = None  # no-offer

    @property
    def bound(self) -> bool:
        return self.address is not None


@dataclass
class ResolveResult:
    host: str
    name: str
    status: str  # answer | name-error | resolve-failed
    address: Optional[Ipv4Address] = None
    transaction_id: Optional[int] = None


class Network:
    """A built network: devices, links, clock, event queue and trace log."""

    def __init__(self, trace: bool = False):
        self.devices: dict[str, Device] = {}
        self.links: list[LinkChannel] = []
        self._ports: dict[tuple[str, str], tuple[LinkChannel, int]] = {}
        self.now = 0
        self._queue: list[SimEvent] = []
        self._sequence = 0
        self._xid = 0
        self.trace: Optional[list[str]] = [] if trace else None
        self.counters: Counter = Counter()
        self.notes: list[tuple[str, dict]] = []
        self.frames_sent = 0
        self.frames_delivered = 0
        self.frames_dropped = 0
        self.events_executed = 0
        self.doc = None

    # construction

    def add_device(self, device: Device) -> Device:
        if device.name in self.devices:
            raise SimulationError(f"duplicate device {device.name}")
        self.devices[device.name] = device
        return device

    def connect(self, a: Device, port_a: str, b: Device, port_b: str,
                latency_us: int = WIRED_LATENCY_US) -> LinkChannel:
        for dev, port in ((a, port_a), (b, port_b)):
            if (dev.name, port) in self._ports:
                raise SimulationError(f"{dev.name}:{port} already linked")
        link = LinkChannel((a, port_a), (b, port_b), latency_us)
        self.links.append(link)
        self._ports[(a.name, port_a)] = (link, 1)
        self._ports[(b.name, port_b)] = (link, 0)
        a.attach(port_a)
        b.attach(port_b)
        return link

    def link_at(self, device: str, port: str) -> Optional[LinkChannel]:
        hit = self._ports.get((device, port))
        return None if hit is None else hit[0]

    @property
    def hosts(self) -> list[Host]:
        return [d for d in self.devices.values() if isinstance(d, Host)]

    def host(self, name: str) -> Host:
        dev = self.devices.get(name)
        if not isinstance(dev, Host):
            raise DeviceError(f"no host named {name!r}")
        return dev

    # event core

    def schedule(self, event: SimEvent) -> SimEvent:
        if event.time_us < self.now:
            raise TimeInPast(f"event at {event.time_us} before clock {self.now}")
        heapq.heappush(self._queue, event)
        return event

    def at(self, time_us: int, action) -> SimEvent:
        self._sequence += 1
        return self.schedule(SimEvent(time_us, self._sequence, action))

    def set_timer(self, device: Device, delay_us: int, token) -> SimEvent:
        return self.at(self.now + delay_us, TimerFired(device, token))

    def cancel(self, event: SimEvent) -> None:
        event.cancelled = True

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] += n

    def note(self, kind: str, **data) -> None:
        self.notes.append((kind, data))

    def next_xid(self) -> int:
        self._xid += 1
        return self._xid

    def _log(self, device: Device, port: str, direction: str, frame: EthernetFrame) -> None:
        if self.trace is not None:
            self.trace.append(format_trace_line(self.now, device.name, port, direction, frame))

    def transmit(self, device: Device, port: str, frame: EthernetFrame, label: Optional[str] = None) -> None:
        self.frames_sent += 1
        self._log(device, label or port, "TX", frame)
        hit = self._ports.get((device.name, port))
        if hit is None or not hit[0].up:
            self.frames_dropped += 1
            self.count("link-drop")
            return
        link, side = hit
        self.at(self.now + link.latency_us, FrameDelivery(link, side, frame))

    def inject_frame(self, device: str, port: str, frame: EthernetFrame) -> None:
        """Hand ``frame`` to ``device`` as if it arrived on ``port`` right now."""
        dev = self.devices[device]
        self.at(self.now, Injection("frame", {"device": device, "port": port},
                                    lambda: dev.receive(self, port, frame)))

    def in_flight(self) -> int:
        return sum(1 for e in self._queue
                   if not e.cancelled and isinstance(e.action, FrameDelivery))

    def _execute(self, action) -> None:
        if isinstance(action, FrameDelivery):
            dev, port = action.link.endpoint(action.side)
            if not action.link.up:
                self.frames_dropped += 1
                self.count("link-drop")
                return
            self.frames_delivered += 1
            self._log(dev, dev.trace_port(port, action.frame), "RX", action.frame)
            dev.receive(self, port, action.frame)
        elif isinstance(action, TimerFired):
            action.device.on_timer(self, action.token)
        else:
            action.run()

    def run_until_idle(self, max_time_us: Optional[int] = None) -> SimulationSummary:
        executed = 0
        exceeded = False
        queue = self._queue
        while queue:
            event = queue[0]
            if event.cancelled:
                heapq.heappop(queue)
                continue
            if max_time_us is not None and event.time_us > max_time_us:
                exceeded = True
                log.warning("time limit %d reached with %d events queued", max_time_us, len(queue))
                break
            heapq.heappop(queue)
            self.now = event.time_us
            self._execute(event.action)
            executed += 1
        self.events_executed += executed
        return SimulationSummary(
            events=executed,
            frames_sent=self.frames_sent,
            frames_delivered=self.frames_delivered,
            frames_dropped=self.frames_dropped,
            in_flight=self.in_flight(),
            clock_us=self.now,
            time_limit_exceeded=exceeded,
            counters=dict(self.counters),
        )

    def summary(self) -> SimulationSummary:
        return SimulationSummary(self.events_executed, self.frames_sent, self.frames_delivered,
                                 self.frames_dropped, self.in_flight(), self.now, False,
                                 dict(self.counters))

    def _run_injection(self, kind: str, params: dict, start: Callable[[], object]):
        box = {}

        def run():
            box["key"] = start()

        self.at(self.now, Injection(kind, params, run))
        summary = self.run_until_idle(self.now + INJECTION_BUDGET_US)
        if summary.time_limit_exceeded:
            self.count("time-limit-exceeded")
        return box.get("key")

    # injectors

    def _address_of(self, host: Host, dst: str) -> tuple[Optional[Ipv4Address], Optional[str]]:
        if isinstance(dst, Ipv4Address):
            return dst, None
        target = self.devices.get(dst)
        if isinstance(target, Host):
            # a simulated host name is shorthand for its current address
            if not target.bound:
                return None, "host-unreachable"
            return target.current_config.address, None
        try:
            return parse_ipv4(dst), None
        except AddressError:
            res = self.inject_dns_query(host.name, dst)
            if res.status != "answer":
                return None, "resolve-failed"
            return res.address, None

    def inject_ping(self, src: str, dst: Union[str, Ipv4Address], count: int = 1) -> PingResult:
        host = self.host(src)
        if not host.bound:
            return PingResult(src, str(dst), None, error="host-unreachable")
        address, error = self._address_of(host, dst)
        result = PingResult(src, str(dst), address, error=error)
        if address is None:
            return result
        ident = host.next_ident()
        for seq in range(1, count + 1):
            mark = len(self.notes)
            key = self._run_injection("ping", {"src": src, "dst": str(address), "seq": seq},
                                      lambda: host.start_ping(self, address, ident, seq))
            op = host.ops.pop(key)
            arrivals = [d for k, d in self.notes[mark:] if k == "echo-rx"]
            outcome = ProbeOutcome(seq, op.status if op.status != "pending" else "timeout")
            if op.status == "ok":
                outcome.rtt_us = op.finished_us - op.started_us
                outcome.reply_ttl = op.detail["reply_ttl"]
                if outcome.rtt_us > 2 * SECOND_US:
                    outcome.status = "timeout"
            if arrivals:
                outcome.request_ttl = arrivals[0]["ttl"]
            result.probes.append(outcome)
        if not result.success:
            statuses = {p.status for p in result.probes}
            result.error = "host-unreachable" if "unreachable" in statuses else "timeout"
        return result

    def inject_dhcp_boot(self, host_name: str) -> LeaseResult:
        host = self.host(host_name)
        if host.config_mode != "dhcp":
            raise DeviceError(f"{host_name} is statically addressed")
        key = self._run_injection("dhcp-boot", {"host": host_name}, lambda: host.start_dhcp(self))
        op = host.ops.pop(key)
        if op.status != "bound":
            return LeaseResult(host_name, None, error="no-offer")
        cfg = op.detail["config"]
        return LeaseResult(host_name, cfg.address, cfg)

    def inject_dns_query(self, host_name: str, fqdn: str) -> ResolveResult:
        host = self.host(host_name)
        key = self._run_injection("dns", {"host": host_name, "name": fqdn},
                                  lambda: host.start_dns(self, fqdn))
        op = host.ops.pop(key)
        xid = op.detail.get("xid")
        if op.status == "answer":
            return ResolveResult(host_name, fqdn.lower(), "answer", op.detail["address"], xid)
        if op.status == "name-error":
            return ResolveResult(host_name, fqdn.lower(), "name-error", None, xid)
        return ResolveResult(host_name, fqdn.lower(), "resolve-failed", None, xid)

    def inject_tcp_probe(self, host_name: str, dst: Union[str, Ipv4Address], port: int) -> str:
        host = self.host(host_name)
        if not host.bound:
            raise DeviceError(f"{host_name} has no address")
        address, error = self._address_of(host, dst)
        if address is None:
            return "unreachable"
        key = self._run_injection("tcp", {"host": host_name, "dst": str(address), "port": port},
                                  lambda: host.start_tcp(self, address, port))
        op = host.ops.pop(key)
        return op.status if op.status in ("connected", "refused") else "unreachable"

    def boot_dhcp_hosts(self) -> dict[str, LeaseResult]:
        """Boot every DHCP-mode host in declaration order."""
        return {h.name: self.inject_dhcp_boot(h.name) for h in self.hosts if h.config_mode == "dhcp"}

    def set_router_enabled(self, name: str, enabled: bool) -> None:
        self.devices[name].set_enabled(enabled)

    def write_trace(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.trace or ():
                fh.write(line + "\n")
