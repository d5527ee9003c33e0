"""IPv4, MAC and VLAN primitives.

Addresses are stored as plain unsigned integers wrapped in small frozen
dataclasses so they hash, order and print predictably.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .errors import AddressError

_OCTET = re.compile(r"0|[1-9][0-9]{0,2}")
_MAC = re.compile(r"[0-9a-fA-F]{2}(?::[0-9a-fA-F]{2}){5}")

AUTO_MAC_OUI = 0x020000
AUTO_MAC_LIMIT = 1 << 24


@dataclass(frozen=True, order=True, slots=True)
class Ipv4Address:
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= 0xFFFFFFFF:
            raise AddressError(f"ipv4 value out of range: {self.value}")

    def __str__(self) -> str:
        v = self.value
        return f"{v >> 24}.{(v >> 16) & 0xFF}.{(v >> 8) & 0xFF}.{v & 0xFF}"

    def __repr__(self) -> str:
        return f"Ipv4Address({self})"

    @classmethod
    def parse(cls, text: str) -> "Ipv4Address":
        return parse_ipv4(text)


ZERO_IP = Ipv4Address(0)
BROADCAST_IP = Ipv4Address(0xFFFFFFFF)


def parse_ipv4(text: str) -> Ipv4Address:
    """Parse a strict dotted quad. Leading zeros are rejected."""
    parts = text.split(".")
    if len(parts) != 4:
        raise AddressError(f"malformed address {text!r}: expected 4 octets")
    value = 0
    for part in parts:
        if not _OCTET.fullmatch(part):
            raise AddressError(f"malformed address {text!r}: bad octet {part!r}")
        octet = int(part)
        if octet > 255:
            raise AddressError(f"malformed address {text!r}: octet {octet} > 255")
        value = (value << 8) | octet
    return Ipv4Address(value)


def _check_prefix(prefix_length: int) -> None:
    if not 0 <= prefix_length <= 32:
        raise AddressError(f"prefix length out of range: {prefix_length}")


def prefix_mask(prefix_length: int) -> int:
    _check_prefix(prefix_length)
    return (0xFFFFFFFF << (32 - prefix_length)) & 0xFFFFFFFF


def network_address(addr: Ipv4Address, prefix_length: int) -> Ipv4Address:
    return Ipv4Address(addr.value & prefix_mask(prefix_length))


def usable_host_count(prefix_length: int) -> int:
    _check_prefix(prefix_length)
    return max(2 ** (32 - prefix_length) - 2, 0)


def same_subnet(a: Ipv4Address, b: Ipv4Address, prefix_length: int) -> bool:
    mask = prefix_mask(prefix_length)
    return (a.value & mask) == (b.value & mask)


@dataclass(frozen=True, order=True, slots=True)
class Cidr:
    network: Ipv4Address
    prefix_length: int

    def __post_init__(self):
        _check_prefix(self.prefix_length)
        if self.network.value & ~prefix_mask(self.prefix_length) & 0xFFFFFFFF:
            raise AddressError(f"host bits set in network {self.network}/{self.prefix_length}")

    def __str__(self) -> str:
        return f"{self.network}/{self.prefix_length}"

    @classmethod
    def of(cls, addr: Ipv4Address, prefix_length: int) -> "Cidr":
        """The subnet containing ``addr``."""
        return cls(network_address(addr, prefix_length), prefix_length)

    @classmethod
    def parse(cls, text: str) -> "Cidr":
        addr, prefix = parse_interface(text)
        return cls(addr, prefix)

    def __contains__(self, addr: Ipv4Address) -> bool:
        return same_subnet(addr, self.network, self.prefix_length)


def broadcast_address(cidr: Cidr) -> Ipv4Address:
    host_bits = ~prefix_mask(cidr.prefix_length) & 0xFFFFFFFF
    return Ipv4Address(cidr.network.value | host_bits)


def parse_interface(text: str) -> tuple[Ipv4Address, int]:
    """Parse ``a.b.c.d/p`` without requiring zero host bits."""
    addr, sep, prefix = text.partition("/")
    if not sep or not re.fullmatch(r"0|[1-9][0-9]?", prefix):
        raise AddressError(f"malformed prefix in {text!r}")
    prefix_length = int(prefix)
    _check_prefix(prefix_length)
    return parse_ipv4(addr), prefix_length


@dataclass(frozen=True, order=True, slots=True)
class MacAddress:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < (1 << 48):
            raise AddressError(f"mac value out of range: {self.value}")

    def __str__(self) -> str:
        return ":".join(f"{(self.value >> s) & 0xFF:02x}" for s in range(40, -1, -8))

    def __repr__(self) -> str:
        return f"MacAddress({self})"

    @property
    def is_broadcast(self) -> bool:
        return self.value == 0xFFFFFFFFFFFF

    @property
    def locally_administered(self) -> bool:
        return bool((self.value >> 40) & 0x02)

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        if not _MAC.fullmatch(text):
            raise AddressError(f"malformed mac address {text!r}")
        return cls(int(text.replace(":", ""), 16))


BROADCAST_MAC = MacAddress(0xFFFFFFFFFFFF)
ZERO_MAC = MacAddress(0)


def next_auto_mac(counter: int) -> MacAddress:
    """Deterministic synthetic MAC: 02:00:00 followed by the 24-bit counter."""
    if not 0 <= counter < AUTO_MAC_LIMIT:
        raise AddressError(f"auto mac counter exhausted: {counter}")
    return MacAddress((AUTO_MAC_OUI << 24) | counter)


VlanId = int


def check_vlan(vid: int) -> int:
    if not 1 <= vid <= 4094:
        raise AddressError(f"vlan id out of range: {vid}")
    return vid


@dataclass(frozen=True, slots=True)
class IpInterfaceConfig:
    address: Ipv4Address
    prefix_length: int
    gateway: Optional[Ipv4Address] = None
    dns_server: Optional[Ipv4Address] = None

    def __post_init__(self):
        _check_prefix(self.prefix_length)
        if self.gateway is not None and not same_subnet(
            self.gateway, self.address, self.prefix_length
        ):
            raise AddressError(
                f"gateway {self.gateway} outside {self.address}/{self.prefix_length}"
            )

    @property
    def subnet(self) -> Cidr:
        return Cidr.of(self.address, self.prefix_length)

    def __str__(self) -> str:
        return f"{self.address}/{self.prefix_length}"
