import ipaddress

import pytest
from hypothesis import given
from hypothesis import strategies as st

from icenet.addressing import (
    Cidr,
    IpInterfaceConfig,
    MacAddress,
    broadcast_address,
    network_address,
    next_auto_mac,
    parse_interface,
    parse_ipv4,
    same_subnet,
    usable_host_count,
)
from icenet.errors import AddressError

u32 = st.integers(0, 2**32 - 1)
prefixes = st.integers(0, 32)


@given(u32)
def test_dotted_quad_matches_stdlib(value):
    text = str(ipaddress.IPv4Address(value))
    addr = parse_ipv4(text)
    assert addr.value == value
    assert str(addr) == text


@given(u32, prefixes)
def test_network_and_broadcast_match_stdlib(value, p):
    ref = ipaddress.IPv4Network((value, p), strict=False)
    cidr = Cidr.of(parse_ipv4(str(ipaddress.IPv4Address(value))), p)
    assert str(cidr) == str(ref)
    assert broadcast_address(cidr).value == int(ref.broadcast_address)


@given(u32, u32, prefixes)
def test_same_subnet_matches_stdlib(a, b, p):
    net = ipaddress.IPv4Network((a, p), strict=False)
    expected = ipaddress.IPv4Address(b) in net
    assert same_subnet(parse_ipv4(str(ipaddress.IPv4Address(a))),
                       parse_ipv4(str(ipaddress.IPv4Address(b))), p) == expected


@pytest.mark.parametrize("p,count", [(24, 254), (30, 2), (31, 0), (32, 0), (16, 65534)])
def test_usable_host_count(p, count):
    assert usable_host_count(p) == count


@pytest.mark.parametrize("text", ["192.168.010.1", "256.1.1.1", "1.2.3", "1.2.3.4.5", "a.b.c.d", "", "1..2.3"])
def test_malformed_addresses_rejected(text):
    with pytest.raises(AddressError):
        parse_ipv4(text)


def test_parse_interface_and_cidr():
    assert parse_interface("192.168.10.12/24") == (parse_ipv4("192.168.10.12"), 24)
    with pytest.raises(AddressError):
        parse_interface("192.168.10.12/33")
    with pytest.raises(AddressError):
        Cidr.parse("192.168.10.12/24")  # host bits set
    assert parse_ipv4("192.168.10.99") in Cidr.parse("192.168.10.0/24")
    assert network_address(parse_ipv4("192.168.10.99"), 24) == parse_ipv4("192.168.10.0")


def test_interface_gateway_must_be_on_subnet():
    IpInterfaceConfig(parse_ipv4("192.168.10.21"), 24, parse_ipv4("192.168.10.1"))
    with pytest.raises(AddressError):
        IpInterfaceConfig(parse_ipv4("192.168.10.21"), 24, parse_ipv4("192.168.20.1"))


def test_mac_format_and_auto_sequence():
    mac = MacAddress.parse("02:AA:00:00:00:03".lower())
    assert str(mac) == "02:aa:00:00:00:03"
    assert mac.locally_administered
    assert str(next_auto_mac(0)) == "02:00:00:00:00:00"
    assert str(next_auto_mac(0x0102)) == "02:00:00:00:01:02"
    with pytest.raises(AddressError):
        next_auto_mac(2**24)
    with pytest.raises(AddressError):
        MacAddress.parse("02:00:00:00:00")
