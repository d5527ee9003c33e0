"""Deterministic simulator and verifier for a VLAN-segmented departmental intranet."""

from .addressing import Cidr, IpInterfaceConfig, Ipv4Address, MacAddress, parse_ipv4
from .engine import Network
from .scenario import (
    ScenarioDocument,
    build_network,
    bundled_ice_scenario,
    format_scenario,
    parse_expectations,
    parse_scenario,
    validate_scenario,
)
from .verify import (
    check_vlan_isolation,
    compute_reachability,
    dhcp_pool_report,
    oracle_reachability,
    run_expectations,
)

__version__ = "0.1.0"

__all__ = [
    "Cidr", "IpInterfaceConfig", "Ipv4Address", "MacAddress", "parse_ipv4", "Network",
    "ScenarioDocument", "build_network", "bundled_ice_scenario", "format_scenario",
    "parse_expectations", "parse_scenario", "validate_scenario", "check_vlan_isolation",
    "compute_reachability", "dhcp_pool_report", "oracle_reachability", "run_expectations",
]
