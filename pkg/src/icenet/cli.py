"""Command-line entry point.

Exit codes: 0 success, 1 verification or validation failure, 2 usage or I/O error.
A scenario argument of ``@ice`` selects the bundled department scenario; an
expectations argument of ``@ice`` selects its bundled expectations.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from . import scenario as sc
from .devices import Router
from .engine import Network
from .errors import BuildRejected, DeviceError, ScenarioParseError
from .verify import (
    check_vlan_isolation,
    compute_reachability,
    dhcp_pool_report,
    oracle_reachability,
    run_expectations,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


class _Fail(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code


def _emit(lines) -> None:
    for line in lines:
        print(line)


def _load_doc(arg: str) -> sc.ScenarioDocument:
    try:
        text = sc.read_scenario_arg(arg)
    except OSError as exc:
        raise _Fail(EXIT_USAGE, f"cannot read scenario: {exc}")
    try:
        return sc.parse_scenario(text)
    except ScenarioParseError as exc:
        raise _Fail(EXIT_FAIL, f"parse-error {exc}")


def _build(arg: str, trace: bool = False) -> Network:
    doc = _load_doc(arg)
    try:
        return sc.build_network(doc, trace=trace)
    except BuildRejected as exc:
        for f in exc.report.errors:
            print(f, file=sys.stderr)
        raise _Fail(EXIT_FAIL, str(exc))


def _finish_trace(net: Network, path: Optional[str]) -> None:
    if path:
        try:
            net.write_trace(path)
        except OSError as exc:
            raise _Fail(EXIT_USAGE, f"cannot write trace: {exc}")


def _set_routers(net: Network, enabled: bool) -> None:
    for d in net.devices.values():
        if isinstance(d, Router):
            d.set_enabled(enabled)


# -- commands -------------------------------------------------------------------


def cmd_validate(args) -> int:
    doc = _load_doc(args.scenario)
    report = sc.validate_scenario(doc)
    _emit(str(f) for f in report.findings)
    print(f"errors={len(report.errors)}")
    print(f"warnings={len(report.warnings)}")
    return EXIT_OK if report.ok else EXIT_FAIL


def _script_step(net: Network, tokens: list[str]) -> tuple[str, bool]:
    verb, rest = tokens[0], tokens[1:]
    if verb == "ping" and len(rest) in (2, 3):
        res = net.inject_ping(rest[0], rest[1], int(rest[2]) if len(rest) == 3 else 1)
        ok = sum(p.status == "ok" for p in res.probes)
        return f"ping {rest[0]} {rest[1]} address={res.address or '-'} ok={ok}/{len(res.probes)} " \
               f"error={res.error or '-'}", res.success
    if verb == "dhcp-boot" and len(rest) == 1:
        lease = net.inject_dhcp_boot(rest[0])
        return f"dhcp-boot {rest[0]} address={lease.address or '-'} error={lease.error or '-'}", lease.bound
    if verb == "dhcp-boot-all" and not rest:
        leases = net.boot_dhcp_hosts()
        return f"dhcp-boot-all bound={sum(x.bound for x in leases.values())}/{len(leases)}", \
            all(x.bound for x in leases.values())
    if verb == "resolve" and len(rest) == 2:
        res = net.inject_dns_query(rest[0], rest[1])
        return f"resolve {rest[0]} {res.name} status={res.status} address={res.address or '-'}", \
            res.status == "answer"
    if verb == "probe" and len(rest) == 3:
        status = net.inject_tcp_probe(rest[0], rest[1], int(rest[2]))
        return f"probe {rest[0]} {rest[1]} {rest[2]} status={status}", status == "connected"
    if verb == "router" and len(rest) == 2 and rest[1] in ("up", "down"):
        net.set_router_enabled(rest[0], rest[1] == "up")
        return f"router {rest[0]} {rest[1]}", True
    raise _Fail(EXIT_USAGE, f"bad script line: {' '.join(tokens)}")


def cmd_run(args) -> int:
    net = _build(args.scenario, trace=bool(args.trace))
    ok = True
    if args.script:
        try:
            with open(args.script, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise _Fail(EXIT_USAGE, f"cannot read script: {exc}")
        for raw in lines:
            tokens = raw.split("#", 1)[0].split()
            if not tokens:
                continue
            try:
                line, step_ok = _script_step(net, tokens)
            except (KeyError, ValueError, DeviceError) as exc:
                line, step_ok = f"{' '.join(tokens)} error={exc}", False
            print(line)
            ok = ok and step_ok
    else:
        leases = net.boot_dhcp_hosts()
        for name, lease in leases.items():
            print(f"lease {name} {lease.address or '-'}")
    _emit(net.summary().as_lines())
    _finish_trace(net, args.trace)
    return EXIT_OK if ok else EXIT_FAIL


def _host_arg(net: Network, name: str):
    try:
        return net.host(name)
    except DeviceError:
        raise _Fail(EXIT_USAGE, f"no host named {name}")


def cmd_ping(args) -> int:
    net = _build(args.scenario, trace=bool(args.trace))
    _host_arg(net, args.src)
    net.boot_dhcp_hosts()
    res = net.inject_ping(args.src, args.dst, args.count)
    print(f"src={res.src}")
    print(f"dst={res.dst}")
    print(f"address={res.address or '-'}")
    for p in res.probes:
        print(f"probe.{p.sequence}={p.status} rtt_us={p.rtt_us if p.rtt_us is not None else '-'} "
              f"reply_ttl={p.reply_ttl if p.reply_ttl is not None else '-'}")
    print(f"success={int(res.success)}")
    print(f"error={res.error or '-'}")
    _finish_trace(net, args.trace)
    return EXIT_OK if res.success else EXIT_FAIL


def cmd_dhcp_boot(args) -> int:
    net = _build(args.scenario)
    host = _host_arg(net, args.host)
    if host.config_mode != "dhcp":
        raise _Fail(EXIT_USAGE, f"{args.host} is statically addressed")
    lease = net.inject_dhcp_boot(args.host)
    print(f"host={lease.host}")
    print(f"address={lease.address or '-'}")
    if lease.config is not None:
        print(f"prefix_length={lease.config.prefix_length}")
        print(f"gateway={lease.config.gateway or '-'}")
        print(f"dns={lease.config.dns_server or '-'}")
    print(f"error={lease.error or '-'}")
    return EXIT_OK if lease.bound else EXIT_FAIL


def cmd_resolve(args) -> int:
    net = _build(args.scenario)
    _host_arg(net, args.host)
    net.boot_dhcp_hosts()
    res = net.inject_dns_query(args.host, args.fqdn)
    print(f"name={res.name}")
    print(f"status={res.status}")
    print(f"address={res.address or '-'}")
    return EXIT_OK if res.status == "answer" else EXIT_FAIL


def cmd_probe(args) -> int:
    net = _build(args.scenario)
    _host_arg(net, args.host)
    net.boot_dhcp_hosts()
    try:
        status = net.inject_tcp_probe(args.host, args.target, args.port)
    except DeviceError:
        status = "unreachable"
    print(f"status={status}")
    return EXIT_OK if status == "connected" else EXIT_FAIL


def cmd_matrix(args) -> int:
    doc = _load_doc(args.scenario)
    report = sc.validate_scenario(doc)
    if not report.ok:
        _emit(str(f) for f in report.errors)
        return EXIT_FAIL
    enabled = not args.router_down
    oracle = oracle_reachability(doc, routers_enabled=enabled) if (args.oracle or args.compare) else None
    engine = None
    if not args.oracle or args.compare:
        net = sc.build_network(doc, report=report)
        if not enabled:
            _set_routers(net, False)
        engine = compute_reachability(net)
    shown = oracle if args.oracle else engine
    print(shown.format_table())
    _emit(shown.as_lines())
    if args.figure:
        from .report import render_matrix_figure
        render_matrix_figure(shown, args.figure)
    if args.compare:
        diffs = engine.diff(oracle)
        for a, b, got, want in diffs:
            print(f"mismatch {a} -> {b} engine={got} oracle={want}")
        print(f"mismatches={len(diffs)}")
        return EXIT_OK if not diffs else EXIT_FAIL
    return EXIT_OK


def cmd_verify(args) -> int:
    net = _build(args.scenario, trace=bool(args.trace))
    try:
        text = sc.bundled_ice_expectations_text() if args.expectations == "@ice" else \
            open(args.expectations, encoding="utf-8").read()
    except OSError as exc:
        raise _Fail(EXIT_USAGE, f"cannot read expectations: {exc}")
    try:
        exps = sc.parse_expectations(text)
    except ScenarioParseError as exc:
        raise _Fail(EXIT_FAIL, f"parse-error {exc}")
    report = run_expectations(net, exps)
    print(report.format_table())
    pools = dhcp_pool_report(net)
    for p in pools:
        _emit(p.as_lines())
    if args.isolation:
        iso = check_vlan_isolation(net)
        _emit(f"isolation.{line}" for line in iso.as_lines())
        if not iso.ok:
            _emit(iso.findings)
            report_ok = False
        else:
            report_ok = True
    else:
        report_ok = True
    _emit(report.as_lines())
    if args.figure:
        from .report import render_pool_figure
        render_pool_figure(pools, args.figure)
    _finish_trace(net, args.trace)
    return report.exit_status if report_ok else EXIT_FAIL


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(doc: sc.ScenarioDocument) -> str:
    """Graphviz text for a scenario: devices as nodes, links and associations as edges."""
    port_cfg = {(p.switch, str(p.index)): p for p in doc.ports}
    addrs: dict[str, list[str]] = {}
    for d in doc.devices:
        if isinstance(d, sc.HostDecl):
            addrs[d.name] = ["dhcp"] if d.dhcp else [f"{d.address}/{d.prefix_length}"]
        elif isinstance(d, sc.WgwDecl):
            addrs[d.name] = [f"lan {d.lan_address}/{d.lan_prefix}"]
            if d.wan_address is not None:
                addrs[d.name].append(f"wan {d.wan_address}/{d.wan_prefix}")
        elif isinstance(d, sc.BridgeDecl):
            addrs[d.name] = [f"ssid {d.ssid}"]
    for s in doc.subifs:
        addrs.setdefault(s.router, []).append(f"{s.label} {s.address}/{s.prefix_length}")

    kinds = {sc.SwitchDecl: "switch", sc.RouterDecl: "router", sc.WgwDecl: "wgw", sc.BridgeDecl: "bridge"}

    def kind(d):
        if isinstance(d, sc.HostDecl):
            return "server" if d.server else "host"
        return kinds[type(d)]

    def end_label(dev, port):
        p = port_cfg.get((dev, port))
        if p is None:
            return port
        return f"{port}:{p.mode} {','.join(map(str, p.vlans))}"

    lines = ["graph intranet {"]
    for d in doc.devices:
        label = "\\n".join(_dot_escape(x) for x in [d.name, kind(d), *addrs.get(d.name, [])])
        lines.append(f'  "{_dot_escape(d.name)}" [label="{label}"];')
    for link in doc.links:
        label = f"{end_label(link.a_device, link.a_port)} -- {end_label(link.b_device, link.b_port)}"
        lines.append(f'  "{_dot_escape(link.a_device)}" -- "{_dot_escape(link.b_device)}" '
                     f'[label="{_dot_escape(label)}"];')
    for a in doc.assocs:
        wgw = sc.find_wgw_for_assoc(doc, a)
        if wgw is not None:
            lines.append(f'  "{_dot_escape(a.host)}" -- "{_dot_escape(wgw.name)}" '
                         f'[label="ssid {_dot_escape(a.ssid)}", style=dashed];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export_dot(args) -> int:
    doc = _load_doc(args.scenario)
    report = sc.validate_scenario(doc)
    if not report.ok:
        _emit(str(f) for f in report.errors)
        return EXIT_FAIL
    sys.stdout.write(export_dot(doc))
    return EXIT_OK


def cmd_show_ice(args) -> int:
    sys.stdout.write(sc.bundled_ice_text())
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icenet", description="Simulate and verify a VLAN-segmented intranet.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def scenario_cmd(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("scenario", help="scenario file, or @ice for the bundled one")
        sp.set_defaults(func=func)
        return sp

    scenario_cmd("validate", cmd_validate, "static checks; exit 1 on errors")

    sp = scenario_cmd("run", cmd_run, "build and run an injection script")
    sp.add_argument("--script", help="one injection per line (ping, dhcp-boot, dhcp-boot-all, resolve, probe, router)")
    sp.add_argument("--trace", metavar="PATH", help="write the frame trace here")

    sp = scenario_cmd("ping", cmd_ping, "echo from a host to a host name, address or domain name")
    sp.add_argument("src")
    sp.add_argument("dst")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--trace", metavar="PATH")

    sp = scenario_cmd("dhcp-boot", cmd_dhcp_boot, "run DORA for one host")
    sp.add_argument("host")

    sp = scenario_cmd("resolve", cmd_resolve, "DNS A query from a host")
    sp.add_argument("host")
    sp.add_argument("fqdn")

    sp = scenario_cmd("probe", cmd_probe, "TCP connect probe")
    sp.add_argument("host")
    sp.add_argument("target")
    sp.add_argument("port", type=int)

    sp = scenario_cmd("matrix", cmd_matrix, "all-pairs reachability")
    sp.add_argument("--oracle", action="store_true", help="print the graph oracle's matrix")
    sp.add_argument("--compare", action="store_true", help="diff engine against oracle; exit 1 on mismatch")
    sp.add_argument("--router-down", action="store_true", help="disable every router subinterface")
    sp.add_argument("--figure", metavar="PATH", help="save a heatmap image")

    sp = scenario_cmd("verify", cmd_verify, "check an expectations file")
    sp.add_argument("expectations", help="expectations file, or @ice for the bundled one")
    sp.add_argument("--trace", metavar="PATH")
    sp.add_argument("--isolation", action="store_true", help="also run the VLAN isolation check")
    sp.add_argument("--figure", metavar="PATH", help="save a DHCP pool usage chart")

    scenario_cmd("export-dot", cmd_export_dot, "graphviz description of the topology")

    sp = sub.add_parser("show-ice", help="print the bundled scenario")
    sp.set_defaults(func=cmd_show_ice)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        if str(exc):
            print(str(exc), file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
