"""Exception types raised across the package."""


class IcenetError(Exception):
    """Base class for every error raised by this package."""


class AddressError(IcenetError, ValueError):
    """Malformed or out-of-range address, prefix, MAC or VLAN id."""


class FrameError(IcenetError):
    """Invalid frame operation (double tagging, untagging an untagged frame)."""


class TtlExpired(IcenetError):
    """A packet's ttl ran out at a forwarding hop."""


class DeviceError(IcenetError):
    """A device operation was invoked in a state that forbids it."""


class UnboundHost(DeviceError):
    pass


class NoGateway(DeviceError):
    pass


class NatTableFull(DeviceError):
    pass


class SimulationError(IcenetError):
    pass


class TimeInPast(SimulationError):
    pass


class ScenarioParseError(IcenetError):
    def __init__(self, line: int, token: str, message: str):
        super().__init__(f"line {line}: {message} (at {token!r})")
        self.line = line
        self.token = token


class BuildRejected(IcenetError):
    """Raised when a scenario with validation errors is built."""

    def __init__(self, report):
        super().__init__(f"scenario has {len(report.errors)} validation error(s)")
        self.report = report
