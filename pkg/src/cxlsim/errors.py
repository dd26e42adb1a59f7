"""Exception types shared across the simulator."""


class SimulationError(Exception):
    pass


class SchedulingInPast(SimulationError):
    pass


class DeadlockError(SimulationError):
    def __init__(self, blocked):
        self.blocked = blocked
        super().__init__(f"event queue empty with blocked components: {blocked}")


class ConfigError(SimulationError):
    pass


class RangeError(ConfigError):
    pass


class SpecError(SimulationError):
    pass


class ParseError(SimulationError):
    def __init__(self, message, line_no):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class BarrierMismatch(SimulationError):
    pass


class ProtocolViolation(SimulationError):
    pass


class UnknownDestination(SimulationError):
    pass


class DramLogOverflow(SimulationError):
    pass


class RecoveryTimeout(SimulationError):
    pass
