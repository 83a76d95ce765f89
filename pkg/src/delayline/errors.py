"""Exception types raised by the simulation and control layers."""


class DelaylineError(Exception):
    """Base class for all package-specific failures."""


class RangeError(DelaylineError):
    """A time query left the stored history span."""


class DomainError(DelaylineError):
    """Arguments violate a mathematical domain restriction."""


class CFLViolation(DelaylineError):
    """Time step too large for the grid at the declared maximum speed."""


class SpeedBoundViolation(DelaylineError):
    """The transport speed left its declared [lam_min, lam_max] band."""


class NonConvergence(DelaylineError):
    """A fixed-point iteration exhausted its iteration budget."""


class NoPositiveRoot(DelaylineError):
    """Gain synthesis has no strictly positive solution for the given slope."""


class NotYetReachable(DelaylineError):
    """The queried signal is still in flight from before the recorded start."""


class NonFiniteState(DelaylineError):
    """A simulated state became NaN or infinite."""


class ConfigError(DelaylineError):
    """A configuration file is malformed or inconsistent."""
