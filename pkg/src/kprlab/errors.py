"""Exception taxonomy shared across the package.

The command line maps these onto exit codes: configuration and usage
problems exit 2, bad or insufficient data exits 3, and a refused
exhaustive computation exits 4.
"""


class KprError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(KprError):
    """A configuration, parameter set, roster, or input profile is invalid."""


class WrongModeError(ConfigError):
    """An operation was invoked for a game mode it does not apply to."""


class InvalidProfileError(ConfigError):
    """A choice profile does not fit the configuration it was used with."""


class CapacityGuardError(KprError):
    """An exhaustive computation would exceed its configured size guard."""


class DataError(KprError):
    """Input data is missing, corrupt, or too short to analyse."""


class ReplayError(DataError):
    """An event log cannot be replayed into a trace."""


class SessionError(KprError):
    """A live-session rule was violated."""


class PhaseError(SessionError):
    """The session is not in a phase that allows the requested action."""


class AuthError(SessionError):
    """The supplied token does not authorise the requested action."""
