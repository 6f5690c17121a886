"""Laboratory for repeated crowd-avoidance games.

The package covers four layers that share one deterministic random-stream
substrate:

* game core: configuration, single-round resolution, utilization;
* agents: a catalog of decision rules plus a vectorised population engine
  and batch Monte Carlo driver;
* theory: exact pure-strategy equilibrium checks on small instances;
* practice: switch-rate analytics, behavioural classification, and a live
  multi-participant session service whose event logs replay into the same
  trace format the simulator emits.
"""

from .errors import (
    AuthError,
    CapacityGuardError,
    ConfigError,
    DataError,
    InvalidProfileError,
    KprError,
    PhaseError,
    ReplayError,
    SessionError,
    WrongModeError,
)
from .game import (
    FeedbackLevel,
    GameConfig,
    GameStreams,
    Mode,
    RoundOutcome,
    equal_utilities,
    ranked_utilities,
    resolve_minority_round,
    resolve_round,
    utilization,
)
from .rng import RngStream

__all__ = [
    "AuthError",
    "CapacityGuardError",
    "ConfigError",
    "DataError",
    "FeedbackLevel",
    "GameConfig",
    "GameStreams",
    "InvalidProfileError",
    "KprError",
    "Mode",
    "PhaseError",
    "ReplayError",
    "RngStream",
    "RoundOutcome",
    "SessionError",
    "WrongModeError",
    "equal_utilities",
    "ranked_utilities",
    "resolve_minority_round",
    "resolve_round",
    "utilization",
]

__version__ = "0.1.0"
