"""Band-limited coordinate descent over a simulated wireless multiple-access channel."""

from .blcd import RoundTrace, RunResult, run
from .config import RunConfig, parse_config
from .errors import ConfigError, InvalidArgument, NumericError, RunAbort

__all__ = [
    "ConfigError", "InvalidArgument", "NumericError", "RoundTrace", "RunAbort", "RunConfig",
    "RunResult", "parse_config", "run",
]
