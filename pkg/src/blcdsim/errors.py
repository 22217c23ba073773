"""Exception types shared across the simulator."""


class InvalidArgument(ValueError):
    pass


class NumericError(RuntimeError):
    """A numerical routine failed to bracket or converge."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class RunAbort(RuntimeError):
    """Training hit a non-finite model or gradient and cannot continue."""


class ConfigError(ValueError):
    """Collects every invalid field so they can be reported together."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
