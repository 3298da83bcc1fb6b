"""Exception types raised by the simulator."""


class BmGrwError(Exception):
    """Base class for all simulator errors."""


class NonFiniteField(BmGrwError, ValueError):
    pass


class InvalidTimestep(BmGrwError, ValueError):
    pass


class DelocalizedDensity(BmGrwError, ValueError):
    """Circular mean of a density is ill-conditioned on the periodic box."""


class AnnihilatedState(BmGrwError, ValueError):
    """A localization hit landed where the state has no amplitude."""


class ClipMassExceeded(BmGrwError, RuntimeError):
    """Advection produced more negative density than the per-step budget."""


class FilterDegenerate(BmGrwError, RuntimeError):
    pass


class CovarianceBlowup(BmGrwError, RuntimeError):
    pass


class EquivalenceBroken(BmGrwError, RuntimeError):
    pass


class ConfigError(BmGrwError, ValueError):
    """Invalid run configuration; carries the key path and line number."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
