"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A parameter, distribution, or file failed a contract check."""


class SizeGuardError(ValueError):
    """An exact-enumeration request exceeds the configured size guard."""


class SequencingError(RuntimeError):
    """step()/period_boundary() called out of order on a periodic shield."""


class ShieldLookupError(LookupError):
    """A decision lookup hit an unreachable state or out-of-support input."""
