"""Exception hierarchy shared by all modules."""


class YamabeLabError(Exception):
    """Base class for every error raised by this package."""


class NonSubcritical(YamabeLabError, ValueError):
    pass


class ShootingFailed(YamabeLabError, RuntimeError):
    pass


class ExponentMismatch(YamabeLabError, ValueError):
    pass


class BadSize(YamabeLabError, ValueError):
    pass


class NotClosed(YamabeLabError, ValueError):
    pass


class BadFormat(YamabeLabError, ValueError):
    pass


class NoPositivePart(YamabeLabError, ValueError):
    """Raised when a field has no positive part, so it cannot be projected."""


class NotOnNehari(YamabeLabError, ValueError):
    pass


class SolverFailure(YamabeLabError, RuntimeError):
    pass


class ZeroMass(YamabeLabError, ValueError):
    pass


class NotLocalized(YamabeLabError, ValueError):
    """The field is too spread out for the Riemannian center of mass to be unique."""


class NotConcentrated(YamabeLabError, ValueError):
    pass


class BadDelta(YamabeLabError, ValueError):
    pass


class EmptyPositivePart(YamabeLabError, ValueError):
    pass


class RadiusTooLarge(YamabeLabError, ValueError):
    pass


class ConfigInvalid(YamabeLabError, ValueError):
    """Configuration failed validation; ``errors`` maps field names to messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = {"config": errors}
        self.errors = dict(errors)
        msg = "; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items()))
        super().__init__(msg)
