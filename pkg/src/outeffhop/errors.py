"""Exception types shared across the package."""


class DomainError(ValueError):
    """A calculator input lies outside the formula's domain.

    ``value`` carries the offending quantity so sweeps can report it.
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value

    def to_dict(self):
        return {"error": "domain", "message": str(self), "value": self.value}


class NumericalError(ArithmeticError):
    """A NaN/inf appeared during an iterative computation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
