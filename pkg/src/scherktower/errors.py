"""Exception types shared by the tower modules."""


class TowerError(Exception):
    """Base class for all errors raised by this package."""


class BranchPointHit(TowerError):
    """Evaluation requested too close to a branch point of the data."""


class EndPointHit(TowerError):
    """Evaluation requested at the Scherk end z = 1."""


class PoleHit(TowerError):
    """Evaluation requested at a pole of an auxiliary function."""


class StepTooLarge(TowerError):
    """A continuation step rotated an argument by pi/2 or more."""


class SingularityClearance(TowerError):
    """A continuation path passes too close to a singular point."""


class ToleranceNotMet(TowerError):
    """Quadrature or root finding could not reach the requested accuracy."""


class NoBracket(TowerError):
    """No sign change of the period residual inside the scanned window."""

    def __init__(self, message, y=None):
        super().__init__(message)
        self.y = y


class GridDegenerate(TowerError):
    """The requested parameter-domain grid cannot be built."""


class WeldMismatch(TowerError):
    """Boundary curves of adjacent copies do not coincide."""
