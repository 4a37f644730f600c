"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or vector shapes do not agree."""


class UnstablePairError(ValueError):
    """The discounted closed loop is not a contraction, so the cost is infinite."""

    def __init__(self, rho: float, gamma: float):
        self.rho = float(rho)
        self.gamma = float(gamma)
        super().__init__(
            f"sqrt(gamma)*rho(A-BK) = {gamma ** 0.5 * rho:.6g} >= 1 "
            f"(rho={rho:.6g}, gamma={gamma:.6g}); discounted cost is infinite"
        )


class NotStabilizableError(RuntimeError):
    """Riccati iteration did not converge for the scaled pair."""


class EstimateBelowBoundError(ValueError):
    """A cost estimate fell below half the stage-cost eigenvalue floor."""


class NumericalError(RuntimeError):
    """An eigen or linear solve did not produce a usable answer."""
