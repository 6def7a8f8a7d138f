"""Exception hierarchy.

Validation problems subclass ValueError; numerical failures subclass
NumericalError so callers (and the CLI exit codes) can tell them apart.
"""


class NumericalError(RuntimeError):
    """A numerical procedure failed to deliver a result."""


class ConvergenceError(NumericalError):
    pass


class SingularJacobianError(NumericalError):
    pass


class StepSizeUnderflow(NumericalError):
    pass


class NoPositiveRootError(NumericalError):
    pass


class ThresholdError(ValueError):
    """Requested object does not exist on this side of R0 = 1."""


class SettleTimeout(NumericalError):
    """Integration reached ``t_max`` without settling on an equilibrium.

    Distinct from solver failure: the trajectory is valid, it just never
    came to rest. ``oscillating`` reports whether sustained oscillations
    were seen over the tail of the run.
    """

    def __init__(self, message, trajectory=None, oscillating=False):
        super().__init__(message)
        self.trajectory = trajectory
        self.oscillating = oscillating
