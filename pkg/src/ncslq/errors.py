"""Exception types raised across the package."""


class NcslqError(Exception):
    """Base class for all package errors."""

    code = "Error"


class DimensionMismatch(NcslqError):
    code = "DimensionMismatch"


class NotPSD(NcslqError):
    code = "NotPSD"

    def __init__(self, which, min_eig=None):
        self.which = which
        self.min_eig = min_eig
        msg = f"{which} is not positive semidefinite"
        if min_eig is not None:
            msg += f" (min eigenvalue {min_eig:.3e})"
        super().__init__(msg)


class NotPD(NcslqError):
    code = "NotPD"

    def __init__(self, which, min_eig=None):
        self.which = which
        self.min_eig = min_eig
        msg = f"{which} is not positive definite"
        if min_eig is not None:
            msg += f" (min eigenvalue {min_eig:.3e})"
        super().__init__(msg)


class NotStochastic(NcslqError):
    code = "NotStochastic"


class BadDelay(NcslqError):
    code = "BadDelay"


class BadInit(NcslqError):
    code = "BadInit"


class BadOffsets(NcslqError):
    code = "BadOffsets"


class TooLong(NcslqError):
    code = "TooLong"


class TooLarge(NcslqError):
    code = "TooLarge"


class SingularGamma(NcslqError):
    """Gamma lost positive definiteness during the backward sweep.

    Signals that the finite-horizon problem is not uniquely solvable at
    the offending step.
    """

    code = "SingularGamma"

    def __init__(self, step, mode, min_eig):
        self.step = step
        self.mode = mode
        self.min_eig = min_eig
        super().__init__(
            f"Gamma not positive definite at step {step}, mode {mode} "
            f"(min eigenvalue {min_eig:.3e})"
        )


class SingularLambda(NcslqError):
    code = "SingularLambda"

    def __init__(self, step, mode, min_eig):
        self.step = step
        self.mode = mode
        self.min_eig = min_eig
        super().__init__(
            f"Lambda not positive definite at step {step}, mode {mode} "
            f"(min eigenvalue {min_eig:.3e})"
        )


class NumericalOverflow(NcslqError):
    code = "NumericalOverflow"


class NotConverged(NcslqError):
    code = "NotConverged"


class NotStabilized(NcslqError):
    code = "NotStabilized"


class NotIID(NcslqError):
    code = "NotIID"


class HorizonMismatch(NcslqError):
    code = "HorizonMismatch"


class ObservabilityNotSatisfied(NcslqError):
    code = "ObservabilityNotSatisfied"


class ConfigError(NcslqError):
    code = "ConfigError"
