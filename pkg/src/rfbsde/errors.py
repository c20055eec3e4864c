"""Exception hierarchy shared by all modules."""


class RFBSDEError(Exception):
    pass


class InvalidArgumentError(RFBSDEError, ValueError):
    pass


class ConfigError(RFBSDEError, ValueError):
    pass


class NumericalError(RFBSDEError, ArithmeticError):
    pass


class ProjectionError(NumericalError):
    """Closest-point projection did not land in the closed domain."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class StiffnessError(NumericalError):
    """Explicit penalized step is unstable for the requested stiffness."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class RegressionError(NumericalError):
    pass


class UndefinedConditionError(NumericalError):
    pass


class PreconditionError(InvalidArgumentError):
    pass
