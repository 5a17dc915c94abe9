from typing import Optional


class WongZakaiError(Exception):
    """
    Base class for every error raised by the toolkit.
    """

    exit_code: int = 1


class ConfigurationError(WongZakaiError):
    """
    Invalid parameters, shapes or study configuration.
    """

    exit_code = 2


class GridError(ConfigurationError):
    """
    Time grid is malformed or a requested time is not one of its nodes.
    """


class RefinementError(GridError):
    """
    A coarse partition is not a subset of the fine grid it should restrict.
    """


class UnsupportedLevelError(ConfigurationError):
    """
    Iterated integrals were requested above level 3.
    """


class UnsupportedOracleError(ConfigurationError):
    """
    A closed-form reference was requested outside its model family.
    """


class NumericalError(WongZakaiError, ArithmeticError):
    """
    A computation could not meet its numerical contract.
    """

    exit_code = 3


class CovarianceError(NumericalError):
    """
    A covariance matrix stayed non-positive-semidefinite after jitter.
    """


class IntegrationError(NumericalError):
    """
    The segment integrator could not reach its tolerance within the substep cap.

    Attributes:
        segment (Optional[int]): Index of the driver segment that failed.
        error_estimate (Optional[float]): Last step-doubling error estimate.
    """

    def __init__(
        self,
        message: str,
        segment: Optional[int] = None,
        error_estimate: Optional[float] = None,
    ):
        super().__init__(message)
        self.segment = segment
        self.error_estimate = error_estimate


class InconclusiveStudyError(WongZakaiError):
    """
    A study could not resolve its statistic above the Monte Carlo noise floor.
    """

    exit_code = 4
