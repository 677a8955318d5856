"""Exception types raised by the estimators and their building blocks."""

import numpy as np


class BsarError(Exception):
    """Base class for all package errors."""


class IsolatedUnitError(BsarError, ValueError):
    """A unit has no neighbours, so its row cannot be normalized."""


class DomainError(BsarError, ValueError):
    """The autocorrelation parameter lies outside the admissible interval."""


class SingularSystemError(BsarError, np.linalg.LinAlgError):
    """``I - rho W`` could not be factorized."""


class NonPositiveVarianceError(BsarError, ValueError):
    pass


class OptimizerFailure(BsarError, RuntimeError):
    pass


class SingularDesignError(BsarError, np.linalg.LinAlgError):
    pass


class RankDeficientInstruments(BsarError, np.linalg.LinAlgError):
    pass


class SingularSecondStage(BsarError, np.linalg.LinAlgError):
    pass


class CholeskyFailure(BsarError, np.linalg.LinAlgError):
    pass


class EmptyCellError(BsarError, ValueError):
    pass


class ConfigError(BsarError, ValueError):
    pass
