from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EstimateResult:
    """Point estimates returned by every estimator.

    ``beta`` is on the probit scale for all estimators (the linearized GMM
    logit coefficients are rescaled before they are stored here).
    """

    estimator: str
    beta: np.ndarray
    rho: float
    converged: bool
    iterations: int = 0
    seconds: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.beta)) and np.isfinite(self.rho))
