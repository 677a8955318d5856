"""GMM estimators built on generalized residuals.

``fit_gmm_ps`` minimizes the quadratic form e~' Z M Z' e~ of the probit
generalized residuals with M = I, by a derivative-free search.
``fit_gmm_linearized`` is the one-step logit variant: the moment conditions
are linearized around a starting point and the update is a single
two-stage least-squares regression.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import Bounds, minimize
from scipy.special import expit

from .binary import LOGIT_TO_PROBIT, fit_logit, generalized_residual
from .dgp import BsarDataset
from .errors import DomainError, RankDeficientInstruments, SingularSecondStage
from .results import EstimateResult
from .spatial import WeightMatrix, standardized_index

__all__ = [
    "GmmConfig",
    "build_instruments",
    "generalized_residuals_probit",
    "gmm_objective",
    "fit_gmm_ps",
    "sigma_derivative",
    "sigma_derivative_symmetric",
    "km_gradients",
    "fit_gmm_linearized",
]

_GRID_POINTS = 5


@dataclass
class GmmConfig:
    """Settings for both GMM estimators.

    ``weighting`` is ``"identity"`` or ``"projection"`` (M = (Z'Z)^{-1}) and
    applies to :func:`fit_gmm_ps`; the linearized estimator always uses the
    projection.  ``linearize_at`` selects the expansion point of the
    linearized estimator: ``"logit"`` (ordinary logit fit with rho = 0) or
    ``"zero"`` (beta = 0, rho = 0, where the rho column of the gradient is
    identically zero).
    """

    weighting: str = "identity"
    optimizer_budget: int = 1000
    rho_margin: float = 1e-4
    grid_restart: bool = True
    linearize_at: str = "logit"

    def __post_init__(self):
        if self.optimizer_budget < 1:
            raise ValueError("optimizer_budget must be >= 1")
        if self.weighting not in ("identity", "projection"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.linearize_at not in ("logit", "zero"):
            raise ValueError(f"unknown linearization point {self.linearize_at!r}")


def build_instruments(X, W: WeightMatrix, powers: int = 3, rtol: float = 1e-10) -> np.ndarray:
    """Columns [1, x, Wx, W^2 x, ..., W^powers x] for every non-constant column x of X."""
    X = np.asarray(X, dtype=float)
    cols = [np.ones(X.shape[0])]
    for x in X[:, 1:].T:
        cols.append(x)
        for _ in range(powers):
            x = W.lag(x)
            cols.append(x)
    Z = np.column_stack(cols)
    s = np.linalg.svd(Z, compute_uv=False)
    if s[-1] <= rtol * s[0]:
        raise RankDeficientInstruments(f"instrument matrix has rank < {Z.shape[1]}")
    return Z


def generalized_residuals_probit(beta, rho: float, data: BsarDataset) -> np.ndarray:
    """phi(q) (y - Phi(q)) / (Phi(q) (1 - Phi(q))) at the standardized index q."""
    q = standardized_index(data.W, rho, data.X, beta)
    return generalized_residual(q, data.y)


def gmm_objective(residuals, Z, M=None) -> float:
    """e' Z M Z' e; ``M=None`` means the identity."""
    g = Z.T @ residuals
    if M is None:
        return float(g @ g)
    return float(g @ (M @ g))


def _weighting(Z, kind):
    return None if kind == "identity" else np.linalg.inv(Z.T @ Z)


def fit_gmm_ps(data: BsarDataset, config: GmmConfig | None = None,
               instruments: np.ndarray | None = None) -> EstimateResult:
    """Nonlinear GMM on probit generalized residuals.

    Nelder-Mead from beta = 0, rho = 0 with rho boxed inside the admissible
    interval; the search is then restarted from the best point of a
    five-point rho grid (beta held at the first solution) and the better
    of the two optima is kept.
    """
    config = config or GmmConfig()
    start = time.perf_counter()
    Z = build_instruments(data.X, data.W) if instruments is None else instruments
    M = _weighting(Z, config.weighting)
    k = data.X.shape[1]
    lo, hi = data.W.domain.interior(config.rho_margin)
    bounds = Bounds(np.r_[np.full(k, -np.inf), lo], np.r_[np.full(k, np.inf), hi])
    evaluations = 0

    def objective(theta):
        nonlocal evaluations
        evaluations += 1
        try:
            e = generalized_residuals_probit(theta[:k], float(theta[k]), data)
        except DomainError:
            return np.inf
        value = gmm_objective(e, Z, M)
        return value if np.isfinite(value) else np.inf

    def search(x0):
        return minimize(objective, x0, method="Nelder-Mead", bounds=bounds,
                        options={"maxiter": config.optimizer_budget, "xatol": 1e-6, "fatol": 1e-10})

    best = search(np.zeros(k + 1))
    restarts = 0
    if config.grid_restart:
        grid = np.linspace(lo, hi, _GRID_POINTS + 2)[1:-1]
        trial = [objective(np.append(best.x[:k], r)) for r in grid]
        x0 = np.append(best.x[:k], grid[int(np.argmin(trial))])
        second = search(x0)
        restarts = 1
        if second.fun < best.fun:
            best = second
    return EstimateResult(
        estimator="gmm",
        beta=best.x[:k].copy(),
        rho=float(best.x[k]),
        converged=bool(best.success),
        iterations=int(best.nit),
        seconds=time.perf_counter() - start,
        diagnostics={"objective": float(best.fun), "evaluations": evaluations,
                     "restarts": restarts, "message": best.message},
    )


def sigma_derivative(W, rho: float) -> np.ndarray:
    """d sigma_i / d rho for sigma_i^2 = [((I - rho W)'(I - rho W))^{-1}]_ii.

    Dense and valid for any W: with Psi = I - rho W and Sigma = (Psi'Psi)^{-1},
    d Sigma / d rho = Sigma (W'Psi + Psi'W) Sigma.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    psi = np.eye(n) - rho * W
    sigma = np.linalg.inv(psi.T @ psi)
    d_sigma = sigma @ (W.T @ psi + psi.T @ W) @ sigma
    return np.diag(d_sigma) / (2.0 * np.sqrt(np.diag(sigma)))


def sigma_derivative_symmetric(W, rho: float) -> np.ndarray:
    """The same derivative when W is symmetric: [Psi^{-1} W Psi^{-1} Psi^{-1}]_ii / sigma_i."""
    W = np.asarray(W, dtype=float)
    inv = np.linalg.inv(np.eye(W.shape[0]) - rho * W)
    sd = np.sqrt(np.diag(inv @ inv))
    return np.diag(inv @ W @ inv @ inv) / sd


def km_gradients(beta, rho: float, data: BsarDataset) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the logistic probabilities P = expit(q) in beta and rho.

    q = Psi^{-1} X beta / sigma, so
    dq/dbeta = D^{-1} Psi^{-1} X and
    dq/drho = Psi^{-1} W Psi^{-1} X beta / sigma - (q / sigma) d sigma / d rho.
    At rho = 0 (sigma = 1, d sigma / d rho = 0) this reduces to W X beta
    and needs no dense algebra.
    """
    beta = np.asarray(beta, dtype=float)
    X, W = data.X, data.W
    if rho == 0.0:
        t = X
        xb = X @ beta
        q, dq = xb, W.lag(xb)
    else:
        op = W.lag_operator(rho)
        sd = op.sd
        t = op.solve(X) / sd[:, None]
        mean = op.solve(X @ beta)
        q = mean / sd
        dq = op.solve(W.lag(mean)) / sd - q / sd * sigma_derivative(W.normalized, rho)
    w = expit(q) * expit(-q)
    return w[:, None] * t, w * dq


def fit_gmm_linearized(data: BsarDataset, config: GmmConfig | None = None,
                       instruments: np.ndarray | None = None) -> EstimateResult:
    """One-step linearized GMM logit.

    Linearizes P(theta) around theta0 = (beta0, 0), projects the gradients
    on the instruments and regresses e0 + G_beta beta0 on the fitted
    gradients.  beta is returned on the probit scale (times sqrt(3)/pi);
    rho is not rescaled and is not restricted to the admissible interval.
    """
    config = config or GmmConfig()
    start = time.perf_counter()
    Z = build_instruments(data.X, data.W) if instruments is None else instruments
    k = data.X.shape[1]
    if config.linearize_at == "logit":
        beta0, _, _ = fit_logit(data.X, data.y)
    else:
        beta0 = np.zeros(k)
    if np.ptp(data.y) == 0:
        raise SingularSecondStage("outcome has no variation")
    q0 = data.X @ beta0
    e0 = data.y - expit(q0)
    G_beta, G_rho = km_gradients(beta0, 0.0, data)
    G = np.column_stack([G_beta, G_rho])
    coef, *_ = np.linalg.lstsq(Z, G, rcond=None)
    G_hat = Z @ coef
    s = np.linalg.svd(G_hat, compute_uv=False)
    if s[-1] <= 1e-10 * max(s[0], np.finfo(float).tiny):
        raise SingularSecondStage("projected gradients are collinear")
    response = e0 + G_beta @ beta0
    theta, *_ = np.linalg.lstsq(G_hat, response, rcond=None)
    rho = float(theta[k])
    return EstimateResult(
        estimator="gmmlin",
        beta=theta[:k] * LOGIT_TO_PROBIT,
        rho=rho,
        converged=True,
        iterations=1,
        seconds=time.perf_counter() - start,
        diagnostics={"beta_logit": theta[:k].copy(), "beta_start": beta0},
    )
