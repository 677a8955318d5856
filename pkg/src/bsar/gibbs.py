"""Heteroskedastic Bayesian Gibbs sampler for the spatial lag probit.

One sweep draws, in order, sigma^2, beta, the variance scalars v, rho (by
random-walk Metropolis) and the latent outcome.  Priors are flat on beta
and rho, 1/sigma on sigma, and q / v_i ~ chi^2(q) / q on the variance
scalars.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .binary import truncated_normal
from .dgp import BsarDataset
from .errors import SingularDesignError
from .results import EstimateResult
from .spatial import LagOperator, ord_log_det

__all__ = [
    "GibbsConfig",
    "GibbsState",
    "residuals",
    "rho_log_density",
    "draw_sigma2",
    "draw_beta",
    "draw_v",
    "draw_rho_metropolis",
    "draw_latent",
    "fit_gibbs",
]

SIGMA2_FLOOR = 1e-12
_DOMAIN_MARGIN = 1e-6


@dataclass
class GibbsConfig:
    total_sweeps: int = 3000
    burn_in: int = 1000
    q_hyper: float = 100.0
    c_proposal: float = 0.1
    # False pins sigma^2 = 1, the usual probit normalization
    sample_sigma2: bool = False
    keep_chain: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in < self.total_sweeps:
            raise ValueError("burn_in must be smaller than total_sweeps")
        if not self.q_hyper > 0:
            raise ValueError("q_hyper must be positive")
        if self.c_proposal < 0:
            raise ValueError("c_proposal must be non-negative")


@dataclass
class GibbsState:
    beta: np.ndarray
    rho: float
    sigma2: float
    v: np.ndarray
    y_star: np.ndarray

    @classmethod
    def initial(cls, data: BsarDataset) -> "GibbsState":
        return cls(
            beta=np.zeros(data.X.shape[1]),
            rho=0.0,
            sigma2=1.0,
            v=np.ones(data.n),
            y_star=np.zeros(data.n),
        )


class _InverseCache:
    """Squared entries of (I - rho W)^{-1} for the most recent rho."""

    def __init__(self, W):
        self.W = W
        self.rho = None

    def get(self, rho: float) -> tuple[LagOperator, np.ndarray]:
        if rho != self.rho:
            self.op = self.W.lag_operator(rho)
            self.squared = self.op.inverse ** 2
            self.rho = rho
        return self.op, self.squared


def residuals(state: GibbsState, data: BsarDataset, rho: float | None = None) -> np.ndarray:
    """eps = (I - rho W) y* - X beta."""
    rho = state.rho if rho is None else rho
    return state.y_star - rho * data.W.lag(state.y_star) - data.X @ state.beta


def draw_sigma2(state: GibbsState, data: BsarDataset, rng: np.random.Generator) -> float:
    """sigma^2 = eps' V^{-1} eps / chi^2(n), floored at 1e-12."""
    eps = residuals(state, data)
    ssr = float(eps @ (eps / state.v))
    return max(ssr / rng.chisquare(data.n), SIGMA2_FLOOR)


def _gls(state: GibbsState, data: BsarDataset):
    X = data.X
    Xv = X / state.v[:, None]
    precision = Xv.T @ X
    target = state.y_star - state.rho * data.W.lag(state.y_star)
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("X' V^{-1} X is not positive definite") from exc
    mean = np.linalg.solve(precision, Xv.T @ target)
    return mean, chol


def draw_beta(state: GibbsState, data: BsarDataset, rng: np.random.Generator) -> np.ndarray:
    """N((X'V^{-1}X)^{-1} X'V^{-1}(I - rho W) y*, sigma^2 (X'V^{-1}X)^{-1})."""
    mean, chol = _gls(state, data)
    z = rng.standard_normal(mean.shape[0])
    # chol chol' = precision, so chol'^{-1} z has covariance precision^{-1}
    return mean + np.sqrt(state.sigma2) * np.linalg.solve(chol.T, z)


def draw_v(state: GibbsState, data: BsarDataset, rng: np.random.Generator, q: float = 100.0) -> np.ndarray:
    """v_i = (eps_i^2 / sigma^2 + q) / chi^2(q + 1)."""
    eps = residuals(state, data)
    return (eps * eps / state.sigma2 + q) / rng.chisquare(q + 1.0, size=data.n)


def rho_log_density(rho: float, state: GibbsState, data: BsarDataset, lagged=None) -> float:
    """ln|I - rho W| - eps(rho)' V^{-1} eps(rho) / (2 sigma^2), up to a constant."""
    lagged = data.W.lag(state.y_star) if lagged is None else lagged
    eps = state.y_star - rho * lagged - data.X @ state.beta
    return ord_log_det(rho, data.W.eigenvalues) - 0.5 * float(eps @ (eps / state.v)) / state.sigma2


def draw_rho_metropolis(state: GibbsState, data: BsarDataset, rng: np.random.Generator,
                        c: float = 0.1) -> tuple[float, bool]:
    """Random-walk Metropolis step rho* = rho + c Z.

    Proposals outside the admissible interval have zero prior mass and are
    rejected without evaluating the density.
    """
    proposal = state.rho + c * rng.standard_normal()
    m = rng.random()
    lo, hi = data.W.domain.interior(_DOMAIN_MARGIN)
    if not lo < proposal < hi:
        return state.rho, False
    lagged = data.W.lag(state.y_star)
    log_ratio = rho_log_density(proposal, state, data, lagged) - rho_log_density(state.rho, state, data, lagged)
    if np.log(m) < log_ratio:
        return float(proposal), True
    return state.rho, False


def draw_latent(state: GibbsState, data: BsarDataset, rng: np.random.Generator,
                cache: _InverseCache | None = None, scale: float | None = None) -> np.ndarray:
    """Truncated normal y*_i around the reduced-form mean.

    The variance of unit i is the i-th diagonal entry of
    scale * (I - rho W)^{-1} V (I - rho W)^{-T}; ``scale`` defaults to sigma^2.
    """
    cache = cache or _InverseCache(data.W)
    op, squared = cache.get(state.rho)
    scale = state.sigma2 if scale is None else scale
    mean = op.solve(data.X @ state.beta)
    sd = np.sqrt(scale * (squared @ state.v))
    return truncated_normal(mean, sd, data.y, rng)


def fit_gibbs(data: BsarDataset, config: GibbsConfig | None = None,
              rng: np.random.Generator | None = None) -> EstimateResult:
    """Run one chain; point estimates are posterior means after burn-in."""
    config = config or GibbsConfig()
    rng = rng if rng is not None else np.random.default_rng()
    start = time.perf_counter()
    state = GibbsState.initial(data)
    cache = _InverseCache(data.W)
    k = data.X.shape[1]
    sweeps = config.total_sweeps
    betas = np.empty((sweeps, k))
    rhos = np.empty(sweeps)
    sigma2s = np.empty(sweeps)
    accepted = np.zeros(sweeps, dtype=bool)

    for s in range(sweeps):
        if config.sample_sigma2:
            state.sigma2 = draw_sigma2(state, data, rng)
        state.beta = draw_beta(state, data, rng)
        state.v = draw_v(state, data, rng, config.q_hyper)
        state.rho, accepted[s] = draw_rho_metropolis(state, data, rng, config.c_proposal)
        state.y_star = draw_latent(state, data, rng, cache)
        betas[s], rhos[s], sigma2s[s] = state.beta, state.rho, state.sigma2

    kept = slice(config.burn_in, sweeps)
    diagnostics = {
        "acceptance_rate": float(accepted[kept].mean()),
        "beta_sd": betas[kept].std(axis=0, ddof=1) if sweeps - config.burn_in > 1 else np.zeros(k),
        "rho_sd": float(rhos[kept].std(ddof=1)) if sweeps - config.burn_in > 1 else 0.0,
        "sigma2_mean": float(sigma2s[kept].mean()),
    }
    if config.keep_chain:
        diagnostics["chain"] = {"beta": betas, "rho": rhos, "sigma2": sigma2s, "accepted": accepted}
    return EstimateResult(
        estimator="gibbs",
        beta=betas[kept].mean(axis=0),
        rho=float(rhos[kept].mean()),
        converged=True,
        iterations=sweeps,
        seconds=time.perf_counter() - start,
        diagnostics=diagnostics,
    )


def write_chain(result: EstimateResult, path) -> None:
    """CSV of (sweep, beta0, beta1, rho, sigma2, accepted) from a kept chain."""
    import csv

    chain = result.diagnostics["chain"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep", "beta0", "beta1", "rho", "sigma2", "accepted"])
        for s in range(chain["rho"].shape[0]):
            b = chain["beta"][s]
            writer.writerow([s, repr(float(b[0])), repr(float(b[1])), repr(float(chain["rho"][s])),
                             repr(float(chain["sigma2"][s])), int(chain["accepted"][s])])
