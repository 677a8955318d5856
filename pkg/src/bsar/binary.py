"""Univariate probit/logit machinery shared by the estimators.

Ratios of the normal density to its tail probabilities are evaluated in log
space, so they stay finite and accurate far into the tails where the naive
quotient phi(q) / Phi(q) degenerates to 0/0.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_ndtr, ndtri_exp

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

#: logit coefficients times this factor are comparable with probit ones
LOGIT_TO_PROBIT = np.sqrt(3.0) / np.pi


def norm_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def inverse_mills(q):
    """phi(q) / Phi(q)."""
    return np.exp(norm_logpdf(q) - log_ndtr(q))


def generalized_residual(q, y):
    """E[e | y] for a standardized probit index ``q``.

    phi(q) [y - Phi(q)] / (Phi(q) [1 - Phi(q)]), which is phi/Phi for y = 1
    and -phi/(1 - Phi) for y = 0.
    """
    q = np.asarray(q, dtype=float)
    y = np.asarray(y)
    return np.where(y == 1, inverse_mills(q), -inverse_mills(-q))


def upper_truncated_normal(bound, log_u):
    """Inverse-CDF draw from N(0, 1) restricted to (-inf, bound].

    ``log_u`` are logs of uniforms on (0, 1]; the draw is
    Phi^{-1}(u Phi(bound)) computed as ndtri_exp(log u + log Phi(bound)).
    """
    return ndtri_exp(log_u + log_ndtr(bound))


def truncated_normal(mean, sd, y, rng: np.random.Generator):
    """Draw y*_i ~ N(mean_i, sd_i^2) truncated to y*_i > 0 where y_i = 1 and
    y*_i <= 0 where y_i = 0."""
    mean = np.asarray(mean, dtype=float)
    y = np.asarray(y)
    log_u = np.log1p(-rng.random(mean.shape))
    # flip the y = 1 coordinates so every draw is an upper truncation at 0
    sign = np.where(y == 1, -1.0, 1.0)
    z = upper_truncated_normal(-sign * mean / sd, log_u)
    draw = sign * (sign * mean + sd * z)
    positive = y == 1
    draw[positive] = np.maximum(draw[positive], np.finfo(float).tiny)
    draw[~positive] = np.minimum(draw[~positive], 0.0)
    return draw


def _newton(X, y, loglik_grad_info, max_iter, tol):
    beta = np.zeros(X.shape[1])
    ll, grad, info = loglik_grad_info(beta)
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            return beta, False, it
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, grad_new, info_new = loglik_grad_info(cand)
            if ll_new >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        converged = np.max(np.abs(cand - beta)) < tol
        beta, ll, grad, info = cand, ll_new, grad_new, info_new
        if converged:
            return beta, True, it
    return beta, False, max_iter


def fit_probit(X, y, max_iter: int = 50, tol: float = 1e-8):
    """Classical probit MLE by Fisher scoring.

    Returns ``(beta, converged, iterations)``.  Under (quasi-)complete
    separation the iterate drifts off and ``converged`` is False.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    sign = 2.0 * y - 1.0

    def terms(beta):
        xb = X @ beta
        ll = log_ndtr(sign * xb).sum()
        lam1, lam0 = inverse_mills(xb), inverse_mills(-xb)
        grad = X.T @ np.where(y == 1, lam1, -lam0)
        weight = lam1 * lam0  # phi^2 / (Phi (1 - Phi))
        return ll, grad, (X * weight[:, None]).T @ X

    return _newton(X, y, terms, max_iter, tol)


def fit_logit(X, y, max_iter: int = 50, tol: float = 1e-8):
    """Classical logit MLE by Newton-Raphson; same return convention as fit_probit."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)

    def terms(beta):
        xb = X @ beta
        p = expit(xb)
        ll = np.sum(y * xb - np.logaddexp(0.0, xb))
        w = p * (1.0 - p)
        return ll, X.T @ (y - p), (X * w[:, None]).T @ X

    return _newton(X, y, terms, max_iter, tol)
