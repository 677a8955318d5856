"""
Spatial weight matrices and the shared algebra of the spatial lag probit.

The reduced form of the latent model is

    y* = (I - rho W)^{-1} X beta + e,    Var(e) = [(I - rho W)'(I - rho W)]^{-1}

with unit error variance.  Every estimator in the package needs some of
(I - rho W)^{-1} v, the diagonal of Var(e) and the log-determinant
ln|I - rho W|; they are collected here.

A row-normalized matrix built from a symmetric contiguity pattern A with
degrees g is similar to the symmetric matrix G^{-1/2} A G^{-1/2}.  Its
spectrum is therefore real and it factors as W = L diag(omega) R with
R = L^{-1}, which turns every solve at a new rho into two matrix-vector
products.  Asymmetric patterns fall back to dense LU factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from .errors import DomainError, IsolatedUnitError, NonPositiveVarianceError, SingularSystemError

__all__ = [
    "WeightMatrix",
    "RhoDomain",
    "LagOperator",
    "build_distance_weights",
    "draw_distance_weights",
    "ord_log_det",
    "lag_solve",
    "error_covariance",
    "std_devs",
    "standardized_index",
]

_IMAG_TOL = 1e-10


@dataclass(frozen=True)
class RhoDomain:
    """Open interval (1/omega_min, 1) on which I - rho W is invertible."""

    lower: float
    upper: float = 1.0

    def contains(self, rho: float) -> bool:
        return self.lower < rho < self.upper

    def interior(self, margin: float = 1e-6) -> tuple[float, float]:
        return self.lower + margin, self.upper - margin


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Binary contiguity matrix together with its row-normalized form.

    Use :meth:`from_adjacency` rather than the constructor; it validates the
    pattern and computes the spectrum.
    """

    raw: np.ndarray
    normalized: np.ndarray
    eigenvalues: np.ndarray

    @classmethod
    def from_adjacency(cls, raw) -> "WeightMatrix":
        raw = np.array(raw, dtype=float)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ValueError("contiguity matrix must be square")
        if not np.isin(raw, (0.0, 1.0)).all():
            raise ValueError("contiguity matrix entries must be 0 or 1")
        if np.any(np.diag(raw) != 0):
            raise ValueError("contiguity matrix must have a zero diagonal")
        degree = raw.sum(axis=1)
        isolated = np.flatnonzero(degree == 0)
        if isolated.size:
            raise IsolatedUnitError(f"{isolated.size} unit(s) without neighbours, e.g. unit {isolated[0]}")
        normalized = raw / degree[:, None]
        raw.flags.writeable = False
        normalized.flags.writeable = False

        if np.array_equal(raw, raw.T):
            root = np.sqrt(degree)
            omega, vecs = np.linalg.eigh(raw / np.outer(root, root))
            eigenvalues = omega
            spectral = (vecs / root[:, None], vecs.T * root[None, :])
        else:
            eigenvalues = np.linalg.eigvals(normalized)
            if np.all(np.abs(eigenvalues.imag) <= _IMAG_TOL):
                eigenvalues = np.sort(eigenvalues.real)
            spectral = None
        eigenvalues.flags.writeable = False
        obj = cls(raw, normalized, eigenvalues)
        object.__setattr__(obj, "_spectral", spectral)
        return obj

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @property
    def spectral(self):
        """``(L, R)`` with W = L diag(omega) R, or None for asymmetric patterns."""
        return getattr(self, "_spectral", None)

    @cached_property
    def domain(self) -> RhoDomain:
        # a row-stochastic W has spectral radius 1, so (-1, 1) is always
        # admissible; only a negative real eigenvalue can say more
        real = _real_eigenvalues(self.eigenvalues)
        negative = real[real < 0]
        lower = 1.0 / negative.min() if negative.size else -1.0
        return RhoDomain(lower=min(lower, -1.0), upper=1.0)

    @cached_property
    def gram_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """(W + W', W'W), so that (I - rho W)'(I - rho W) = I - rho(W + W') + rho^2 W'W."""
        w = self.normalized
        return w + w.T, w.T @ w

    def lag_operator(self, rho: float) -> "LagOperator":
        return LagOperator(self, rho)

    @cached_property
    def sparse(self) -> sps.csr_matrix:
        return sps.csr_matrix(self.normalized)

    def lag(self, v: np.ndarray) -> np.ndarray:
        """W v (sparse product)."""
        return self.sparse @ v


def _real_eigenvalues(eigenvalues: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(eigenvalues):
        return eigenvalues.real[np.abs(eigenvalues.imag) <= _IMAG_TOL]
    return eigenvalues


class LagOperator:
    """(I - rho W) and its inverse at one fixed value of rho.

    Expensive quantities (the explicit inverse, the error variances) are
    computed on first access and cached.
    """

    def __init__(self, W: WeightMatrix, rho: float):
        rho = float(rho)
        if not np.isfinite(rho) or not W.domain.contains(rho):
            raise DomainError(f"rho={rho} outside ({W.domain.lower:.6g}, {W.domain.upper:.6g})")
        self.W = W
        self.rho = rho
        if rho == 0.0:
            self._gain = self._lu = None
        elif W.spectral is not None:
            self._gain = 1.0 / (1.0 - rho * W.eigenvalues)
            self._lu = None
        else:
            self._gain = None
            self._lu = self._factor()

    def _factor(self):
        psi = np.eye(self.W.n) - self.rho * self.W.normalized
        lu = sla.lu_factor(psi, check_finite=False)
        if np.any(np.diag(lu[0]) == 0.0):
            raise SingularSystemError(f"I - rho W is singular at rho={self.rho}")
        return lu

    @cached_property
    def psi(self) -> np.ndarray:
        return np.eye(self.W.n) - self.rho * self.W.normalized

    def apply(self, v: np.ndarray) -> np.ndarray:
        """(I - rho W) v."""
        return v - self.rho * self.W.lag(v)

    def solve(self, v: np.ndarray) -> np.ndarray:
        """(I - rho W)^{-1} v for a vector or a matrix of columns."""
        v = np.asarray(v, dtype=float)
        if self.rho == 0.0:
            return v.copy()
        if self._gain is not None:
            left, right = self.W.spectral
            g = self._gain if v.ndim == 1 else self._gain[:, None]
            return left @ (g * (right @ v))
        return sla.lu_solve(self._lu, v, check_finite=False)

    @cached_property
    def inverse(self) -> np.ndarray:
        if self.rho == 0.0:
            return np.eye(self.W.n)
        if self._gain is not None:
            left, right = self.W.spectral
            return (left * self._gain) @ right
        return sla.lu_solve(self._lu, np.eye(self.W.n), check_finite=False)

    @cached_property
    def covariance(self) -> np.ndarray:
        """Var(e) = (I - rho W)^{-1} (I - rho W)^{-T}."""
        m = self.inverse
        cov = m @ m.T
        return 0.5 * (cov + cov.T)

    @cached_property
    def variances(self) -> np.ndarray:
        """Diagonal of Var(e), without forming the full covariance."""
        return np.einsum("ij,ij->i", self.inverse, self.inverse)

    @cached_property
    def sd(self) -> np.ndarray:
        return std_devs_from_variances(self.variances)

    def log_det(self) -> float:
        return ord_log_det(self.rho, self.W.eigenvalues)


def build_distance_weights(points, d: float) -> WeightMatrix:
    """Connect every pair of points closer than ``d`` (Euclidean).

    Raises
    ------
    IsolatedUnitError
        If some point has no neighbour within ``d``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        raise ValueError("points must be an (n, 2) array with n >= 2")
    if not 0.0 < d < np.sqrt(2.0):
        raise ValueError("distance threshold must lie in (0, sqrt(2))")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    raw = (dist < d).astype(float)
    np.fill_diagonal(raw, 0.0)
    return WeightMatrix.from_adjacency(raw)


def draw_distance_weights(n: int, d: float, rng: np.random.Generator, max_attempts: int = 1000):
    """Uniform points on the unit square, redrawn until no unit is isolated.

    Returns the weight matrix, the accepted points and the number of draws used.
    """
    for attempt in range(1, max_attempts + 1):
        points = rng.random((n, 2))
        try:
            return build_distance_weights(points, d), points, attempt
        except IsolatedUnitError:
            continue
    raise IsolatedUnitError(f"no connected draw for n={n}, d={d} after {max_attempts} attempts")


def ord_log_det(rho: float, spectrum) -> float:
    """ln|I - rho W| as sum_i ln(1 - rho omega_i).

    Complex eigenvalues come in conjugate pairs whose product is real and
    positive, so only the real part of the sum is kept.
    """
    spectrum = np.asarray(spectrum)
    real = _real_eigenvalues(spectrum)
    if np.any(1.0 - rho * real <= 0.0):
        raise DomainError(f"1 - rho*omega <= 0 for rho={rho}")
    if rho == 0.0:
        return 0.0
    return float(np.sum(np.log(np.abs(1.0 - rho * spectrum))))


def lag_solve(W: WeightMatrix, rho: float, v) -> np.ndarray:
    """Solve (I - rho W) x = v."""
    return W.lag_operator(rho).solve(v)


def error_covariance(W: WeightMatrix, rho: float) -> np.ndarray:
    return W.lag_operator(rho).covariance


def std_devs_from_variances(variances: np.ndarray) -> np.ndarray:
    variances = np.asarray(variances, dtype=float)
    if np.any(~(variances > 0.0)):
        raise NonPositiveVarianceError("variances must be strictly positive")
    return np.sqrt(variances)


def std_devs(sigma) -> np.ndarray:
    """Square roots of the diagonal of a covariance matrix."""
    return std_devs_from_variances(np.diag(np.asarray(sigma, dtype=float)))


def standardized_index(W: WeightMatrix, rho: float, X, beta) -> np.ndarray:
    """q = D^{-1} (I - rho W)^{-1} X beta, D the error standard deviations."""
    op = W.lag_operator(rho)
    return op.solve(np.asarray(X) @ np.asarray(beta, dtype=float)) / op.sd
