"""Synthetic spatial lag probit data for the Monte Carlo design.

Every replication owns a Philox stream keyed by (master seed, cell id,
replication index, substream).  Substream 0 generates the data; the
estimators draw their own randomness from further substreams, so adding or
removing an estimator never changes what another one sees.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spatial import WeightMatrix, draw_distance_weights, lag_solve

__all__ = [
    "BsarDataset",
    "McCellConfig",
    "DEFAULT_BETA",
    "DEFAULT_DISTANCE",
    "ESTIMATOR_IDS",
    "replication_stream",
    "replication_seed",
    "generate_covariate",
    "generate_bsar",
    "simulate_replication",
    "write_dataset",
    "read_dataset",
]

DEFAULT_BETA = (4.0, -2.0)
#: distance thresholds used for the two sample sizes of the design
DEFAULT_DISTANCE = {50: 0.21, 500: 0.06}
ESTIMATOR_IDS = ("em", "gibbs", "ris", "gmm", "gmmlin")

COVARIATE_MEAN = 2.0
COVARIATE_SD = 4.0


@dataclass(frozen=True, eq=False)
class BsarDataset:
    """Design matrix (intercept first), binary outcome and weight matrix."""

    X: np.ndarray
    y: np.ndarray
    W: WeightMatrix
    y_star: np.ndarray | None = None
    beta_true: np.ndarray | None = None
    rho_true: float | None = None

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0] or self.W.n != self.y.shape[0]:
            raise ValueError("X, y and W disagree on the number of units")
        if not np.all(self.X[:, 0] == 1.0):
            raise ValueError("first column of X must be the intercept")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("y must be binary")

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class McCellConfig:
    """One cell of the experiment grid."""

    n: int
    rho_true: float
    d: float | None = None
    replications: int = 1000
    master_seed: int = 0
    estimators: tuple[str, ...] = ESTIMATOR_IDS
    hyperparams: dict = field(default_factory=dict)
    cell_id: int = 0
    beta_true: tuple[float, ...] = DEFAULT_BETA

    def __post_init__(self):
        if self.d is None:
            self.d = DEFAULT_DISTANCE.get(self.n)
        if self.d is None:
            raise ValueError(f"no default distance threshold for n={self.n}; pass d")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not -1.0 < self.rho_true < 1.0:
            raise ValueError("rho_true must lie in (-1, 1)")
        if not self.d > 0:
            raise ValueError("d must be positive")
        unknown = set(self.estimators) - set(ESTIMATOR_IDS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        self.estimators = tuple(self.estimators)


def _entropy(master_seed, cell_id, replication_index, substream):
    return [int(master_seed), int(cell_id), int(replication_index), int(substream)]


def replication_stream(master_seed: int, cell_id: int, replication_index: int,
                       substream: int = 0) -> np.random.Generator:
    """Counter-based generator for one replication (and one consumer within it)."""
    seq = np.random.SeedSequence(_entropy(master_seed, cell_id, replication_index, substream))
    return np.random.Generator(np.random.Philox(seq))


def replication_seed(master_seed: int, cell_id: int, replication_index: int) -> int:
    """A 32-bit integer fingerprint of the replication's key, for the output records."""
    seq = np.random.SeedSequence(_entropy(master_seed, cell_id, replication_index, 0))
    return int(seq.generate_state(1)[0])


def generate_covariate(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    return rng.normal(COVARIATE_MEAN, COVARIATE_SD, size=n)


def generate_bsar(W: WeightMatrix, beta, rho: float, rng: np.random.Generator,
                  x: np.ndarray | None = None) -> BsarDataset:
    """y* = (I - rho W)^{-1}(X beta + eps), eps ~ N(0, I); y = 1 iff y* > 0."""
    beta = np.asarray(beta, dtype=float)
    if x is None:
        x = generate_covariate(W.n, rng)
    X = np.column_stack([np.ones(W.n), x])
    eps = rng.standard_normal(W.n)
    y_star = lag_solve(W, rho, X @ beta + eps)
    y = (y_star > 0).astype(np.int64)
    return BsarDataset(X=X, y=y, W=W, y_star=y_star, beta_true=beta, rho_true=float(rho))


def simulate_replication(config: McCellConfig, replication_index: int) -> BsarDataset:
    """Fresh points, weight matrix and data for one replication of a cell."""
    rng = replication_stream(config.master_seed, config.cell_id, replication_index)
    W, _, _ = draw_distance_weights(config.n, config.d, rng)
    return generate_bsar(W, config.beta_true, config.rho_true, rng)


def write_dataset(data: BsarDataset, path) -> tuple[Path, Path]:
    """Write ``path`` (unit,x,y,y_star) and a sidecar ``<path>.edges``.

    The sidecar holds one undirected edge per line as ``i j`` with
    0-based unit indices and i < j.
    """
    path = Path(path)
    if not np.array_equal(data.W.raw, data.W.raw.T):
        raise ValueError("edge-list export needs a symmetric contiguity pattern")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "x", "y", "y_star"])
        y_star = data.y_star if data.y_star is not None else [""] * data.n
        for i in range(data.n):
            ys = "" if y_star[i] == "" else repr(float(y_star[i]))
            writer.writerow([i, repr(float(data.X[i, 1])), int(data.y[i]), ys])
    edges = path.with_name(path.name + ".edges")
    ii, jj = np.nonzero(np.triu(data.W.raw, k=1))
    edges.write_text("".join(f"{i} {j}\n" for i, j in zip(ii, jj)))
    return path, edges


def read_dataset(path) -> BsarDataset:
    """Inverse of :func:`write_dataset`."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = len(rows)
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([int(r["y"]) for r in rows])
    y_star = None
    if all(r["y_star"] != "" for r in rows):
        y_star = np.array([float(r["y_star"]) for r in rows])
    raw = np.zeros((n, n))
    for line in path.with_name(path.name + ".edges").read_text().splitlines():
        if line.strip():
            i, j = map(int, line.split())
            raw[i, j] = raw[j, i] = 1.0
    W = WeightMatrix.from_adjacency(raw)
    return BsarDataset(X=np.column_stack([np.ones(n), x]), y=y, W=W, y_star=y_star)
