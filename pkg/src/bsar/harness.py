"""Monte Carlo driver: replications, bias summaries and result tables."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .dgp import ESTIMATOR_IDS, BsarDataset, McCellConfig, replication_seed, replication_stream, simulate_replication
from .em import EmConfig, fit_em
from .errors import BsarError, ConfigError, EmptyCellError
from .gibbs import GibbsConfig, fit_gibbs, write_chain
from .gmm import GmmConfig, fit_gmm_linearized, fit_gmm_ps
from .results import EstimateResult
from .ris import RisConfig, fit_ris

__all__ = [
    "CSV_HEADER",
    "ReplicationRecord",
    "ParamBias",
    "BiasSummary",
    "estimator_configs",
    "run_replication",
    "run_cell",
    "summarize",
    "render_table",
    "write_records",
    "read_records",
]

CSV_HEADER = "cell_id,replication,estimator,rho_hat,beta0_hat,beta1_hat,converged,seconds,seed"
PARAMETERS = ("rho", "beta0", "beta1")

#: hyperparameter keys understood by :func:`estimator_configs`
HYPERPARAMETER_KEYS = {
    "gibbs.sweeps": int,
    "gibbs.burn_in": int,
    "gibbs.q": float,
    "gibbs.c": float,
    "gibbs.sample_sigma2": bool,
    "ris.R": int,
    "ris.antithetic": bool,
    "em.max_loops": int,
    "em.tolerance": float,
    "optimizer.budget": int,
}


@dataclass(frozen=True)
class ReplicationRecord:
    cell_id: int
    replication: int
    estimator: str
    rho_hat: float
    beta0_hat: float
    beta1_hat: float
    converged: bool
    seconds: float
    seed: int

    @property
    def failed(self) -> bool:
        finite = all(math.isfinite(v) for v in (self.rho_hat, self.beta0_hat, self.beta1_hat))
        return not (finite and self.converged)

    def estimate(self, name: str) -> float:
        return getattr(self, f"{name}_hat")

    def to_row(self) -> list[str]:
        return [str(self.cell_id), str(self.replication), self.estimator, repr(self.rho_hat),
                repr(self.beta0_hat), repr(self.beta1_hat), str(int(self.converged)),
                f"{self.seconds:.6f}", str(self.seed)]

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "ReplicationRecord":
        return cls(
            cell_id=int(row["cell_id"]),
            replication=int(row["replication"]),
            estimator=row["estimator"],
            rho_hat=float(row["rho_hat"]),
            beta0_hat=float(row["beta0_hat"]),
            beta1_hat=float(row["beta1_hat"]),
            converged=row["converged"] == "1",
            seconds=float(row["seconds"]),
            seed=int(row["seed"]),
        )


@dataclass(frozen=True)
class ParamBias:
    mean: float
    sd: float


@dataclass
class BiasSummary:
    """Mean and sample sd of (estimate - truth) over the usable replications.

    A replication is usable when its estimates are finite and the estimator
    reported convergence; the rest are counted in ``n_failed``.  With a
    single usable replication the sd is reported as 0.
    """

    estimator: str
    n_effective: int
    n_failed: int
    bias: dict[str, ParamBias] = field(default_factory=dict)

    @property
    def replications(self) -> int:
        return self.n_effective + self.n_failed


def estimator_configs(hyperparams: Mapping[str, object] | None = None) -> dict[str, object]:
    """Per-estimator config objects from flat ``family.key`` hyperparameters."""
    hp = dict(hyperparams or {})
    unknown = set(hp) - set(HYPERPARAMETER_KEYS)
    if unknown:
        raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
    budget = hp.get("optimizer.budget", 1000)
    try:
        gibbs = GibbsConfig(
            total_sweeps=hp.get("gibbs.sweeps", 3000),
            burn_in=hp.get("gibbs.burn_in", 1000),
            q_hyper=hp.get("gibbs.q", 100.0),
            c_proposal=hp.get("gibbs.c", 0.1),
            sample_sigma2=hp.get("gibbs.sample_sigma2", False),
        )
        em = EmConfig(max_outer_loops=hp.get("em.max_loops", 1000),
                      outer_tolerance=hp.get("em.tolerance", 1e-4), optimizer_budget=budget)
        ris = RisConfig(R=hp.get("ris.R", 1000), antithetic=hp.get("ris.antithetic", True),
                        optimizer_budget=budget)
        gmm = GmmConfig(optimizer_budget=budget)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return {"em": em, "gibbs": gibbs, "ris": ris, "gmm": gmm, "gmmlin": gmm}


def _fitters() -> dict[str, Callable[[BsarDataset, object, np.random.Generator], EstimateResult]]:
    return {
        "em": lambda data, cfg, rng: fit_em(data, cfg),
        "gibbs": lambda data, cfg, rng: fit_gibbs(data, cfg, rng),
        "ris": lambda data, cfg, rng: fit_ris(data, cfg, rng),
        "gmm": lambda data, cfg, rng: fit_gmm_ps(data, cfg),
        "gmmlin": lambda data, cfg, rng: fit_gmm_linearized(data, cfg),
    }


def run_replication(config: McCellConfig, replication: int,
                    chain_dir: str | Path | None = None) -> list[ReplicationRecord]:
    """Simulate one dataset and run every selected estimator on it.

    Estimator ``i`` (position in the fixed estimator list) draws from
    substream ``i + 1`` of the replication's stream.  Estimator errors are
    caught and recorded as a failed replication.
    """
    data = simulate_replication(config, replication)
    configs = estimator_configs(config.hyperparams)
    fitters = _fitters()
    seed = replication_seed(config.master_seed, config.cell_id, replication)
    records = []
    for name in config.estimators:
        cfg = configs[name]
        if name == "gibbs" and chain_dir is not None:
            cfg = GibbsConfig(**{f.name: getattr(cfg, f.name) for f in fields(cfg)} | {"keep_chain": True})
        rng = replication_stream(config.master_seed, config.cell_id, replication,
                                 ESTIMATOR_IDS.index(name) + 1)
        start = time.perf_counter()
        try:
            res = fitters[name](data, cfg, rng)
            rho, beta, converged = res.rho, res.beta, res.converged
        except (BsarError, ArithmeticError, ValueError, np.linalg.LinAlgError):
            rho, beta, converged = math.nan, np.full(2, math.nan), False
            res = None
        seconds = time.perf_counter() - start
        if res is not None and name == "gibbs" and chain_dir is not None:
            write_chain(res, Path(chain_dir) / f"gibbs_cell{config.cell_id}_rep{replication}.csv")
        records.append(ReplicationRecord(
            cell_id=config.cell_id, replication=replication, estimator=name,
            rho_hat=float(rho), beta0_hat=float(beta[0]), beta1_hat=float(beta[1]),
            converged=bool(converged), seconds=seconds, seed=seed,
        ))
    return records


def _sort_key(record: ReplicationRecord):
    return record.cell_id, record.replication, ESTIMATOR_IDS.index(record.estimator)


def run_cell(config: McCellConfig, workers: int = 1,
             chain_dir: str | Path | None = None) -> list[ReplicationRecord]:
    """All replications of a cell, sorted by (cell, replication, estimator).

    With ``workers > 1`` replications are spread over a process pool; the
    records do not depend on the number of workers.
    """
    reps = range(config.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_replication, [config] * len(reps), reps,
                                   [chain_dir] * len(reps)))
    else:
        chunks = [run_replication(config, r, chain_dir) for r in reps]
    return sorted((rec for chunk in chunks for rec in chunk), key=_sort_key)


def summarize(records: Iterable[ReplicationRecord], rho_true: float,
              beta_true=(4.0, -2.0)) -> dict[str, BiasSummary]:
    """Bias summary per estimator, in the fixed estimator order."""
    records = list(records)
    if not records:
        raise EmptyCellError("no records to summarize")
    truth = {"rho": float(rho_true), "beta0": float(beta_true[0]), "beta1": float(beta_true[1])}
    out = {}
    for name in sorted({r.estimator for r in records}, key=ESTIMATOR_IDS.index):
        mine = [r for r in records if r.estimator == name]
        good = [r for r in mine if not r.failed]
        summary = BiasSummary(estimator=name, n_effective=len(good), n_failed=len(mine) - len(good))
        for p in PARAMETERS:
            bias = np.array([r.estimate(p) - truth[p] for r in good])
            if bias.size == 0:
                summary.bias[p] = ParamBias(math.nan, math.nan)
            else:
                sd = float(bias.std(ddof=1)) if bias.size > 1 else 0.0
                summary.bias[p] = ParamBias(float(bias.mean()), sd)
        out[name] = summary
    return out


def _cell_text(summary: BiasSummary | None, parameter: str) -> str:
    if summary is None or summary.n_effective == 0:
        return "n/a"
    b = summary.bias[parameter]
    return f"{b.mean:.3f} ({b.sd:.3f})"


def render_table(summaries: Mapping[str, Mapping[str, BiasSummary]], parameter: str = "rho",
                 fmt: str = "text") -> str:
    """One row per estimator, one column per cell, entries "mean (sd)".

    ``summaries`` maps a cell label (for example ``"rho=0 n=50"``) to the
    output of :func:`summarize` for that cell.
    """
    if parameter not in PARAMETERS:
        raise ValueError(f"unknown parameter {parameter!r}")
    cells = list(summaries)
    estimators = sorted({e for s in summaries.values() for e in s}, key=ESTIMATOR_IDS.index)
    header = ["estimator", *cells]
    rows = [[e, *(_cell_text(summaries[c].get(e), parameter) for c in cells)] for e in estimators]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths)))
             for r in [header, *rows]]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def write_records(records: Iterable[ReplicationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for rec in records:
            writer.writerow(rec.to_row())


def read_records(path) -> list[ReplicationRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if ",".join(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header")
        return [ReplicationRecord.from_row(row) for row in reader]
