"""Monte-Carlo replication harness: simulate -> moments -> estimate."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._csvio import write_table
from .errors import FouError, ValidationError
from .estimator import PARAM_NAMES, SolverConfig, estimate
from .fou import ModelParams, SimulationPlan, simulate_fou
from .moments import compute_moments, required_length

REPLICATION_FIELDS = (
    "replication", "eta0", "eta1", "eta2", "theta", "hurst", "sigma",
    "iterations", "residual", "converged", "detJ", "status",
)


@dataclass(frozen=True)
class StudySpec:
    params: ModelParams
    h: float = 0.5
    n: int = 2**12
    reps: int = 100
    seed: int = 0
    scheme: str = "stationary_exact"
    substeps: int = 32
    config: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if int(self.reps) != self.reps or self.reps < 2:
            raise ValidationError(f"replication count must be >= 2, got {self.reps!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n!r}")
        # surfaces plan validation errors before any work is done
        self.plan(0)

    def plan(self, replication: int) -> SimulationPlan:
        return SimulationPlan(required_length(self.n), self.h, self.substeps, self.seed, self.scheme, replication)


@dataclass(frozen=True)
class Replication:
    index: int
    moments: tuple[float, float, float] | None
    estimate: tuple[float, float, float] | None
    iterations: int
    residual: float
    converged: bool
    det: float
    status: str

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> tuple:
        m = self.moments or (math.nan,) * 3
        e = self.estimate or (math.nan,) * 3
        return (self.index, *m, *e, self.iterations, self.residual, self.converged, self.det, self.status)


def run_replication(spec: StudySpec, index: int) -> Replication:
    """One independent pipeline; the random stream depends only on (seed, index)."""
    try:
        series = simulate_fou(spec.params, spec.plan(index))
        mom = compute_moments(series, spec.n)
    except FouError as exc:
        return Replication(index, None, None, 0, math.nan, False, math.nan, f"simulation failed: {exc}")
    m = (mom.eta0, mom.eta1, mom.eta2)
    try:
        rep = estimate(mom, spec.h, spec.config)
    except FouError as exc:
        return Replication(index, m, None, 0, math.nan, False, math.nan, f"estimation failed: {exc}")
    p = rep.params
    status = "ok" if rep.converged else f"not converged: {rep.message}"
    return Replication(index, m, (p.theta, p.hurst, p.sigma), rep.iterations, rep.residual_norm,
                       rep.converged, rep.jacobian_det_at_solution, status)


def _run_one(args) -> Replication:
    return run_replication(*args)


@dataclass(frozen=True)
class StudySummary:
    spec: StudySpec
    replications: list
    mean: np.ndarray
    sd: np.ndarray
    n_ok: int
    n_failed: int

    def estimates(self) -> np.ndarray:
        """(n_ok, 3) array of successful estimates, in replication order."""
        rows = [r.estimate for r in self.replications if r.ok]
        return np.array(rows, dtype=float).reshape(-1, 3)

    def moment_array(self) -> np.ndarray:
        rows = [r.moments for r in self.replications if r.moments is not None]
        return np.array(rows, dtype=float).reshape(-1, 3)

    def normalized_errors(self) -> np.ndarray:
        """sqrt(n) (estimate - truth) for the successful replications."""
        return math.sqrt(self.spec.n) * (self.estimates() - self.spec.params.as_array()[None, :])

    def summary_rows(self) -> list[tuple]:
        truth = self.spec.params.as_array()
        return [(name, truth[i], self.mean[i], self.sd[i], self.n_ok, self.n_failed)
                for i, name in enumerate(PARAM_NAMES)]

    def write(self, replications_path, summary_path, comments=()) -> None:
        write_table(replications_path, REPLICATION_FIELDS, (r.row() for r in self.replications), comments)
        write_table(summary_path, ("parameter", "truth", "mean", "sd", "n_ok", "n_failed"),
                    self.summary_rows(), comments)


def summarize(spec: StudySpec, replications: list) -> StudySummary:
    ok = [r for r in replications if r.ok]
    est = np.array([r.estimate for r in ok], dtype=float).reshape(-1, 3)
    if len(ok) >= 1:
        mean = est.mean(axis=0)
    else:
        mean = np.full(3, math.nan)
    sd = est.std(axis=0, ddof=1) if len(ok) >= 2 else np.full(3, math.nan)
    return StudySummary(spec, list(replications), mean, sd, len(ok), len(replications) - len(ok))


def mc_study(spec: StudySpec, workers: int = 1) -> StudySummary:
    """Run ``spec.reps`` replications and summarize the successful ones.

    Means and standard deviations (divisor R-1) use converged replications
    only; failures are kept in the per-replication table and counted.
    Results are ordered by replication index whatever the schedule.
    """
    tasks = [(spec, i) for i in range(int(spec.reps))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_run_one, tasks))
    else:
        reps = [_run_one(t) for t in tasks]
    return summarize(spec, reps)
