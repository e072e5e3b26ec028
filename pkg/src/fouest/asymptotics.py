"""Limiting covariances of the moment vector and of the estimator, and
determinant scans of the forward-map Jacobian.

With rho_m = E(Y_0 Y_{mh}) and the Gaussian fourth-moment (Wick) identity,
n Cov(eta_i, eta_j) converges to Sigma(i, j).  ``form="exact"`` evaluates
the limits of the statistics as they are computed by
:func:`fouest.moments.compute_moments`:

    Sigma(1,1) = 2 rho_0^2 + 4 sum_{m>=1} rho_m^2
    Sigma(1,2) = 4 sum_{m>=0} rho_m rho_{m+1}
    Sigma(2,2) = rho_0^2 + 2 sum_{m>=1} rho_m^2 + rho_1^2 + 2 sum_{m>=0} rho_m rho_{m+2}
    Sigma(3,3) = Sigma(2,2) with h replaced by 2h
    Sigma(1,3) = rho_1^2 + 2 sum_{m>=0} rho_m rho_{m+2}
    Sigma(2,3) = sum_{m>=0} rho_m rho_{m+1} + sum_{m>=0} rho_m rho_{m+3} + rho_1 rho_2

``form="simplified"`` is the structure in which all diagonal entries
equal Sigma(1,1), Sigma(2,3) = Sigma(1,2) and Sigma(1,3) is Sigma(1,2) with
lag 2h.  It agrees with the exact form on Sigma(1,1) and Sigma(1,2) only.

Series are summed explicitly up to a truncation index M and the remainder is
added in closed form: beyond the crossover lag rho is a finite sum of powers
t^(2H-2n), so every tail is a combination of Hurwitz zeta values
(convergent for H < 3/4).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import binom, zeta

from ._csvio import write_table
from .errors import FouError, IdentifiabilityError, ValidationError
from .estimator import PARAM_NAMES, forward_map, jacobian
from .fou import (
    ModelParams,
    _expansion_terms,
    autocovariance_sequence,
    crossover_lag,
    stationary_variance,
)

MOMENT_LABELS = ("eta0", "eta1", "eta2")
SIGMA_FORMS = ("exact", "simplified")

_MIN_TRUNCATION = 64
_BINOMIAL_TERMS = 16
_MAX_TAIL_POWERS = 8
_SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class Matrix3:
    """A 3x3 real matrix with row/column labels and optional diagnostic flags."""

    entries: np.ndarray = field(repr=False)
    labels: tuple[str, str, str] = MOMENT_LABELS
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.shape != (3, 3):
            raise ValidationError(f"expected a 3x3 matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise FouError("matrix has non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    def __getitem__(self, idx):
        return self.entries[idx]

    def as_array(self) -> np.ndarray:
        return self.entries.copy()

    def is_symmetric(self, tol: float = _SYMMETRY_TOL) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T)) <= tol)

    def to_csv(self, path, comments=()) -> None:
        write_table(path, self.labels, [list(map(float, r)) for r in self.entries], comments)


# ---------------------------------------------------------------- Sigma


def _check_clt_domain(params: ModelParams) -> tuple[str, ...]:
    if params.hurst >= 0.75:
        raise ValidationError(
            f"series divergent: the moment CLT covariance requires H < 3/4, got H={params.hurst}"
        )
    if params.hurst == 0.5:
        return ("H=1/2 lies outside the CLT hypothesis; values follow the classical OU geometric series",)
    return ()


def _power_coefficients(params: ModelParams, step: float, t_ref: float) -> tuple[np.ndarray, np.ndarray]:
    """(d_n, e_n) with rho(step * m) ~ sum_n d_n m^(e_n) for large m.

    The number of powers is the optimal truncation of the expansion at
    ``t_ref``, capped at ``_MAX_TAIL_POWERS``.
    """
    terms = _expansion_terms(params, np.array([t_ref]), _MAX_TAIL_POWERS)[0]
    mags = np.abs(terms)
    n_keep = int(np.argmin(np.where(np.isfinite(mags), mags, np.inf))) + 1
    n = np.arange(1, n_keep + 1)
    e = 2.0 * params.hurst - 2.0 * n
    # terms = d_n * t_ref^e_n with t_ref = step * M
    d = terms[:n_keep] * (step / t_ref) ** e
    return d, e


def _tail_sum(d: np.ndarray, e: np.ndarray, k: int, M: int) -> float:
    """sum_{m>M} rho(step m) rho(step (m+k)) from the power form of rho."""
    if not np.any(d):
        return 0.0
    j = np.arange(_BINOMIAL_TERMS if k else 1)
    parts = []
    for dn, en in zip(d, e):
        for dq, eq in zip(d, e):
            # (m+k)^eq = m^eq sum_j binom(eq, j) k^j m^-j
            coef = binom(eq, j) * float(k) ** j
            expo = en + eq - j
            parts.extend(dn * dq * coef * zeta(-expo, M + 1))
    return math.fsum(parts)


@dataclass(frozen=True)
class _SeriesPlan:
    rho: np.ndarray  # rho(j h), j = 0 .. 2(M+3)
    M: int
    tails: dict  # step multiplier -> (d, e)


def _series(plan: _SeriesPlan, k: int, s: int) -> float:
    """sum_{m>=0} rho(s m h) rho(s (m+k) h)."""
    m = np.arange(plan.M + 1)
    head = math.fsum(plan.rho[s * m] * plan.rho[s * (m + k)])
    d, e = plan.tails[s]
    return head + _tail_sum(d, e, k, plan.M)


def _plan(params: ModelParams, h: float, tol: float, truncation: int | None) -> _SeriesPlan:
    v0 = stationary_variance(params)
    acov_tol = max(min(1e-13 * v0, tol / (64.0 * v0)), 1e-15 * v0)
    if truncation is None:
        M = max(crossover_lag(params, h, acov_tol) + 1, _MIN_TRUNCATION)
    else:
        if int(truncation) != truncation or truncation < 8:
            raise ValidationError(f"truncation must be an integer >= 8, got {truncation!r}")
        M = int(truncation)
    rho = autocovariance_sequence(params, h, 2 * (M + 3) + 1, acov_tol)
    tails = {s: _power_coefficients(params, s * h, s * h * M) for s in (1, 2)}
    return _SeriesPlan(rho, M, tails)


def sigma_matrix(params: ModelParams, h: float, tol: float | None = None, form: str = "exact",
                 truncation: int | None = None) -> Matrix3:
    """Limiting covariance Sigma of sqrt(n) (eta0, eta1, eta2).

    Parameters
    ----------
    params, h
        Model parameters and observation lag.
    tol : float, optional
        Target absolute accuracy of every entry (default 1e-10 times the
        squared stationary variance).
    form : {"exact", "simplified"}
        See the module docstring.
    truncation : int, optional
        Explicit summation index M; the remainder is summed analytically.
        Defaults to the autocovariance crossover lag (at least 64).

    Raises
    ------
    ValidationError
        For H >= 3/4, where the series diverge.
    """
    if not (h > 0):
        raise ValidationError(f"h must be positive, got {h!r}")
    if form not in SIGMA_FORMS:
        raise ValidationError(f"form must be one of {SIGMA_FORMS}, got {form!r}")
    flags = _check_clt_domain(params)
    v0 = stationary_variance(params)
    if tol is None:
        tol = 1e-10 * v0 * v0
    if not (tol > 0):
        raise ValidationError("tol must be positive")
    plan = _plan(params, float(h), float(tol), truncation)
    r0, r1, r2 = plan.rho[0], plan.rho[1], plan.rho[2]

    t01 = _series(plan, 0, 1)
    t11 = _series(plan, 1, 1)
    s11 = 4.0 * t01 - 2.0 * r0 * r0
    s12 = 4.0 * t11
    if form == "simplified":
        s22 = s33 = s11
        s23 = s12
        s13 = 4.0 * _series(plan, 1, 2)
    else:
        t21 = _series(plan, 2, 1)
        s22 = 2.0 * t01 - r0 * r0 + r1 * r1 + 2.0 * t21
        s33 = 2.0 * _series(plan, 0, 2) - r0 * r0 + r2 * r2 + 2.0 * _series(plan, 2, 2)
        s13 = r1 * r1 + 2.0 * t21
        s23 = t11 + _series(plan, 3, 1) + r1 * r2
    S = np.array([[s11, s12, s13], [s12, s22, s23], [s13, s23, s33]])
    return Matrix3(S, MOMENT_LABELS, flags)


def sigma_matrix_ou(params: ModelParams, h: float, form: str = "exact") -> Matrix3:
    """Closed form of :func:`sigma_matrix` for H = 1/2 (geometric series).

    The Hurst value of ``params`` is ignored; rho_m = c r^m with
    c = sigma^2/(2 theta) and r = exp(-theta h).
    """
    if form not in SIGMA_FORMS:
        raise ValidationError(f"form must be one of {SIGMA_FORMS}, got {form!r}")
    c = params.sigma**2 / (2.0 * params.theta)
    r = math.exp(-params.theta * h)

    def T(k, s):
        # sum_m rho(s m h) rho(s (m+k) h) = c^2 r^(s k) / (1 - r^(2 s))
        return c * c * r ** (s * k) / (1.0 - r ** (2 * s))

    s11 = 4.0 * T(0, 1) - 2.0 * c * c
    s12 = 4.0 * T(1, 1)
    if form == "simplified":
        s22 = s33 = s11
        s23 = s12
        s13 = 4.0 * T(1, 2)
    else:
        r1, r2 = c * r, c * r * r
        s22 = 2.0 * T(0, 1) - c * c + r1 * r1 + 2.0 * T(2, 1)
        s33 = 2.0 * T(0, 2) - c * c + r2 * r2 + 2.0 * T(2, 2)
        s13 = r1 * r1 + 2.0 * T(2, 1)
        s23 = T(1, 1) + T(3, 1) + r1 * r2
    return Matrix3(np.array([[s11, s12, s13], [s12, s22, s23], [s13, s23, s33]]), MOMENT_LABELS)


# ---------------------------------------------------------------- delta method


def elasticity_det(params: ModelParams, h: float) -> float:
    """det of d log f_i / d log p_j; a scale-free identifiability measure."""
    J = jacobian(params, h)
    f = forward_map(params, h).as_array()
    return float(np.linalg.det(J * params.as_array()[None, :] / f[:, None]))


def estimator_covariance(params: ModelParams, h: float, tol: float | None = None, form: str = "exact",
                         min_elasticity_det: float = 1e-10) -> Matrix3:
    """Delta-method covariance J^-1 Sigma J^-T of sqrt(n) (theta~, H~, sigma~).

    Raises :class:`IdentifiabilityError` when the log-log Jacobian has
    |det| below ``min_elasticity_det``.
    """
    S = sigma_matrix(params, h, tol, form)
    J = jacobian(params, h)
    f = forward_map(params, h).as_array()
    E = J * params.as_array()[None, :] / f[:, None]
    if not (abs(np.linalg.det(E)) >= min_elasticity_det):
        raise IdentifiabilityError("near-singular Jacobian; estimator not identifiable here")
    A = np.linalg.solve(J, S.as_array())
    C = np.linalg.solve(J, A.T)
    C = 0.5 * (C + C.T)
    return Matrix3(C, PARAM_NAMES, S.flags)


# ---------------------------------------------------------------- det scan

_DOMAINS = {
    "theta": (0.0, math.inf),
    "hurst": (0.0, 1.0),
    "sigma": (0.0, math.inf),
}


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    count: int
    log: bool = False

    def __post_init__(self):
        if self.name not in PARAM_NAMES:
            raise ValidationError(f"axis name must be one of {PARAM_NAMES}, got {self.name!r}")
        if int(self.count) != self.count or self.count < 2:
            raise ValidationError(f"axis {self.name}: count must be an integer >= 2, got {self.count!r}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValidationError(f"axis {self.name}: need finite lo < hi, got ({self.lo}, {self.hi})")
        dlo, dhi = _DOMAINS[self.name]
        if not (dlo < self.lo and self.hi < dhi):
            raise ValidationError(f"axis {self.name}: range ({self.lo}, {self.hi}) leaves ({dlo}, {dhi})")

    def points(self) -> np.ndarray:
        if self.log:
            return np.geomspace(self.lo, self.hi, int(self.count))
        return np.linspace(self.lo, self.hi, int(self.count))


@dataclass(frozen=True)
class ScanGrid:
    """Two free parameter axes, the third parameter fixed, and the lag h."""

    axis1: Axis
    axis2: Axis
    fixed_value: float
    h: float = 0.5

    def __post_init__(self):
        if self.axis1.name == self.axis2.name:
            raise ValidationError("the two scan axes must be different parameters")
        dlo, dhi = _DOMAINS[self.fixed_name]
        if not (dlo < self.fixed_value < dhi):
            raise ValidationError(f"fixed {self.fixed_name}={self.fixed_value} outside ({dlo}, {dhi})")
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValidationError(f"h must be positive, got {self.h!r}")

    @property
    def fixed_name(self) -> str:
        return next(n for n in PARAM_NAMES if n not in (self.axis1.name, self.axis2.name))

    def params_at(self, v1: float, v2: float) -> ModelParams:
        vals = {self.axis1.name: v1, self.axis2.name: v2, self.fixed_name: self.fixed_value}
        return ModelParams(vals["theta"], vals["hurst"], vals["sigma"])

    def describe(self) -> list[str]:
        a, b = self.axis1, self.axis2
        return [
            f"p1={a.name} lo={a.lo!r} hi={a.hi!r} count={a.count} log={int(a.log)}",
            f"p2={b.name} lo={b.lo!r} hi={b.hi!r} count={b.count} log={int(b.log)}",
            f"fixed {self.fixed_name}={self.fixed_value!r} h={self.h!r}",
        ]


@dataclass(frozen=True)
class ScanResult:
    grid: ScanGrid
    rows: list  # (p1, p2, detJ) with detJ = nan on failure
    failures: list  # (row index, message)

    def to_csv(self, path, comments=()) -> None:
        notes = list(comments) + self.grid.describe()
        notes += [f"failed row {i}: {msg}" for i, msg in self.failures]
        write_table(path, ("p1", "p2", "detJ"), self.rows, notes)


def jacobian_det(params: ModelParams, h: float) -> float:
    """det of the forward-map Jacobian, columns ordered (theta, H, sigma)."""
    return float(np.linalg.det(jacobian(params, h)))


def _scan_point(args) -> tuple[float, str]:
    grid, v1, v2 = args
    try:
        return jacobian_det(grid.params_at(v1, v2), grid.h), ""
    except FouError as exc:
        return math.nan, str(exc)


def det_scan(grid: ScanGrid, workers: int = 1) -> ScanResult:
    """det J over the grid, axis1 outer and axis2 inner.

    A failing point yields detJ = nan and is listed in ``failures``; the
    scan continues.  With ``workers > 1`` points are evaluated in a process
    pool; the output order does not depend on the schedule.
    """
    tasks = [(grid, float(a), float(b)) for a in grid.axis1.points() for b in grid.axis2.points()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_point, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_scan_point(t) for t in tasks]
    rows, failures = [], []
    for i, ((_, a, b), (det, msg)) in enumerate(zip(tasks, results)):
        rows.append((a, b, det))
        if msg:
            failures.append((i, msg))
    return ScanResult(grid, rows, failures)
