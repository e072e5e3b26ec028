"""The fractional Ornstein-Uhlenbeck model dX = -theta X dt + sigma dB^H.

Covers the stationary autocovariance

    E(Y_0 Y_t) = sigma^2 Gamma(2H+1) sin(pi H) / (2 pi)
                 * int_{-inf}^{inf} cos(x t) |x|^(1-2H) / (theta^2 + x^2) dx,

its large-lag power expansion, and path simulation either by Euler stepping
on a refined fGN grid (started at X_0 = 0) or by an exact draw of the
stationary sequence.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from scipy.special import gamma as gamma_fn

from ._quadrature import reduced_cosine_integral
from .errors import FactorizationError, FouError, QuadratureError, ValidationError
from .fgn import Hurst, NoiseGrid, make_rng, sample_fgn, sample_stationary

SCHEMES = ("euler_fine_grid", "stationary_exact")

# lag (in units of 1/theta) below which the power expansion is never trusted
_MIN_CROSSOVER_TAU = 10.0
_MAX_CROSSOVER_LAGS = 200_000
_MAX_EXPANSION_TERMS = 60
# default accuracy of the dimensionless integral K(H, tau)
_K_TOL = 1e-13


@dataclass(frozen=True)
class ModelParams:
    """Drift ``theta`` > 0, Hurst index ``hurst`` in (0, 1), diffusion ``sigma`` > 0."""

    theta: float
    hurst: float
    sigma: float

    def __post_init__(self):
        for name in ("theta", "sigma"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be a positive finite number, got {v!r}")
        Hurst(self.hurst)
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "hurst", float(self.hurst))
        object.__setattr__(self, "sigma", float(self.sigma))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.hurst, self.sigma])

    @classmethod
    def from_array(cls, p) -> "ModelParams":
        return cls(float(p[0]), float(p[1]), float(p[2]))


@dataclass(frozen=True)
class SimulationPlan:
    n_obs: int
    h: float
    substeps: int = 32
    seed: int = 0
    scheme: str = "stationary_exact"
    replication: int = 0

    def __post_init__(self):
        if int(self.n_obs) != self.n_obs or self.n_obs < 3:
            raise ValidationError(f"n_obs must be an integer >= 3, got {self.n_obs!r}")
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValidationError(f"h must be positive, got {self.h!r}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValidationError(f"substeps must be an integer >= 1, got {self.substeps!r}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class ObservationSeries:
    """Equally spaced observations X_0, X_h, ..., X_{Kh}."""

    h: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 3:
            raise ValidationError("an observation series needs at least 3 values")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("observation series contains non-finite values")
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValidationError(f"h must be positive, got {self.h!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.values.size)

    def to_csv(self, path, header_comments: list[str] | None = None) -> None:
        """Write ``t,x`` rows; optional ``# key=value`` comment lines go first."""
        with open(path, "w", newline="") as fh:
            for line in header_comments or ():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x"])
            for k, x in enumerate(self.values):
                w.writerow([repr(float(k * self.h)), repr(float(x))])

    @classmethod
    def read_csv(cls, path) -> "ObservationSeries":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
        if not rows or [c.strip() for c in rows[0]] != ["t", "x"]:
            raise ValidationError(f"{path}: expected header 't,x'")
        try:
            data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        except ValueError as exc:
            raise ValidationError(f"{path}: malformed row ({exc})") from exc
        if data.shape[0] < 3:
            raise ValidationError(f"{path}: an observation series needs at least 3 rows")
        steps = np.diff(data[:, 0])
        h = float(steps[0])
        if h <= 0 or not np.allclose(steps, h, rtol=1e-9, atol=0):
            raise ValidationError(f"{path}: time column must be equally spaced and increasing")
        return cls(h, data[:, 1])


def stationary_variance(params: ModelParams) -> float:
    """Closed form E(Y_0^2) = sigma^2 theta^(-2H) Gamma(2H+1) / 2."""
    H = params.hurst
    return 0.5 * params.sigma**2 * params.theta ** (-2 * H) * float(gamma_fn(2 * H + 1))


def _spectral_scale(params: ModelParams) -> float:
    # prefactor of K(H, theta t); the factor 2 folds the even integrand onto [0, inf)
    H = params.hurst
    return params.sigma**2 * float(gamma_fn(2 * H + 1)) * math.sin(math.pi * H) / math.pi * params.theta ** (-2 * H)


def fou_autocovariance(params: ModelParams, t: float, tol: float = 1e-10) -> float:
    """Stationary autocovariance E(Y_0 Y_t) with absolute error at most ``tol``.

    Raises
    ------
    QuadratureError
        If the quadrature error estimate cannot be pushed below ``tol``.
    """
    if not (tol > 0):
        raise ValidationError("tol must be positive")
    if not (math.isfinite(t) and t >= 0):
        raise ValidationError(f"lag t must be finite and non-negative, got {t!r}")
    scale = _spectral_scale(params)
    tau = params.theta * t
    requested = tol / scale
    # K is computed to a sigma-independent accuracy whenever that is at least as
    # tight as requested, so sigma enters only through the prefactor
    try:
        if requested > _K_TOL:
            try:
                return scale * reduced_cosine_integral(params.hurst, tau, _K_TOL)[0]
            except QuadratureError:
                pass
        return scale * reduced_cosine_integral(params.hurst, tau, requested)[0]
    except QuadratureError as exc:
        raise QuadratureError(f"autocovariance at t={t}", exc.achieved * scale) from None


def _expansion_terms(params: ModelParams, t: np.ndarray, n_terms: int) -> np.ndarray:
    """Terms n = 1..n_terms of the large-lag expansion, shape (len(t), n_terms)."""
    H, theta = params.hurst, params.theta
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = np.arange(1, n_terms + 1)
    # prod_{k=0}^{2n-1} (2H - k) built incrementally: factor (2H-2n+2)(2H-2n+1) at step n
    factors = (2 * H - 2 * n + 2) * (2 * H - 2 * n + 1)
    coef = np.cumprod(factors)
    with np.errstate(over="ignore", invalid="ignore"):
        logs = np.log(t)[:, None] * (2 * H - 2 * n)[None, :] - 2 * n * math.log(theta)
        terms = 0.5 * params.sigma**2 * coef[None, :] * np.exp(logs)
    return terms


def fou_autocov_tail_expansion(params: ModelParams, t: float, N: int) -> float:
    """N-term large-lag expansion of E(Y_0 Y_t).

    (1/2) sigma^2 sum_{n=1}^{N} theta^(-2n) prod_{k=0}^{2n-1}(2H - k) t^(2H-2n);
    the leading term is sigma^2 H (2H-1) theta^-2 t^(2H-2).
    """
    if not (t > 0):
        raise ValidationError("the tail expansion needs t > 0")
    if int(N) != N or N < 1:
        raise ValidationError("N must be a positive integer")
    return float(np.sum(_expansion_terms(params, np.array([t]), int(N))[0]))


def expansion_optimal(params: ModelParams, t) -> tuple[np.ndarray, np.ndarray]:
    """Optimally truncated expansion at lags ``t`` and the size of the last kept term."""
    terms = _expansion_terms(params, t, _MAX_EXPANSION_TERMS)
    mags = np.abs(terms)
    mags = np.where(np.isfinite(mags), mags, np.inf)
    stop = np.argmin(mags, axis=1)
    keep = np.arange(terms.shape[1])[None, :] <= stop[:, None]
    value = np.sum(np.where(keep, terms, 0.0), axis=1)
    smallest = mags[np.arange(terms.shape[0]), stop]
    return value, smallest


@dataclass(frozen=True)
class _LagTable:
    values: np.ndarray  # quadrature values at lags 0..crossover-1
    crossover: int  # first lag index served by the expansion


@lru_cache(maxsize=128)
def _lag_table(params: ModelParams, h: float, tol: float) -> _LagTable:
    vals = [fou_autocovariance(params, 0.0, tol)]
    m, gap = 1, math.inf
    while True:
        t = m * h
        q = fou_autocovariance(params, t, tol)
        if params.theta * t >= _MIN_CROSSOVER_TAU:
            e, smallest = expansion_optimal(params, np.array([t]))
            gap = abs(q - e[0])
            if gap <= tol and smallest[0] <= tol:
                return _LagTable(np.array(vals), m)
        vals.append(q)
        m += 1
        if m > _MAX_CROSSOVER_LAGS:
            raise QuadratureError(
                f"quadrature and large-lag expansion never agreed up to lag {m * h}", gap
            )


def crossover_lag(params: ModelParams, h: float, tol: float = 1e-12) -> int:
    """Lag index from which :func:`autocovariance_sequence` uses the expansion."""
    return _lag_table(params, float(h), float(tol)).crossover


def autocovariance_sequence(params: ModelParams, h: float, n_lags: int, tol: float | None = None) -> np.ndarray:
    """E(Y_0 Y_{kh}) for k = 0..n_lags-1.

    Lags below the crossover come from quadrature; beyond it the optimally
    truncated large-lag expansion agrees with quadrature to ``tol`` (default
    1e-12 times the stationary variance) and is used instead.
    """
    if tol is None:
        tol = 1e-12 * stationary_variance(params)
    table = _lag_table(params, float(h), float(tol))
    out = np.empty(n_lags)
    k = min(n_lags, table.crossover)
    out[:k] = table.values[:k]
    if n_lags > k:
        lags = h * np.arange(k, n_lags)
        out[k:] = expansion_optimal(params, lags)[0]
    return out


@lru_cache(maxsize=16)
def _stationary_embedding(params: ModelParams, h: float, n: int):
    from .fgn import _circulant_sqrt_eigs

    return _circulant_sqrt_eigs(lambda m: autocovariance_sequence(params, h, m), n)


def simulate_fou(params: ModelParams, plan: SimulationPlan) -> ObservationSeries:
    """Simulate ``plan.n_obs`` observations spaced ``plan.h`` apart.

    ``euler_fine_grid`` runs Euler-Maruyama on step h/substeps from X_0 = 0,
    driven by exact fGN, and keeps every ``substeps``-th point (weak bias of
    order h/substeps).  ``stationary_exact`` draws (Y_0, Y_h, ...) exactly
    from the Toeplitz covariance built from :func:`autocovariance_sequence`.
    """
    n = int(plan.n_obs)
    if plan.scheme == "stationary_exact":
        rng = make_rng(plan.seed, plan.replication)
        emb = _stationary_embedding(params, float(plan.h), n)
        try:
            vals = sample_stationary(lambda m: autocovariance_sequence(params, plan.h, m), n, rng, _embedding=emb)
        except FactorizationError as exc:
            raise FactorizationError(f"stationary fOU covariance: {exc}") from None
    else:
        m = int(plan.substeps)
        dt = plan.h / m
        noise = sample_fgn(params.hurst, NoiseGrid((n - 1) * m, dt, plan.seed, plan.replication))
        # X_{j+1} = (1 - theta dt) X_j + sigma dB_j, X_0 = 0
        fine = lfilter([1.0], [1.0, -(1.0 - params.theta * dt)], params.sigma * noise)
        vals = np.concatenate([[0.0], fine[m - 1 :: m]])
    if not np.all(np.isfinite(vals)):
        raise FouError("simulated path contains non-finite values")
    return ObservationSeries(plan.h, vals)
