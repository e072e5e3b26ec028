"""Ergodic (generalized-moment) estimator of (theta, H, sigma).

The forward map sends parameters to the population moment triple
(E Y_0^2, E Y_0 Y_h, E Y_0 Y_2h); the estimator inverts it at the sample
moments with a damped, box-projected Newton iteration and a deterministic
multistart fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import ConvergenceError, ValidationError
from .fou import ModelParams, fou_autocovariance, stationary_variance
from .moments import MomentVector

PARAM_NAMES = ("theta", "hurst", "sigma")
REPORT_FIELDS = ("theta", "hurst", "sigma", "iterations", "residual", "converged", "detJ")

# relative accuracy requested from the quadrature inside the forward map
_FORWARD_REL_TOL = 1e-12
# converged runs further apart than this (relative, per component) are distinct roots
_DISTINCT_ROOT = 1e-4


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 60
    tol_residual: float = 1e-10
    tol_step: float = 1e-13
    theta_bounds: tuple[float, float] = (0.05, 50.0)
    hurst_bounds: tuple[float, float] = (0.3, 0.75)
    sigma_bounds: tuple[float, float] = (1e-3, 1e3)
    multistart_theta: int = 5
    multistart_hurst: tuple[float, ...] = (0.35, 0.55, 0.7)
    polish_starts: int = 3  # best grid starts always run before the reduction
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 2.0**-20
    fd_step: float = 1e-3

    def __post_init__(self):
        if not (self.tol_residual > 0 and self.tol_step > 0 and self.fd_step > 0):
            raise ValidationError("solver tolerances must be positive")
        if self.max_iter < 1 or self.multistart_theta < 1 or self.polish_starts < 1:
            raise ValidationError("iteration and multistart counts must be positive")
        for name in ("theta_bounds", "hurst_bounds", "sigma_bounds"):
            lo, hi = getattr(self, name)
            if not (0 < lo < hi and math.isfinite(hi)):
                raise ValidationError(f"{name} must satisfy 0 < lo < hi, got {(lo, hi)}")
        if self.hurst_bounds[1] >= 1:
            raise ValidationError("hurst_bounds must lie inside (0, 1)")
        if not (0 < self.backtrack < 1 and 0 < self.armijo < 1):
            raise ValidationError("backtracking parameters must lie in (0, 1)")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.theta_bounds[0], self.hurst_bounds[0], self.sigma_bounds[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.theta_bounds[1], self.hurst_bounds[1], self.sigma_bounds[1]])

    def project(self, p: np.ndarray) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)


@dataclass(frozen=True)
class EstimateReport:
    params: ModelParams
    iterations: int
    residual_norm: float
    converged: bool
    jacobian_det_at_solution: float
    starts_tried: int = 1
    message: str = field(default="", compare=False)
    # other distinct exact roots met during the multistart (the map is not injective everywhere)
    alternative_roots: tuple = field(default=(), compare=False)

    def row(self) -> dict:
        return {
            "theta": self.params.theta,
            "hurst": self.params.hurst,
            "sigma": self.params.sigma,
            "iterations": self.iterations,
            "residual": self.residual_norm,
            "converged": int(self.converged),
            "detJ": self.jacobian_det_at_solution,
        }


def forward_map(params: ModelParams, h: float, tol: float | None = None) -> MomentVector:
    """Population moments (E Y_0^2, E Y_0 Y_h, E Y_0 Y_2h)."""
    if not (h > 0):
        raise ValidationError(f"h must be positive, got {h!r}")
    if tol is None:
        tol = _FORWARD_REL_TOL * stationary_variance(params)
    return MomentVector(
        fou_autocovariance(params, 0.0, tol),
        fou_autocovariance(params, h, tol),
        fou_autocovariance(params, 2.0 * h, tol),
    )


def _f(p: np.ndarray, h: float) -> np.ndarray:
    return forward_map(ModelParams.from_array(p), h).as_array()


def _central(p: np.ndarray, h: float, j: int, step: float) -> np.ndarray:
    e = np.zeros(3)
    e[j] = step
    return (_f(p + e, h) - _f(p - e, h)) / (2.0 * step)


def jacobian(params: ModelParams, h: float, rel_step: float = 1e-3, analytic_sigma: bool = False) -> np.ndarray:
    """Matrix of partials d f_i / d(theta, H, sigma), rows i = moment index.

    Central differences with relative step ``rel_step``, refined once by
    Richardson extrapolation (error O(step^4)).  With ``analytic_sigma`` the
    sigma column is taken from d f_i / d sigma = 2 f_i / sigma instead.
    """
    p = params.as_array()
    J = np.empty((3, 3))
    cols = (0, 1) if analytic_sigma else (0, 1, 2)
    for j in cols:
        step = rel_step * p[j]
        if j == 1:
            # keep the stencil inside (0, 1)
            step = min(step, 0.5 * (1.0 - p[1]), 0.5 * p[1])
        coarse = _central(p, h, j, step)
        fine = _central(p, h, j, 0.5 * step)
        J[:, j] = (4.0 * fine - coarse) / 3.0
    if analytic_sigma:
        J[:, 2] = 2.0 * _f(p, h) / params.sigma
    if not np.all(np.isfinite(J)):
        raise ConvergenceError(f"non-finite Jacobian at {params}")
    return J


def sigma_from_variance(eta0: float, theta: float, hurst: float) -> float:
    """Invert E(Y_0^2) = sigma^2 theta^(-2H) Gamma(2H+1)/2 for sigma."""
    return math.sqrt(2.0 * theta ** (2.0 * hurst) * eta0 / float(gamma_fn(2.0 * hurst + 1.0)))


def multistart_grid(eta0: float, config: SolverConfig) -> list[np.ndarray]:
    lo, hi = config.theta_bounds
    thetas = np.geomspace(lo, hi, config.multistart_theta + 2)[1:-1]
    starts = []
    for th in thetas:
        for H in config.multistart_hurst:
            sg = sigma_from_variance(eta0, th, H)
            starts.append(config.project(np.array([th, H, sg])))
    return starts


@dataclass
class _Run:
    p: np.ndarray
    residual: float
    iterations: int
    converged: bool
    message: str
    history: tuple = ()


def _newton(start: np.ndarray, target: np.ndarray, h: float, config: SolverConfig) -> _Run:
    scale = target[0]

    def resid(p):
        return (_f(p, h) - target) / scale

    p = config.project(np.asarray(start, dtype=float))
    r = resid(p)
    norm = float(np.linalg.norm(r))
    history = [norm]
    for it in range(config.max_iter + 1):
        if norm <= config.tol_residual:
            return _Run(p, norm, it, True, "converged", tuple(history))
        if it == config.max_iter:
            break
        J = jacobian(ModelParams.from_array(p), h, config.fd_step, analytic_sigma=True) / scale
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        alpha = 1.0
        while alpha >= config.min_step:
            cand = config.project(p + alpha * step)
            r_cand = resid(cand)
            n_cand = float(np.linalg.norm(r_cand))
            if n_cand <= (1.0 - config.armijo * alpha) * norm:
                break
            alpha *= config.backtrack
        else:
            return _Run(p, norm, it, False, "line search stagnated", tuple(history))
        moved = float(np.max(np.abs(cand - p) / np.maximum(np.abs(p), 1e-300)))
        p, r, norm = cand, r_cand, n_cand
        history.append(norm)
        if moved <= config.tol_step and norm > config.tol_residual:
            return _Run(p, norm, it + 1, False, "step below tolerance", tuple(history))
    return _Run(p, norm, config.max_iter, False, "iteration limit reached", tuple(history))


def _det(p: np.ndarray, h: float, config: SolverConfig) -> float:
    try:
        return float(np.linalg.det(jacobian(ModelParams.from_array(p), h, config.fd_step)))
    except (ConvergenceError, ValidationError):
        return float("nan")


def _report(run: _Run, h: float, config: SolverConfig, tried: int, others=()) -> EstimateReport:
    alts = []
    for r in others:
        if all(np.max(np.abs(r.p - q) / np.abs(q)) > _DISTINCT_ROOT for q in [run.p] + alts):
            alts.append(r.p)
    message = run.message
    if alts:
        message += f"; {len(alts)} other exact root(s) found"
    return EstimateReport(
        ModelParams.from_array(run.p), run.iterations, run.residual, run.converged,
        _det(run.p, h, config), tried, message, tuple(ModelParams.from_array(a) for a in alts),
    )


def estimate(moments: MomentVector, h: float, config: SolverConfig | None = None,
             initial: ModelParams | None = None) -> EstimateReport:
    """Solve forward_map(params, h) = moments for params inside the box.

    The residual is measured relative to eta0, so ``tol_residual`` is
    scale free.  With ``initial`` Newton starts there first.  Otherwise, and
    whenever that run stagnates, the multistart grid is ranked by residual;
    the best ``polish_starts`` entries are always run and the remaining ones
    only if none of those converged.  Among converged runs the one with the
    largest |det J| wins; if none converged the smallest residual wins.
    Distinct converged roots that lost are listed in ``alternative_roots``.
    """
    config = config or SolverConfig()
    if not (h > 0):
        raise ValidationError(f"h must be positive, got {h!r}")
    target = moments.as_array()
    if not np.all(np.isfinite(target)):
        raise ValidationError("moments must be finite")
    if target[0] <= 0:
        raise ValidationError(f"eta0 must be positive, got {target[0]}")

    if target[0] == target[1] == target[2]:
        p = config.project(np.array([np.sqrt(config.lower[0] * config.upper[0]), 0.5, 1.0]))
        return EstimateReport(ModelParams.from_array(p), 0, float("inf"), False, float("nan"), 0,
                              "degenerate moments: eta0 = eta1 = eta2 carries no information")

    tried = 0
    if initial is not None:
        run = _newton(initial.as_array(), target, h, config)
        tried += 1
        if run.converged:
            return _report(run, h, config, tried)

    starts = multistart_grid(target[0], config)
    scored = []
    for i, s in enumerate(starts):
        res = float(np.linalg.norm((_f(s, h) - target) / target[0]))
        scored.append((res, i, s))
    scored.sort(key=lambda item: (item[0], item[1]))

    runs: list[_Run] = []
    for rank, (_, _, s) in enumerate(scored):
        if rank >= config.polish_starts and any(r.converged for r in runs):
            break
        runs.append(_newton(s, target, h, config))
        tried += 1

    converged = [r for r in runs if r.converged]
    if converged:
        dets = [abs(_det(r.p, h, config)) for r in converged]
        order = sorted(range(len(converged)), key=lambda k: (-np.nan_to_num(dets[k], nan=-1.0), k))
        best = converged[order[0]]
        return _report(best, h, config, tried, [converged[k] for k in order[1:]])
    best = min(runs, key=lambda r: r.residual)
    return _report(best, h, config, tried)
