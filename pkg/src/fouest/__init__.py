"""Simulation and generalized-moment estimation for fractional Ornstein-Uhlenbeck processes."""

from __future__ import annotations

__version__ = "0.1.0"

from .asymptotics import (
    Axis,
    Matrix3,
    ScanGrid,
    det_scan,
    estimator_covariance,
    jacobian_det,
    sigma_matrix,
    sigma_matrix_ou,
)
from .errors import (
    ConvergenceError,
    FactorizationError,
    FouError,
    IdentifiabilityError,
    QuadratureError,
    ValidationError,
)
from .estimator import EstimateReport, SolverConfig, estimate, forward_map, jacobian
from .fgn import Hurst, NoiseGrid, fgn_autocovariance, sample_fbm, sample_fgn
from .fou import (
    ModelParams,
    ObservationSeries,
    SimulationPlan,
    autocovariance_sequence,
    fou_autocov_tail_expansion,
    fou_autocovariance,
    simulate_fou,
)
from .moments import MomentVector, compute_moments, required_length
from .study import StudySpec, mc_study

__all__ = [
    "Axis", "Matrix3", "ScanGrid", "det_scan", "estimator_covariance", "jacobian_det",
    "sigma_matrix", "sigma_matrix_ou", "ConvergenceError", "FactorizationError", "FouError",
    "IdentifiabilityError", "QuadratureError", "ValidationError", "EstimateReport",
    "SolverConfig", "estimate", "forward_map", "jacobian", "Hurst", "NoiseGrid",
    "fgn_autocovariance", "sample_fbm", "sample_fgn", "ModelParams", "ObservationSeries",
    "SimulationPlan", "autocovariance_sequence", "fou_autocov_tail_expansion",
    "fou_autocovariance", "simulate_fou", "MomentVector", "compute_moments",
    "required_length", "StudySpec", "mc_study",
]
