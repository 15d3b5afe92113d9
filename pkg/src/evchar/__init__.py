"""Extreme-value spacing statistics, their limit laws and Monte Carlo checks."""

__version__ = "0.1.0"

from .models import (Domain, ModelError, PerturbationPair, RegularityClass, SampleBatch,
                     TailModel, builtin, draw, quantile_g, survival_g)
from .estimators import StatVector, WindowConfig, a1, a1_naive, stat_vector, t2
from .asymptotics import (CoefficientSet, CovMatrix, coefficients, cov_matrix, centering,
                          e_ell_cdf, r_p, sigma)
from .bridge import BridgePath, exact_cov, functionals, sample_bridge
from .montecarlo import ExperimentConfig, McReport, compare, ks_distance, run
from .detect import DetectionResult, detect, gamma_from_c

__all__ = [
    "Domain", "ModelError", "PerturbationPair", "RegularityClass", "SampleBatch",
    "TailModel", "builtin", "draw", "quantile_g", "survival_g",
    "StatVector", "WindowConfig", "a1", "a1_naive", "stat_vector", "t2",
    "CoefficientSet", "CovMatrix", "coefficients", "cov_matrix", "centering",
    "e_ell_cdf", "r_p", "sigma",
    "BridgePath", "exact_cov", "functionals", "sample_bridge",
    "ExperimentConfig", "McReport", "compare", "ks_distance", "run",
    "DetectionResult", "detect", "gamma_from_c",
]
