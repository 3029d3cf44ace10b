"""Latent factor models for characteristic panels via regressed PCA.

Estimation runs per-period cross-sectional regressions of returns on a
sieve basis of characteristics, then extracts factors from the resulting
coefficient panel by PCA.  The package adds weighted-bootstrap tests,
factor-count selection, fit/portfolio diagnostics, a simulation harness,
and a batch CLI (``regpca``).
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError, RegpcaError
from .estimator import (FactorFit, ManagedPanel, RegressedPCA, eval_alpha,
                        eval_beta, first_stage, fit_factors, fix_factor_signs,
                        rotation, select_k_ratio, select_k_threshold)
from .evaluation import (PortfolioSeries, R2Suite, R2Triple,
                         arbitrage_portfolio, mve_portfolio, oos_factor_fit,
                         oos_predict, r2_insample)
from .inference import (BootstrapDraw, TestReport, alpha_test, bootstrap_fit,
                        coefficient_test, draw_weights, linearity_test)
from .montecarlo import (DgpParams, SimDraw, kselect_experiment,
                         mse_experiment, oracle_spec, rejection_experiment,
                         simulate)
from .panel import (Panel, filter_min_cross_section, from_arrays, load_csv,
                    rank_transform, save_csv)
from .sieve import (SieveSpec, bspline_spec, design_matrix, design_matrices,
                    eval_basis, eval_basis_many, linear_spec, quadratic_spec)

__all__ = [
    "__version__",
    "RegpcaError", "ConfigError", "DataError", "NumericError",
    "Panel", "from_arrays", "load_csv", "save_csv", "rank_transform",
    "filter_min_cross_section",
    "SieveSpec", "linear_spec", "bspline_spec", "quadratic_spec",
    "eval_basis", "eval_basis_many", "design_matrix", "design_matrices",
    "ManagedPanel", "FactorFit", "RegressedPCA", "first_stage", "fit_factors",
    "eval_alpha", "eval_beta", "rotation", "fix_factor_signs",
    "select_k_ratio", "select_k_threshold",
    "BootstrapDraw", "TestReport", "draw_weights", "bootstrap_fit",
    "alpha_test", "coefficient_test", "linearity_test",
    "R2Suite", "R2Triple", "PortfolioSeries", "r2_insample", "oos_predict",
    "oos_factor_fit", "arbitrage_portfolio", "mve_portfolio",
    "DgpParams", "SimDraw", "simulate", "oracle_spec", "mse_experiment",
    "kselect_experiment", "rejection_experiment",
]
