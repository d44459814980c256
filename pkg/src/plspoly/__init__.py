"""PLS regression analysed through its residual polynomials.

The estimator after ``k`` steps is ``beta_k = sum_i (1 - Q_k(lambda_i))
(p_hat_i / sqrt(lambda_i)) v_i`` where ``Q_k`` is the degree-``k`` residual
polynomial. The package computes ``Q_k`` both by a Stieltjes recurrence and
by an explicit weighted sum over index tuples, and checks the shrinkage,
risk and MSE statements that follow from it.
"""

__version__ = "0.1.0"

from .errors import CapabilityError, InputError, NumericError
from .model import (
    RegressionProblem,
    SpectralData,
    SyntheticSpec,
    fixture_problem,
    fixture_spec,
    generate,
    load_csv,
    spectral,
)
from .pls_core import PlsPath, fit_ls, fit_pcr, fit_pls, krylov_basis
from .residual_poly import (
    ResidualPolynomial,
    WeightTable,
    residual_family,
    residuals_by_formula,
    residuals_by_recurrence,
    verify_poly_identities,
    weight_expectation_approx,
    weight_table,
)
from .diagnostics import (
    FilterFactors,
    GramTerms,
    MseReport,
    RiskReport,
    check_filter_theorems,
    check_global_shrinkage,
    filter_factors,
    gram_determinant_terms,
    mse_decompositions,
    risk_reports,
)
from .verify import run_verification

__all__ = [
    "CapabilityError", "InputError", "NumericError",
    "RegressionProblem", "SpectralData", "SyntheticSpec",
    "fixture_problem", "fixture_spec", "generate", "load_csv", "spectral",
    "PlsPath", "fit_ls", "fit_pcr", "fit_pls", "krylov_basis",
    "ResidualPolynomial", "WeightTable", "residual_family", "residuals_by_formula",
    "residuals_by_recurrence", "verify_poly_identities", "weight_expectation_approx",
    "weight_table",
    "FilterFactors", "GramTerms", "MseReport", "RiskReport", "check_filter_theorems",
    "check_global_shrinkage", "filter_factors", "gram_determinant_terms",
    "mse_decompositions", "risk_reports",
    "run_verification",
]
