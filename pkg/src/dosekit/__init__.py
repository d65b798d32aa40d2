"""dosekit: multiple contrast tests and GLS dose-response modeling.

The workflow has two steps.  The contrast test checks candidate
dose-response shapes for a signal; the modeling step fits the significant
shapes by generalized least squares to first-stage estimates
``(mu_hat, S)`` and derives target doses.  First-stage estimators cover
normal, binary, count and time-to-event endpoints.
"""

from __future__ import annotations

__version__ = "0.1.0"

from dosekit.contrasts import ContrastMatrix, contrast_matrix, optimal_contrast, optimal_contrast_placadj
from dosekit.errors import (
    AccuracyWarning,
    BoundaryWarning,
    DoseKitError,
    NumericalError,
    ValidationError,
)
from dosekit.firststage import anova_normal, coxph_factor, logistic_saturated, negbin_saturated
from dosekit.fitting import (
    FitBounds,
    FittedModel,
    bootstrap,
    gaic,
    gls_fit,
    model_average,
    predict_with_ci,
    select_model,
    target_dose,
    theta_covariance,
)
from dosekit.mctest import AnovaEstimate, MctResult, mct_test, reference_set
from dosekit.models import (
    CandidateModel,
    DoseDesign,
    Family,
    eval_full,
    eval_standardized,
    gradient_full,
    guesstimate_from_anchor,
    scale_to_effects,
    shape_vector,
)
from dosekit.mvn import QmcConfig, adjusted_pvalues, corr_from_cov, critical_value, mvn_rect

__all__ = [
    "AccuracyWarning", "AnovaEstimate", "BoundaryWarning", "CandidateModel", "ContrastMatrix",
    "DoseDesign", "DoseKitError", "Family", "FitBounds", "FittedModel", "MctResult",
    "NumericalError", "QmcConfig", "ValidationError", "adjusted_pvalues", "anova_normal",
    "bootstrap", "contrast_matrix", "corr_from_cov", "coxph_factor", "critical_value",
    "eval_full", "eval_standardized", "gaic", "gls_fit", "gradient_full",
    "guesstimate_from_anchor", "logistic_saturated", "mct_test", "model_average", "mvn_rect",
    "negbin_saturated", "optimal_contrast", "optimal_contrast_placadj", "predict_with_ci",
    "reference_set", "scale_to_effects", "select_model", "shape_vector", "target_dose",
    "theta_covariance",
]
