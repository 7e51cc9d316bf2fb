"""Binary and multinomial logit estimation for availability outcomes."""

from osmeter.choice.design import ASC, Design, DesignError, build_design
from osmeter.choice.logit import (
    ChoiceModelResult,
    EstimationError,
    NestingError,
    SeparationError,
    SingularHessianError,
    adjusted_rho2,
    chi2_sf,
    fit,
    fit_binary_logit,
    fit_multinomial_logit,
    lr_test,
    robust_se,
    sandwich,
    stars,
)
from osmeter.choice.output import write_estimates
from osmeter.choice.spec import EqualityRestriction, ModelSpec, SpecError, Term, bundled_spec, load_spec

__all__ = [
    "ASC", "ChoiceModelResult", "Design", "DesignError", "EqualityRestriction", "EstimationError",
    "ModelSpec", "NestingError", "SeparationError", "SingularHessianError", "SpecError", "Term",
    "adjusted_rho2", "build_design", "bundled_spec", "chi2_sf", "fit", "fit_binary_logit",
    "fit_multinomial_logit", "load_spec", "lr_test", "robust_se", "sandwich", "stars",
    "write_estimates",
]
