from .bench import BenchConfigError, run_suite
from .env_data import (
    DatasetFormatError,
    ScenarioError,
    apply_do_intervention,
    default_nondescendants,
    draw_environment,
    generate,
    gmm_test_environments,
    gmm_validation_environment,
    load_csv,
    restrict_columns,
    true_causal_model,
    write_csv,
)
from .identify import (
    IdentificationError,
    check_effectiveness_A2,
    gram_stack,
    ico_rank_check,
    ico_workflow,
    intersect_plausible_sets,
    invariant_sets,
    plausible_set_enumerate,
)
from .objectives import (
    ObjectiveConfigError,
    coco_penalty,
    coco_penalty_biased,
    coco_penalty_unbiased,
    irmv1_penalty,
    modified_penalty,
    naive_penalty,
    objective_terms,
    partition_penalty,
    penalty_gradient,
    total_objective,
    weak_penalty,
)
from .optimizer import DivergenceError, SingularGramError, fit, fit_ols_closed_form, outer_gradient
from .predictors import (
    ShapeMismatchError,
    accuracy,
    empirical_risk,
    hessian_vector_product,
    init_params,
    predict,
    risk_gradient,
    risk_gradient_fd,
)

__all__ = [
    "BenchConfigError",
    "DatasetFormatError",
    "DivergenceError",
    "IdentificationError",
    "ObjectiveConfigError",
    "ScenarioError",
    "ShapeMismatchError",
    "SingularGramError",
    "accuracy",
    "apply_do_intervention",
    "check_effectiveness_A2",
    "coco_penalty",
    "coco_penalty_biased",
    "coco_penalty_unbiased",
    "default_nondescendants",
    "draw_environment",
    "empirical_risk",
    "fit",
    "fit_ols_closed_form",
    "generate",
    "gmm_test_environments",
    "gmm_validation_environment",
    "gram_stack",
    "hessian_vector_product",
    "ico_rank_check",
    "ico_workflow",
    "init_params",
    "intersect_plausible_sets",
    "invariant_sets",
    "irmv1_penalty",
    "load_csv",
    "modified_penalty",
    "naive_penalty",
    "objective_terms",
    "outer_gradient",
    "partition_penalty",
    "penalty_gradient",
    "plausible_set_enumerate",
    "predict",
    "restrict_columns",
    "risk_gradient",
    "risk_gradient_fd",
    "run_suite",
    "total_objective",
    "true_causal_model",
    "weak_penalty",
    "write_csv",
]
