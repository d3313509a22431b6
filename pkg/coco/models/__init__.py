from .objective import Estimator, Method
from .optim import InitKind, OuterGradMode, Suite
from .predictor import Activation, LossKind, ModelKind, OutputHead
from .scenario import LINEAR_CASES, ScenarioKind

__all__ = [
    "Activation",
    "Estimator",
    "InitKind",
    "LINEAR_CASES",
    "LossKind",
    "Method",
    "ModelKind",
    "OuterGradMode",
    "OutputHead",
    "ScenarioKind",
    "Suite",
]
