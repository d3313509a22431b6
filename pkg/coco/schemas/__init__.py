from .data import (
    EnvironmentDataset,
    EnvParams,
    MultiEnvData,
    ScenarioStream,
    SemScenario,
    TrueCausalModel,
)
from .objective import ObjectiveSpec, ObjectiveTerms
from .optim import AnnealConfig, FitResult, OptimConfig, TracePoint
from .predictor import ModelParams, ModelShape, RiskSpec
from .report import (
    BenchCell,
    BenchReport,
    BenchRow,
    CheckReport,
    GramStack,
    InvariantSet,
    PlausiblePoint,
    RankCheck,
)
from .run import RunConfig

__all__ = [
    "AnnealConfig",
    "BenchCell",
    "BenchReport",
    "BenchRow",
    "CheckReport",
    "EnvParams",
    "EnvironmentDataset",
    "FitResult",
    "GramStack",
    "InvariantSet",
    "ModelParams",
    "ModelShape",
    "MultiEnvData",
    "ObjectiveSpec",
    "ObjectiveTerms",
    "OptimConfig",
    "PlausiblePoint",
    "RankCheck",
    "RiskSpec",
    "RunConfig",
    "ScenarioStream",
    "SemScenario",
    "TracePoint",
    "TrueCausalModel",
]
