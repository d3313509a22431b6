from __future__ import annotations

from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator

from ..models.optim import InitKind, OuterGradMode
from .predictor import ModelParams


class AnnealConfig(BaseModel):
    """Decay of the risk weight once the iterate has left the neighbourhood of zero."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    enabled: bool = False
    trigger_fraction: float = Field(default=0.5, gt=0, le=1)
    escape_norm: Optional[float] = Field(
        default=None, gt=0, description="Defaults to 0.1 * sqrt(number of parameters)."
    )
    decay_factor: float = Field(default=0.99, gt=0, le=1)


class OptimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    step_size: float = Field(default=0.1, gt=0)
    max_iters: int = Field(default=20_000, ge=1)
    tol: float = Field(default=1e-8, gt=0, description="Stopping threshold on the objective-gradient norm.")
    anneal: AnnealConfig = Field(default_factory=AnnealConfig)
    outer_grad: Optional[OuterGradMode] = Field(
        default=None, description="None picks Analytic for linear regression and HessianVector otherwise."
    )
    fd_step: float = Field(default=1e-4, gt=0)
    init: InitKind = InitKind.ZERO_PLUS_JITTER
    init_vector: Optional[np.ndarray] = None
    init_scale: float = Field(default=0.01, gt=0, description="Standard deviation of the initial jitter.")
    seed: int = Field(default=0, ge=0, le=2**64 - 1)
    standardize: bool = True
    batch_size: Optional[int] = Field(default=None, ge=1)
    restore_after: int = Field(default=10, ge=1, description="Successful steps before a halved step size is doubled again, up to step_size.")
    trace_every: int = Field(default=1, ge=1)

    @field_validator("init_vector", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        array = np.array(value, dtype=float).reshape(-1)
        array.setflags(write=False)
        return array


class TracePoint(BaseModel):
    iteration: int
    value: float


class FitResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ModelParams
    objective_trace: list[TracePoint] = Field(default_factory=list)
    converged: bool
    final_gradient_norm: float
    final_objective: float
    iterations: int
    diverged: bool = False
    diagnostic: Optional[str] = None
    final_lambda_r: float = 0.0

    @property
    def coefficients(self) -> np.ndarray:
        return self.params.theta

    @field_serializer("final_gradient_norm", "final_objective")
    def _finite_or_none(self, value: float) -> Optional[float]:
        return float(value) if np.isfinite(value) else None
