from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..models.objective import Estimator, Method


class ObjectiveSpec(BaseModel):
    """Which training objective to minimize and with what weights.

    ``nondescendant_mask`` holds 0-based covariate indices known not to be caused by the
    outcome; it is mandatory for the masked CoCo variants.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    method: Method
    lambda_r: float = Field(default=0.0, ge=0, description="Risk weight of the risk-regularized CoCo objective.")
    lambda_: float = Field(default=0.0, ge=0, alias="lambda", description="IRMv1 penalty weight.")
    lambda_w: float = Field(default=0.0, ge=0, description="Weak-penalty weight.")
    lambda_vrex: float = Field(default=0.0, ge=0)
    estimator: Estimator = Estimator.POPULATION_STYLE
    nondescendant_mask: Optional[list[int]] = None

    @field_validator("nondescendant_mask", mode="after")
    @classmethod
    def _normalise_mask(cls, value: Optional[list[int]]) -> Optional[list[int]]:
        if value is None:
            return None
        if any(index < 0 for index in value):
            raise ValueError("mask indices must be non-negative")
        return sorted(set(value))

    @model_validator(mode="after")
    def _check_mask(self) -> "ObjectiveSpec":
        if self.method.needs_mask and not self.nondescendant_mask:
            raise ValueError(f"{self.method.value} requires a nonempty nondescendant_mask")
        return self


class ObjectiveTerms(BaseModel):
    """Per-environment pieces of an objective evaluation, in environment order."""

    env_ids: list[str]
    risks: list[float]
    penalties: list[float]
    weak_penalties: list[float] = Field(default_factory=list)
    total: float
