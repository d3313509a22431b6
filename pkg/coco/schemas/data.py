from __future__ import annotations

from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from ..models.scenario import ScenarioKind


def _frozen_array(value: Any, *, ndim: int, name: str) -> np.ndarray:
    array = np.array(value, dtype=float, copy=True)
    if array.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")
    array.setflags(write=False)
    return array


class EnvironmentDataset(BaseModel):
    """Observations of one environment: covariates X (rows = units) and outcome y."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    env_id: str
    X: np.ndarray
    y: np.ndarray
    covariate_names: list[str]
    metadata: dict[str, Any] = Field(default_factory=dict)

    @field_validator("X", mode="before")
    @classmethod
    def _check_X(cls, value: Any) -> np.ndarray:
        array = _frozen_array(value, ndim=2, name="X")
        if array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError("X needs at least one row and one column")
        return array

    @field_validator("y", mode="before")
    @classmethod
    def _check_y(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, ndim=1, name="y")

    @model_validator(mode="after")
    def _check_shapes(self) -> "EnvironmentDataset":
        n, p = self.X.shape
        if self.y.shape[0] != n:
            raise ValueError(f"y has {self.y.shape[0]} entries but X has {n} rows")
        if len(self.covariate_names) != p:
            raise ValueError(f"{len(self.covariate_names)} covariate names for {p} columns")
        if len(set(self.covariate_names)) != p:
            raise ValueError("covariate names must be unique")
        return self

    @field_serializer("X", "y")
    def _serialize_array(self, value: np.ndarray) -> list:
        return value.tolist()

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    def take(self, rows: np.ndarray, *, env_id: Optional[str] = None) -> "EnvironmentDataset":
        """Row subset, e.g. a mini-batch."""
        rows = np.asarray(rows, dtype=int)
        return EnvironmentDataset(
            env_id=env_id or self.env_id,
            X=self.X[rows],
            y=self.y[rows],
            covariate_names=self.covariate_names,
            metadata=self.metadata,
        )

    def select_columns(self, names: list[str]) -> "EnvironmentDataset":
        missing = [name for name in names if name not in self.covariate_names]
        if missing:
            raise ValueError(f"Unknown covariates: {', '.join(missing)}")
        columns = [self.covariate_names.index(name) for name in names]
        return EnvironmentDataset(
            env_id=self.env_id,
            X=self.X[:, columns],
            y=self.y,
            covariate_names=list(names),
            metadata=self.metadata,
        )


class MultiEnvData(BaseModel):
    """Environments sharing one covariate layout plus the known non-descendant indices (0-based)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    environments: list[EnvironmentDataset]
    known_nondescendants: list[int] = Field(default_factory=list)

    @field_validator("known_nondescendants", mode="after")
    @classmethod
    def _normalise_indices(cls, value: list[int]) -> list[int]:
        return sorted(set(int(index) for index in value))

    @model_validator(mode="after")
    def _check_layout(self) -> "MultiEnvData":
        if not self.environments:
            raise ValueError("at least one environment is required")
        names = self.environments[0].covariate_names
        for env in self.environments[1:]:
            if env.covariate_names != names:
                raise ValueError(
                    f"environment {env.env_id} has covariates {env.covariate_names}, expected {names}"
                )
        p = len(names)
        bad = [index for index in self.known_nondescendants if not 0 <= index < p]
        if bad:
            raise ValueError(f"non-descendant indices {bad} outside [0, {p})")
        return self

    @property
    def p(self) -> int:
        return self.environments[0].p

    @property
    def covariate_names(self) -> list[str]:
        return self.environments[0].covariate_names

    def __len__(self) -> int:
        return len(self.environments)

    def pooled(self) -> EnvironmentDataset:
        """All environments stacked into one sample."""
        return EnvironmentDataset(
            env_id="pooled",
            X=np.vstack([env.X for env in self.environments]),
            y=np.concatenate([env.y for env in self.environments]),
            covariate_names=self.covariate_names,
        )

    def with_environments(self, environments: list[EnvironmentDataset]) -> "MultiEnvData":
        return MultiEnvData(environments=environments, known_nondescendants=self.known_nondescendants)

    def select_columns(self, names: list[str]) -> "MultiEnvData":
        kept = [
            names.index(self.covariate_names[index])
            for index in self.known_nondescendants
            if self.covariate_names[index] in names
        ]
        return MultiEnvData(
            environments=[env.select_columns(names) for env in self.environments],
            known_nondescendants=kept,
        )


class EnvParams(BaseModel):
    """Per-environment knob of a scenario: gamma (Cases 1-5, non-identifiable), sigma (appendix-b1) or p (GMM)."""

    gamma: Optional[float] = None
    sigma: Optional[float] = Field(default=None, gt=0)
    p_flip: Optional[float] = Field(default=None, ge=0, le=1)


class SemScenario(BaseModel):
    """Declarative description of one of the built-in data-generating processes."""

    kind: ScenarioKind
    env_params: list[EnvParams]
    n_per_env: int = Field(ge=1)
    seed: int = Field(default=0, ge=0, le=2**64 - 1)
    n_classes: int = Field(default=5, description="Number of mixture components K (GMM only).")
    center_noise: float = Field(
        default=0.0, ge=0, description="Std of per-environment shifts of the GMM centers (breaks invariance)."
    )

    @model_validator(mode="after")
    def _check_params(self) -> "SemScenario":
        if not self.env_params:
            raise ValueError("env_params must not be empty")
        if self.kind == ScenarioKind.GMM:
            if any(params.p_flip is None for params in self.env_params):
                raise ValueError("every GMM environment needs p_flip in [0, 1]")
        elif self.kind == ScenarioKind.APPENDIX_B1:
            if any(params.sigma is None for params in self.env_params):
                raise ValueError("every appendix-b1 environment needs sigma")
        elif any(params.gamma is None for params in self.env_params):
            raise ValueError(f"every {self.kind.value} environment needs gamma")
        return self


class ScenarioStream(BaseModel):
    """An intervention family: new environments draw their parameter uniformly from param_range."""

    kind: ScenarioKind
    param_range: tuple[float, float] = (0.0, 5.0)
    n_per_env: int = Field(ge=1)
    seed: int = Field(default=0, ge=0, le=2**64 - 1)

    @model_validator(mode="after")
    def _check_range(self) -> "ScenarioStream":
        low, high = self.param_range
        if not low < high:
            raise ValueError("param_range must satisfy low < high")
        if self.kind == ScenarioKind.GMM:
            raise ValueError("GMM environments are not drawn from a parameter stream")
        return self


class TrueCausalModel(BaseModel):
    """Causal coefficients beta (None for GMM) and the support S of direct causes (0-based)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: Optional[np.ndarray] = None
    support: list[int]
    covariate_names: list[str] = Field(default_factory=list)

    @field_validator("beta", mode="before")
    @classmethod
    def _check_beta(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        return _frozen_array(value, ndim=1, name="beta")

    @model_validator(mode="after")
    def _check_support(self) -> "TrueCausalModel":
        if self.beta is not None:
            expected = [int(index) for index in np.flatnonzero(self.beta)]
            if sorted(self.support) != expected:
                raise ValueError(f"support {self.support} does not match nonzero beta entries {expected}")
        return self

    @field_serializer("beta")
    def _serialize_beta(self, value: Optional[np.ndarray]) -> Optional[list[float]]:
        return None if value is None else value.tolist()
