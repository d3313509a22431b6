from __future__ import annotations

from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator


class GramStack(BaseModel):
    """Per-environment second moments W^e = X'X/n, b^e = X'y/n and the Monte-Carlo errors of W^e."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    per_env_gram: list[np.ndarray]
    per_env_cross: list[np.ndarray]
    per_env_gram_se: list[np.ndarray] = Field(default_factory=list)
    sample_sizes: list[int] = Field(default_factory=list)

    @field_validator("per_env_gram", mode="after")
    @classmethod
    def _check_grams(cls, value: list[np.ndarray]) -> list[np.ndarray]:
        for gram in value:
            if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
                raise ValueError("Gram matrices must be square")
            if not np.allclose(gram, gram.T, atol=1e-10):
                raise ValueError("Gram matrix is not symmetric")
            if np.linalg.eigvalsh(gram).min() < -1e-10 * max(1.0, float(np.abs(gram).max())):
                raise ValueError("Gram matrix is not positive semidefinite")
        return value

    @model_validator(mode="after")
    def _check_lengths(self) -> "GramStack":
        if len(self.per_env_gram) != len(self.per_env_cross):
            raise ValueError("one cross-moment vector is required per Gram matrix")
        return self

    @property
    def p(self) -> int:
        return int(self.per_env_gram[0].shape[0])

    def stacked_rows(self, rows: list[int]) -> np.ndarray:
        """Rows ``rows`` of every W^e stacked on top of each other."""
        return np.vstack([gram[rows, :] for gram in self.per_env_gram])

    def stacked_errors(self, rows: list[int]) -> np.ndarray:
        if not self.per_env_gram_se:
            return np.zeros((len(rows) * len(self.per_env_gram), self.p))
        return np.vstack([se[rows, :] for se in self.per_env_gram_se])


def _vector_list(value: Optional[np.ndarray]) -> Optional[list[float]]:
    return None if value is None else [float(item) for item in value]


class PlausiblePoint(BaseModel):
    """Stationary point of the CoCo penalty supported on ``subset`` (None when the subset was skipped)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    subset: list[int]
    coefficients: Optional[np.ndarray] = None
    warning: Optional[str] = None

    @field_validator("coefficients", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> Optional[np.ndarray]:
        return None if value is None else np.asarray(value, dtype=float)

    @field_serializer("coefficients")
    def _serialize(self, value: Optional[np.ndarray]) -> Optional[list[float]]:
        return _vector_list(value)


class InvariantSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    subset: list[int]
    vector: np.ndarray
    spread: float = 0.0

    @field_validator("vector", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> np.ndarray:
        return np.asarray(value, dtype=float)

    @field_serializer("vector")
    def _serialize(self, value: np.ndarray) -> list[float]:
        return [float(item) for item in value]


class RankCheck(BaseModel):
    matrix_rows: int
    columns: int
    rank: int
    passes: bool
    singular_values: list[float] = Field(default_factory=list)
    threshold: float = 0.0
    # Largest leading block of environments that reaches the rank; singular_values and threshold belong to it.
    certifying_environments: int = 0


class CheckReport(BaseModel):
    invariant_sets: list[InvariantSet] = Field(default_factory=list)
    distinct_invariant_vectors: bool = False
    rank_check: RankCheck
    environments_used: int
    nondescendants: list[int] = Field(default_factory=list)
    covariate_names: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_verdict(self) -> "CheckReport":
        check = self.rank_check
        if check.passes != (check.rank == check.columns):
            raise ValueError("rank check verdict must equal rank == p")
        return self


class BenchCell(BaseModel):
    """One (suite case, method, replication) run."""

    case: str
    method: str
    replication: int
    seed: int
    mae: Optional[float] = None
    train_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    prediction_error: Optional[float] = None
    hyperparameter: Optional[float] = None
    coefficients: Optional[list[float]] = None
    error: Optional[str] = None

    @field_validator("mae", "prediction_error")
    @classmethod
    def _non_negative(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value < 0:
            raise ValueError("errors are non-negative")
        return value

    @field_validator("train_accuracy", "test_accuracy")
    @classmethod
    def _percent(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0 <= value <= 100:
            raise ValueError("accuracies are percentages")
        return value


class BenchRow(BaseModel):
    """Mean and standard deviation of one metric over replications."""

    case: str
    method: str
    metric: str
    mean: Optional[float]
    std: Optional[float]
    replications: int
    failures: int = 0


class BenchReport(BaseModel):
    suite: str
    rows: list[BenchRow] = Field(default_factory=list)
    cells: list[BenchCell] = Field(default_factory=list)
    metadata: dict[str, Any] = Field(default_factory=dict)

    def row(self, case: str, method: str, metric: str) -> Optional[BenchRow]:
        for row in self.rows:
            if row.case == case and row.method == method and row.metric == metric:
                return row
        return None
