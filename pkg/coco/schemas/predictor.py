from __future__ import annotations

from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from ..models.predictor import Activation, LossKind, ModelKind, OutputHead


class ModelShape(BaseModel):
    """Architecture of a predictor.

    ``sizes`` is ``[p]`` for linear and logistic models and ``[p, h1, ..., k]`` for an
    MLP. MLP layers are weight matrices without biases; layer ``l`` has shape
    ``(sizes[l + 1], sizes[l])`` and is flattened row-major, layer after layer, so the
    first layer's column ``j`` holds every weight attached to covariate ``j``.
    """

    model_config = ConfigDict(frozen=True)

    kind: ModelKind
    sizes: list[int]
    activation: Activation = Activation.TANH
    head: OutputHead = OutputHead.IDENTITY

    @field_validator("sizes")
    @classmethod
    def _positive_sizes(cls, value: list[int]) -> list[int]:
        if not value or any(size < 1 for size in value):
            raise ValueError("layer sizes must be positive")
        return value

    @model_validator(mode="before")
    @classmethod
    def _fixed_heads(cls, data: Any) -> Any:
        """Linear models always regress, logistic models always output a probability."""
        if isinstance(data, dict) and "kind" in data:
            kind = ModelKind(data["kind"])
            if kind == ModelKind.LINEAR:
                data = {**data, "head": OutputHead.IDENTITY}
            elif kind == ModelKind.LOGISTIC:
                data = {**data, "head": OutputHead.SIGMOID}
        return data

    @model_validator(mode="after")
    def _check_kind(self) -> "ModelShape":
        if self.kind in (ModelKind.LINEAR, ModelKind.LOGISTIC):
            if len(self.sizes) != 1:
                raise ValueError(f"{self.kind.value} models take sizes=[p]")
        elif len(self.sizes) < 2:
            raise ValueError("MLP sizes must list at least the input and output widths")
        elif self.head == OutputHead.SIGMOID and self.sizes[-1] != 1:
            raise ValueError("a sigmoid head needs a single output")
        return self

    @classmethod
    def linear(cls, p: int) -> "ModelShape":
        return cls(kind=ModelKind.LINEAR, sizes=[p])

    @classmethod
    def logistic(cls, p: int) -> "ModelShape":
        return cls(kind=ModelKind.LOGISTIC, sizes=[p])

    @classmethod
    def mlp(
        cls,
        p: int,
        hidden: list[int],
        outputs: int = 1,
        *,
        activation: Activation = Activation.TANH,
        head: OutputHead = OutputHead.IDENTITY,
    ) -> "ModelShape":
        return cls(kind=ModelKind.MLP, sizes=[p, *hidden, outputs], activation=activation, head=head)

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return 1 if self.kind != ModelKind.MLP else self.sizes[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.kind != ModelKind.MLP:
            return [(1, self.sizes[0])]
        return [(self.sizes[i + 1], self.sizes[i]) for i in range(len(self.sizes) - 1)]

    @property
    def layer_slices(self) -> list[slice]:
        slices: list[slice] = []
        start = 0
        for rows, cols in self.layer_shapes:
            slices.append(slice(start, start + rows * cols))
            start += rows * cols
        return slices

    @property
    def n_params(self) -> int:
        return sum(rows * cols for rows, cols in self.layer_shapes)

    def input_column_indices(self, columns: list[int]) -> np.ndarray:
        """Positions in theta of every weight that reads one of the given covariates."""
        rows, cols = self.layer_shapes[0]
        positions = [row * cols + column for row in range(rows) for column in columns]
        return np.array(sorted(positions), dtype=int)


class ModelParams(BaseModel):
    """A predictor: its shape and the flat vector of trainable parameters."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    shape: ModelShape
    theta: np.ndarray

    @field_validator("theta", mode="before")
    @classmethod
    def _check_theta(cls, value: Any) -> np.ndarray:
        theta = np.array(value, dtype=float, copy=True).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        theta.setflags(write=False)
        return theta

    @model_validator(mode="after")
    def _check_length(self) -> "ModelParams":
        if self.theta.shape[0] != self.shape.n_params:
            raise ValueError(f"theta has {self.theta.shape[0]} entries, shape implies {self.shape.n_params}")
        return self

    @field_serializer("theta")
    def _serialize_theta(self, value: np.ndarray) -> list[float]:
        return value.tolist()

    @classmethod
    def zeros(cls, shape: ModelShape) -> "ModelParams":
        return cls(shape=shape, theta=np.zeros(shape.n_params))

    @property
    def kind(self) -> ModelKind:
        return self.shape.kind

    def weights(self) -> list[np.ndarray]:
        """Layer matrices as read-only views into theta."""
        return [
            self.theta[layer].reshape(rows, cols)
            for layer, (rows, cols) in zip(self.shape.layer_slices, self.shape.layer_shapes)
        ]

    def with_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(shape=self.shape, theta=theta)


class RiskSpec(BaseModel):
    loss: LossKind = Field(default=LossKind.SQUARED)

    def check_compatible(self, shape: ModelShape) -> None:
        """Squared loss needs a real-valued output, cross-entropy a probability output."""
        if self.loss == LossKind.SQUARED:
            if shape.head != OutputHead.IDENTITY or shape.n_outputs != 1:
                raise ValueError("squared loss requires a single real-valued output")
        elif shape.head == OutputHead.IDENTITY:
            raise ValueError("cross-entropy requires a logistic model or an MLP with a sigmoid/softmax head")
