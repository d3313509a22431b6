from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..models.objective import Estimator, Method
from ..models.optim import Suite
from ..models.predictor import Activation, LossKind, ModelKind, OutputHead
from ..models.scenario import ScenarioKind
from .optim import OptimConfig


def split_list(value: Any) -> Any:
    """Comma-separated strings become lists of stripped, non-empty tokens."""
    if isinstance(value, str):
        return [token.strip() for token in value.split(",") if token.strip()]
    return value


def _blank_to_none(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        return None
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ScenarioSection(_Section):
    kind: Optional[ScenarioKind] = None
    envs: Optional[int] = Field(default=None, ge=1, description="Number of environments when params is unset.")
    params: list[float] = Field(
        default_factory=list, description="Per-environment gamma, sigma (appendix-b1) or flip probability (gmm)."
    )
    n: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)
    classes: int = Field(default=5, ge=2)
    center_noise: float = Field(default=0.0, ge=0)
    param_range: tuple[float, float] = (0.0, 5.0)
    do_target: Optional[str] = None
    do_value: Optional[float] = None

    @field_validator("params", "param_range", mode="before")
    @classmethod
    def _split(cls, value: Any) -> Any:
        return split_list(value)

    @model_validator(mode="after")
    def _check_do(self) -> "ScenarioSection":
        if (self.do_target is None) != (self.do_value is None):
            raise ValueError("scenario.do_target and scenario.do_value must be given together")
        return self


class DataSection(_Section):
    """Environment CSVs to read instead of generating a scenario."""

    paths: list[Path] = Field(default_factory=list)
    dir: Optional[Path] = None

    @field_validator("paths", mode="before")
    @classmethod
    def _split(cls, value: Any) -> Any:
        return split_list(value)

    @model_validator(mode="after")
    def _check_readable(self) -> "DataSection":
        missing = [str(path) for path in self.paths if not path.is_file()]
        if self.dir is not None and not self.dir.is_dir():
            missing.append(str(self.dir))
        if missing:
            raise ValueError(f"data files not found: {', '.join(missing)}")
        return self

    @property
    def configured(self) -> bool:
        return bool(self.paths) or self.dir is not None

    def resolved_paths(self) -> list[Path]:
        if self.paths:
            return list(self.paths)
        return sorted(path for path in self.dir.glob("*.csv")) if self.dir is not None else []


class ModelSection(_Section):
    kind: ModelKind = ModelKind.LINEAR
    hidden: list[int] = Field(default_factory=lambda: [16, 16])
    activation: Activation = Activation.TANH
    head: Optional[OutputHead] = None
    loss: Optional[LossKind] = None

    @field_validator("hidden", mode="before")
    @classmethod
    def _split(cls, value: Any) -> Any:
        return split_list(value)


class ObjectiveSection(_Section):
    method: Method = Method.ERM
    lambda_r: float = Field(default=0.0, ge=0)
    lambda_: float = Field(default=0.0, ge=0, alias="lambda")
    lambda_w: float = Field(default=0.0, ge=0)
    lambda_vrex: float = Field(default=0.0, ge=0)
    estimator: Estimator = Estimator.POPULATION_STYLE
    mask: list[str] = Field(default_factory=list, description="Covariate names or 1-based positions.")

    @field_validator("mask", mode="before")
    @classmethod
    def _split(cls, value: Any) -> Any:
        return split_list(value)


class CheckSection(_Section):
    nondescendants: list[str] = Field(default_factory=list, description="Covariate names or 1-based positions.")
    max_envs: int = Field(default=10, ge=1)
    noise_z: float = Field(default=1.0, ge=0)
    tol: float = Field(default=0.05, gt=0)
    stream: Optional[bool] = Field(default=None, description="Draw environments until the check passes.")

    @field_validator("nondescendants", mode="before")
    @classmethod
    def _split(cls, value: Any) -> Any:
        return split_list(value)

    @field_validator("stream", mode="before")
    @classmethod
    def _blank(cls, value: Any) -> Any:
        return _blank_to_none(value)


class BenchSection(_Section):
    suite: Suite = Suite.LINEAR_CASES
    reps: int = Field(default=10, ge=1)
    cases: list[ScenarioKind] = Field(default_factory=list)
    methods: list[str] = Field(default_factory=list)
    n: Optional[int] = Field(default=None, ge=1)
    workers: Optional[int] = Field(default=None, ge=1)

    @field_validator("cases", "methods", mode="before")
    @classmethod
    def _split(cls, value: Any) -> Any:
        return split_list(value)


class RunConfig(BaseModel):
    """Everything one CLI command needs, assembled from a flat dotted-key mapping."""

    model_config = ConfigDict(extra="forbid")

    seed: Optional[int] = Field(default=None, ge=0, le=2**64 - 1)
    out: Optional[Path] = None
    scenario: ScenarioSection = Field(default_factory=ScenarioSection)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    objective: ObjectiveSection = Field(default_factory=ObjectiveSection)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    check: CheckSection = Field(default_factory=CheckSection)
    bench: BenchSection = Field(default_factory=BenchSection)

    @field_validator("optim", mode="before")
    @classmethod
    def _optim_lists(cls, value: Any) -> Any:
        if isinstance(value, dict):
            value = dict(value)
            if "init_vector" in value:
                value["init_vector"] = split_list(value["init_vector"])
            for key in ("outer_grad", "batch_size"):
                if key in value:
                    value[key] = _blank_to_none(value[key])
        return value

    @classmethod
    def from_flat(cls, flat: Mapping[str, Optional[str]]) -> "RunConfig":
        """Build from ``{"scenario.kind": "case5", "optim.anneal.enabled": "true", ...}``."""
        nested: dict[str, Any] = {}
        for raw_key, value in flat.items():
            if value is None:
                continue
            parts = [part.strip().replace("-", "_") for part in raw_key.strip().lower().split(".")]
            if not all(parts):
                raise ValueError(f"Malformed config key '{raw_key}'")
            node = nested
            for part in parts[:-1]:
                child = node.setdefault(part, {})
                if not isinstance(child, dict):
                    raise ValueError(f"Config key '{raw_key}' conflicts with a scalar value")
                node = child
            if isinstance(node.get(parts[-1]), dict):
                raise ValueError(f"Config key '{raw_key}' conflicts with a section")
            node[parts[-1]] = value
        return cls.model_validate(nested)
