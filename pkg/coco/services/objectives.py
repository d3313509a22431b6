from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..models.objective import Estimator, Method
from ..models.predictor import ModelKind
from ..schemas.data import EnvironmentDataset, MultiEnvData
from ..schemas.objective import ObjectiveSpec, ObjectiveTerms
from ..schemas.predictor import ModelParams, ModelShape, RiskSpec
from .predictors import EnvironmentRisk, output_scale_derivative, per_sample_gradients, risk_gradient

logger = logging.getLogger(__name__)


class ObjectiveConfigError(ValueError):
    """Raised when an objective or penalty is configured inconsistently."""


@dataclass(frozen=True)
class PenaltyBlocks:
    """A penalty sum_A (<grad_A, w_A>)^2 over disjoint blocks A of theta.

    ``w`` equals theta except at ``fixed`` positions, where it is 1 (or ``fixed_values``). Parameters outside
    every block do not enter the penalty.
    """

    blocks: tuple[np.ndarray, ...]
    fixed: np.ndarray
    block_of: np.ndarray = field(repr=False)
    fixed_values: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def build(cls, n_params: int, blocks: Sequence[Sequence[int]], fixed: Sequence[int] = ()) -> "PenaltyBlocks":
        block_of = np.full(n_params, -1, dtype=int)
        arrays = []
        for number, block in enumerate(blocks):
            indices = np.asarray(sorted(block), dtype=int)
            if indices.size == 0:
                raise ObjectiveConfigError("penalty blocks must be nonempty")
            if indices.min() < 0 or indices.max() >= n_params:
                raise ObjectiveConfigError(f"block indices must lie in [0, {n_params})")
            if np.any(block_of[indices] >= 0) or len(set(indices.tolist())) != indices.size:
                raise ObjectiveConfigError("penalty blocks overlap")
            block_of[indices] = number
            arrays.append(indices)
        mask = np.zeros(n_params, dtype=bool)
        mask[np.asarray(list(fixed), dtype=int)] = True
        return cls(blocks=tuple(arrays), fixed=mask, block_of=block_of)

    def weights(self, theta: np.ndarray) -> np.ndarray:
        anchor = 1.0 if self.fixed_values is None else self.fixed_values
        return np.where(self.fixed, anchor, theta)

    def rescaled(self, shape: ModelShape, input_scale: np.ndarray) -> "PenaltyBlocks":
        """Blocks for coordinates where first-layer column c was multiplied by input_scale[c].

        Fixed positions then carry weight input_scale[c], which keeps every penalty value unchanged.
        """
        if not self.fixed.any():
            return self
        values = np.ones(self.fixed.shape[0])
        positions = np.flatnonzero(self.fixed)
        values[positions] = np.asarray(input_scale, dtype=float)[positions % shape.n_inputs]
        return PenaltyBlocks(blocks=self.blocks, fixed=self.fixed, block_of=self.block_of, fixed_values=values)

    def block_scalars(self, gradient: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """<g_A, w_A> per block; ``gradient`` may hold one row per sample."""
        product = gradient * self.weights(theta)
        return np.stack([product[..., block].sum(axis=-1) for block in self.blocks], axis=-1)

    def value(self, gradient: np.ndarray, theta: np.ndarray) -> float:
        return float(np.sum(self.block_scalars(gradient, theta) ** 2))

    def sampled_value(self, per_sample: np.ndarray, theta: np.ndarray, estimator: Estimator) -> float:
        scalars = self.block_scalars(per_sample, theta)
        if estimator == Estimator.UNBIASED_APPROX1:
            if scalars.shape[0] < 2:
                raise ObjectiveConfigError("the unbiased estimator needs at least two samples")
            return float(np.sum(np.mean(scalars**2, axis=0) - np.var(scalars, axis=0, ddof=1)))
        return float(np.sum(np.mean(scalars, axis=0) ** 2))

    def gradient(self, risk_grad: np.ndarray, theta: np.ndarray, hvp) -> np.ndarray:
        """Gradient of the penalty given the risk gradient and a Hessian-vector product callable."""
        weights = self.weights(theta)
        scalars = self.block_scalars(risk_grad, theta)
        spread = np.where(self.block_of >= 0, scalars[np.maximum(self.block_of, 0)], 0.0)
        direct = risk_grad * spread * (~self.fixed)
        return 2.0 * (hvp(spread * weights) + direct)


def _masked_positions(shape: ModelShape, mask: Optional[Sequence[int]]) -> np.ndarray:
    if not mask:
        return np.zeros(0, dtype=int)
    bad = [index for index in mask if not 0 <= index < shape.n_inputs]
    if bad:
        raise ObjectiveConfigError(f"mask indices {bad} outside [0, {shape.n_inputs})")
    return shape.input_column_indices(list(mask))


def coco_blocks(shape: ModelShape) -> PenaltyBlocks:
    return PenaltyBlocks.build(shape.n_params, [[j] for j in range(shape.n_params)])


def modified_blocks(shape: ModelShape, mask: Sequence[int]) -> PenaltyBlocks:
    """Singleton blocks with weight 1 on every first-layer weight that reads a masked covariate."""
    if not mask:
        raise ObjectiveConfigError("the modified penalty needs a nonempty non-descendant set")
    return PenaltyBlocks.build(
        shape.n_params, [[j] for j in range(shape.n_params)], _masked_positions(shape, mask)
    )


def weak_blocks(shape: ModelShape, mask: Optional[Sequence[int]] = None) -> PenaltyBlocks:
    return PenaltyBlocks.build(shape.n_params, [list(range(shape.n_params))], _masked_positions(shape, mask))


def irm_blocks(shape: ModelShape) -> PenaltyBlocks:
    """Block whose penalty is the squared derivative of the risk in a scalar output multiplier."""
    if shape.kind != ModelKind.MLP:
        return weak_blocks(shape)
    last = shape.layer_slices[-1]
    return PenaltyBlocks.build(shape.n_params, [list(range(last.start, last.stop))])


def partition_blocks(shape: ModelShape, partition: Sequence[Sequence[int]]) -> PenaltyBlocks:
    seen = sorted(index for block in partition for index in block)
    if seen != list(range(shape.n_params)):
        raise ObjectiveConfigError(f"partition must cover each of the {shape.n_params} parameters exactly once")
    return PenaltyBlocks.build(shape.n_params, partition)


def _population(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec, blocks: PenaltyBlocks) -> float:
    return blocks.value(risk_gradient(params, data, spec), params.theta)


def coco_penalty(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec) -> float:
    """||grad R(theta) * theta||^2 on the full sample."""
    return _population(params, data, spec, coco_blocks(params.shape))


def coco_penalty_unbiased(params: ModelParams, batch: EnvironmentDataset, spec: RiskSpec) -> float:
    if batch.n < 2:
        raise ObjectiveConfigError("the unbiased estimator needs a batch of at least two samples")
    per_sample = per_sample_gradients(params, batch, spec)
    return coco_blocks(params.shape).sampled_value(per_sample, params.theta, Estimator.UNBIASED_APPROX1)


def coco_penalty_biased(params: ModelParams, batch: EnvironmentDataset, spec: RiskSpec) -> float:
    per_sample = per_sample_gradients(params, batch, spec)
    return coco_blocks(params.shape).sampled_value(per_sample, params.theta, Estimator.BIASED_APPROX2)


def modified_penalty(
    params: ModelParams, data: EnvironmentDataset, spec: RiskSpec, mask: Sequence[int]
) -> float:
    """CoCo penalty with the masked coordinates weighted by 1 instead of their value."""
    return _population(params, data, spec, modified_blocks(params.shape, mask))


def weak_penalty(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec) -> float:
    """(<grad R(theta), theta>)^2."""
    return _population(params, data, spec, weak_blocks(params.shape))


def naive_penalty(
    params: ModelParams, data: EnvironmentDataset, spec: RiskSpec, mask: Sequence[int]
) -> float:
    """Weak penalty with the masked coordinates weighted by 1."""
    if not mask:
        raise ObjectiveConfigError("the naive penalty needs a nonempty non-descendant set")
    return _population(params, data, spec, weak_blocks(params.shape, mask))


def partition_penalty(
    params: ModelParams, data: EnvironmentDataset, spec: RiskSpec, partition: Sequence[Sequence[int]]
) -> float:
    return _population(params, data, spec, partition_blocks(params.shape, partition))


def irmv1_penalty(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec) -> float:
    """Squared derivative of the risk of w * f at w = 1."""
    return output_scale_derivative(params, data, spec) ** 2


def penalty_blocks_for(obj: ObjectiveSpec, shape: ModelShape) -> Optional[PenaltyBlocks]:
    """The main penalty of a method, or None for ERM and V-REx."""
    method = Method(obj.method)
    if method in (Method.COCO, Method.COCO_ERM):
        return coco_blocks(shape)
    if method == Method.COCO_MODIFIED:
        return modified_blocks(shape, obj.nondescendant_mask or [])
    if method == Method.NAIVE_COCO:
        return weak_blocks(shape, obj.nondescendant_mask or [])
    if method == Method.IRMV1:
        return irm_blocks(shape)
    return None


class Objective:
    """A training objective bound to its environments and predictor shape.

    Evaluates the value, its per-environment terms and its exact (population-style)
    gradient; sampled estimators are evaluated on row subsets passed as ``batches``.
    """

    def __init__(
        self,
        environments: Sequence[EnvironmentDataset],
        spec: RiskSpec,
        obj: ObjectiveSpec,
        shape: ModelShape,
        *,
        hvp_step: float = 1e-4,
        input_scale: Optional[np.ndarray] = None,
    ) -> None:
        if not environments:
            raise ObjectiveConfigError("at least one environment is required")
        try:
            self.risks = [EnvironmentRisk(env, spec, shape, hvp_step=hvp_step) for env in environments]
        except ValueError as exc:
            raise ObjectiveConfigError(str(exc)) from exc
        self.spec = spec
        self.obj = obj
        self.shape = shape
        self.method = Method(obj.method)
        self.estimator = Estimator(obj.estimator)
        self.lambda_r = obj.lambda_r
        self.penalty = penalty_blocks_for(obj, shape)
        if self.penalty is not None and input_scale is not None:
            self.penalty = self.penalty.rescaled(shape, input_scale)
        self.weak = weak_blocks(shape) if obj.lambda_w > 0 and self.method in (
            Method.COCO_MODIFIED,
            Method.COCO_ERM,
        ) else None

    @classmethod
    def from_multi(
        cls, multi: MultiEnvData, spec: RiskSpec, obj: ObjectiveSpec, shape: ModelShape, **kwargs
    ) -> "Objective":
        return cls(multi.environments, spec, obj, shape, **kwargs)

    @property
    def quadratic(self) -> bool:
        return all(risk.quadratic for risk in self.risks)

    def _penalty(
        self, blocks: PenaltyBlocks, risk: EnvironmentRisk, theta: np.ndarray, gradient: np.ndarray, rows
    ) -> float:
        if self.estimator == Estimator.POPULATION_STYLE:
            return blocks.value(gradient, theta)
        return blocks.sampled_value(risk.per_sample(theta, rows), theta, self.estimator)

    def terms(self, theta: np.ndarray, batches: Optional[Sequence[np.ndarray]] = None) -> ObjectiveTerms:
        risks: list[float] = []
        penalties: list[float] = []
        weak: list[float] = []
        for index, risk in enumerate(self.risks):
            rows = None if batches is None else batches[index]
            gradient = risk.gradient(theta) if self.penalty is not None or self.weak is not None else None
            risks.append(risk.value(theta))
            if self.method == Method.IRMV1 and self.estimator == Estimator.POPULATION_STYLE:
                penalties.append(risk.output_scale_derivative(theta) ** 2)
            elif self.penalty is not None:
                penalties.append(self._penalty(self.penalty, risk, theta, gradient, rows))
            else:
                penalties.append(0.0)
            if self.weak is not None:
                weak.append(self._penalty(self.weak, risk, theta, gradient, rows))
        return ObjectiveTerms(
            env_ids=[risk.env_id for risk in self.risks],
            risks=risks,
            penalties=penalties,
            weak_penalties=weak,
            total=self._combine(np.array(risks), np.array(penalties), np.array(weak) if weak else None),
        )

    def _combine(self, risks: np.ndarray, penalties: np.ndarray, weak: Optional[np.ndarray]) -> float:
        obj = self.obj
        weak_term = 0.0 if weak is None else obj.lambda_w * float(np.mean(weak))
        if self.method == Method.ERM:
            return float(np.mean(risks))
        if self.method in (Method.COCO, Method.NAIVE_COCO):
            return float(np.mean(penalties))
        if self.method == Method.COCO_MODIFIED:
            return float(np.mean(penalties)) + weak_term
        if self.method == Method.COCO_ERM:
            return float(np.mean(penalties)) + weak_term + self.lambda_r * float(np.mean(risks))
        if self.method == Method.IRMV1:
            return float(np.sum(risks + obj.lambda_ * penalties))
        if self.method == Method.VREX:
            variance = float(np.var(risks, ddof=1)) if len(risks) > 1 else 0.0
            return float(np.mean(risks)) + obj.lambda_vrex * variance
        raise ObjectiveConfigError(f"Unsupported method: {self.method}")

    def value(self, theta: np.ndarray, batches: Optional[Sequence[np.ndarray]] = None) -> float:
        return self.terms(theta, batches).total

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        """Exact gradient of the full-sample objective (Hessian-vector products for the penalties)."""
        count = len(self.risks)
        total = np.zeros_like(theta, dtype=float)
        risk_values = []
        risk_grads = []
        for risk in self.risks:
            gradient = risk.gradient(theta)
            risk_grads.append(gradient)
            if self.method == Method.VREX:
                risk_values.append(risk.value(theta))
            hvp = lambda v, risk=risk: risk.hvp(theta, v)  # noqa: E731
            if self.penalty is not None:
                weight = self.obj.lambda_ if self.method == Method.IRMV1 else 1.0 / count
                total += weight * self.penalty.gradient(gradient, theta, hvp)
            if self.weak is not None:
                total += self.obj.lambda_w / count * self.weak.gradient(gradient, theta, hvp)

        if self.method in (Method.ERM, Method.VREX):
            total += np.mean(risk_grads, axis=0)
        elif self.method == Method.COCO_ERM:
            total += self.lambda_r * np.mean(risk_grads, axis=0)
        elif self.method == Method.IRMV1:
            total += np.sum(risk_grads, axis=0)
        if self.method == Method.VREX and count > 1:
            values = np.array(risk_values)
            centred = values - values.mean()
            total += self.obj.lambda_vrex * 2.0 / (count - 1) * np.tensordot(centred, np.array(risk_grads), axes=1)
        return total


def total_objective(params: ModelParams, multi: MultiEnvData, spec: RiskSpec, obj: ObjectiveSpec) -> float:
    return Objective.from_multi(multi, spec, obj, params.shape).value(params.theta)


def objective_terms(params: ModelParams, multi: MultiEnvData, spec: RiskSpec, obj: ObjectiveSpec) -> ObjectiveTerms:
    return Objective.from_multi(multi, spec, obj, params.shape).terms(params.theta)


def penalty_gradient(
    params: ModelParams, data: EnvironmentDataset, spec: RiskSpec, blocks: PenaltyBlocks
) -> np.ndarray:
    """Gradient of one environment's block penalty with respect to theta."""
    risk = EnvironmentRisk(data, spec, params.shape)
    theta = params.theta
    return blocks.gradient(risk.gradient(theta), theta, lambda v: risk.hvp(theta, v))
