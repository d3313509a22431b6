from __future__ import annotations

import logging
import math
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from ..models.objective import Estimator, Method
from ..models.optim import InitKind, OuterGradMode
from ..schemas.data import EnvironmentDataset, MultiEnvData
from ..schemas.objective import ObjectiveSpec
from ..schemas.optim import FitResult, OptimConfig, TracePoint
from ..schemas.predictor import ModelParams, ModelShape, RiskSpec
from .env_data import child_rng
from .objectives import Objective, ObjectiveConfigError
from .predictors import ShapeMismatchError, init_params

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
MAX_CONDITION = 1e12
ANNEAL_FLOOR = 1e-12
# Increases within this fraction of the objective are rounding, not ascent.
ROUNDING_SLACK = 1e-12

_STREAM_INIT = 10
_STREAM_BATCH = 11


class SingularGramError(ArithmeticError):
    """Raised when a Gram matrix is too ill-conditioned to solve the normal equations."""


class DivergenceError(ArithmeticError):
    """Raised by strict fits whose objective blew up or became non-finite."""


def fit_ols_closed_form(data: Union[EnvironmentDataset, MultiEnvData]) -> ModelParams:
    """Least-squares coefficients from the normal equations on the (pooled) sample."""
    sample = data.pooled() if isinstance(data, MultiEnvData) else data
    gram = sample.X.T @ sample.X / sample.n
    cross = sample.X.T @ sample.y / sample.n
    condition = np.linalg.cond(gram)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularGramError(f"Gram matrix condition number {condition:.3g} exceeds {MAX_CONDITION:.0e}")
    theta = linalg.solve(gram, cross, assume_a="pos")
    return ModelParams(shape=ModelShape.linear(sample.p), theta=theta)


def _input_scale(multi: MultiEnvData) -> np.ndarray:
    pooled = np.vstack([env.X for env in multi.environments])
    scale = np.sqrt(np.mean(pooled**2, axis=0))
    return np.where(scale > 0, scale, 1.0)


def _scaled_environments(multi: MultiEnvData, scale: np.ndarray) -> list[EnvironmentDataset]:
    return [
        EnvironmentDataset(
            env_id=env.env_id,
            X=env.X / scale,
            y=env.y,
            covariate_names=env.covariate_names,
            metadata=env.metadata,
        )
        for env in multi.environments
    ]


def _parameter_factor(shape: ModelShape, scale: np.ndarray) -> np.ndarray:
    """Per-parameter multiplier taking theta to the rescaled-input coordinates."""
    factor = np.ones(shape.n_params)
    first = shape.layer_slices[0]
    factor[first] = np.tile(scale, shape.layer_shapes[0][0])
    return factor


def _finite_difference(value: Callable[[np.ndarray], float], theta: np.ndarray, step: float) -> np.ndarray:
    gradient = np.zeros_like(theta)
    for index in range(theta.shape[0]):
        bump = np.zeros_like(theta)
        bump[index] = step
        gradient[index] = (value(theta + bump) - value(theta - bump)) / (2 * step)
    return gradient


def _resolve_mode(objective: Objective, cfg: OptimConfig, sampled: bool) -> OuterGradMode:
    mode = OuterGradMode(cfg.outer_grad) if cfg.outer_grad is not None else None
    if mode == OuterGradMode.ANALYTIC and not objective.quadratic:
        raise ObjectiveConfigError("analytic outer gradients need a linear predictor with squared loss")
    if sampled:
        return OuterGradMode.FINITE_DIFFERENCE
    if mode is None:
        return OuterGradMode.ANALYTIC if objective.quadratic else OuterGradMode.HESSIAN_VECTOR
    return mode


def _gradient_function(
    objective: Objective, mode: OuterGradMode, cfg: OptimConfig
) -> Callable[[np.ndarray, Optional[Sequence[np.ndarray]]], np.ndarray]:
    if mode == OuterGradMode.FINITE_DIFFERENCE:
        return lambda theta, batches=None: _finite_difference(
            lambda point: objective.value(point, batches), theta, cfg.fd_step
        )
    return lambda theta, batches=None: objective.gradient(theta)


def outer_gradient(
    params: ModelParams,
    multi: MultiEnvData,
    risk: RiskSpec,
    obj: ObjectiveSpec,
    cfg: OptimConfig,
) -> np.ndarray:
    """Gradient of the total objective in the mode chosen by ``cfg.outer_grad``."""
    objective = Objective.from_multi(multi, risk, obj, params.shape, hvp_step=cfg.fd_step)
    mode = _resolve_mode(objective, cfg, sampled=False)
    return _gradient_function(objective, mode, cfg)(params.theta)


def _initial_theta(shape: ModelShape, cfg: OptimConfig, factor: np.ndarray) -> np.ndarray:
    if InitKind(cfg.init) == InitKind.GIVEN_VECTOR:
        if cfg.init_vector is None:
            raise ObjectiveConfigError("init=given-vector requires init_vector")
        if cfg.init_vector.shape[0] != shape.n_params:
            raise ShapeMismatchError(
                f"init_vector has {cfg.init_vector.shape[0]} entries, predictor has {shape.n_params}"
            )
        return cfg.init_vector * factor
    return init_params(shape, child_rng(cfg.seed, _STREAM_INIT, 0), cfg.init_scale).theta.copy()


def _sampled(obj: ObjectiveSpec, cfg: OptimConfig) -> bool:
    return Estimator(obj.estimator) != Estimator.POPULATION_STYLE and cfg.batch_size is not None


def fit(
    multi: MultiEnvData,
    risk: RiskSpec,
    obj: ObjectiveSpec,
    cfg: OptimConfig,
    model_shape: ModelShape,
    *,
    strict: bool = False,
) -> FitResult:
    """Gradient descent on the total objective with step halving and optional risk-weight annealing.

    Returns the best iterate seen since the last change of the risk weight.
    """
    if model_shape.n_inputs != multi.p:
        raise ShapeMismatchError(f"data has {multi.p} covariates, predictor expects {model_shape.n_inputs}")

    scale = _input_scale(multi) if cfg.standardize else np.ones(multi.p)
    factor = _parameter_factor(model_shape, scale)
    environments = _scaled_environments(multi, scale) if cfg.standardize else multi.environments
    objective = Objective(
        environments, risk, obj, model_shape, hvp_step=cfg.fd_step, input_scale=scale if cfg.standardize else None
    )
    sampled = _sampled(obj, cfg)
    mode = _resolve_mode(objective, cfg, sampled)
    gradient_of = _gradient_function(objective, mode, cfg)
    batch_rng = child_rng(cfg.seed, _STREAM_BATCH, 0)

    def draw_batches() -> Optional[list[np.ndarray]]:
        if not sampled:
            return None
        return [
            batch_rng.choice(env.n, size=min(cfg.batch_size, env.n), replace=False) for env in environments
        ]

    anneal = cfg.anneal
    escape_norm = anneal.escape_norm or 0.1 * math.sqrt(model_shape.n_params)
    trigger = anneal.trigger_fraction * cfg.max_iters
    annealing = anneal.enabled and Method(obj.method) == Method.COCO_ERM

    theta = _initial_theta(model_shape, cfg, factor)
    batches = draw_batches()
    value = objective.value(theta, batches)
    trace = [TracePoint(iteration=0, value=value)]
    best_theta, best_value = theta.copy(), value
    eta = cfg.step_size
    successes = 0
    converged = False
    diverged = False
    diagnostic: Optional[str] = None
    gradient_norm = math.inf
    iteration = 0

    for iteration in range(1, cfg.max_iters + 1):
        if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
            diverged = True
            diagnostic = f"objective reached {value:.3g} at iteration {iteration - 1}"
            break
        if annealing and objective.lambda_r > 0 and iteration > trigger:
            if np.linalg.norm(theta / factor) > escape_norm:
                decayed = objective.lambda_r * anneal.decay_factor
                objective.lambda_r = decayed if decayed >= ANNEAL_FLOOR else 0.0
                value = objective.value(theta, batches)
                best_theta, best_value = theta.copy(), value

        gradient = gradient_of(theta, batches)
        gradient_norm = float(np.linalg.norm(gradient))
        if not math.isfinite(gradient_norm):
            diverged = True
            diagnostic = f"non-finite gradient at iteration {iteration}"
            break
        anneal_pending = annealing and objective.lambda_r > 0
        if gradient_norm < cfg.tol and not anneal_pending:
            converged = True
            break

        while True:
            candidate = theta - eta * gradient
            candidate_value = objective.value(candidate, batches)
            if math.isfinite(candidate_value) and candidate_value <= value + ROUNDING_SLACK * max(1.0, abs(value)):
                break
            eta /= 2
            successes = 0
            if eta < cfg.step_size * 1e-15:
                break
        if eta < cfg.step_size * 1e-15:
            diagnostic = f"step size underflow at iteration {iteration} (gradient norm {gradient_norm:.3g})"
            break

        theta, value = candidate, candidate_value
        successes += 1
        if successes >= cfg.restore_after:
            eta = min(2 * eta, cfg.step_size)
            successes = 0
        if sampled:
            batches = draw_batches()
            value = objective.value(theta, batches)
        if value < best_value:
            best_theta, best_value = theta.copy(), value
        if iteration % cfg.trace_every == 0:
            trace.append(TracePoint(iteration=iteration, value=value))

    if converged:
        best_theta, best_value = theta.copy(), value
    elif not diverged:
        final_gradient = gradient_of(best_theta, batches)
        gradient_norm = float(np.linalg.norm(final_gradient))
        converged = gradient_norm < cfg.tol and not (annealing and objective.lambda_r > 0)
        if diagnostic is None and not converged:
            diagnostic = f"stopped after {cfg.max_iters} iterations (gradient norm {gradient_norm:.3g})"

    if diverged:
        logger.warning("Fit diverged: %s", diagnostic)
        if strict:
            raise DivergenceError(diagnostic)

    params = ModelParams(shape=model_shape, theta=best_theta / factor)
    logger.debug(
        "fit %s: iterations=%d objective=%.6g gradient=%.3g converged=%s",
        Method(obj.method).value,
        iteration,
        best_value,
        gradient_norm,
        converged,
    )
    return FitResult(
        params=params,
        objective_trace=trace,
        converged=converged,
        final_gradient_norm=gradient_norm,
        final_objective=best_value,
        iterations=iteration,
        diverged=diverged,
        diagnostic=diagnostic,
        final_lambda_r=objective.lambda_r,
    )
