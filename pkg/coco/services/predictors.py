from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy.special import expit, softmax

from ..models.predictor import Activation, LossKind, ModelKind, OutputHead
from ..schemas.data import EnvironmentDataset
from ..schemas.predictor import ModelParams, ModelShape, RiskSpec

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class ShapeMismatchError(ValueError):
    """Raised when covariates or labels do not fit the predictor's shape."""


def _check_columns(shape: ModelShape, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != shape.n_inputs:
        raise ShapeMismatchError(f"X has shape {X.shape}, predictor expects {shape.n_inputs} columns")


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.TANH:
        return np.tanh(z)
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_slope(z: np.ndarray, a: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.TANH:
        return 1.0 - a * a
    if activation == Activation.RELU:
        return (z > 0).astype(float)
    return np.ones_like(z)


def _forward(params: ModelParams, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Return layer inputs, hidden pre-activations and the output before the head."""
    if params.kind != ModelKind.MLP:
        return [X], [], X @ params.theta[:, None]
    weights = params.weights()
    inputs = [X]
    pre_activations: list[np.ndarray] = []
    hidden = X
    for weight in weights[:-1]:
        z = hidden @ weight.T
        hidden = _activate(z, params.shape.activation)
        pre_activations.append(z)
        inputs.append(hidden)
    return inputs, pre_activations, hidden @ weights[-1].T


def _apply_head(out: np.ndarray, head: OutputHead) -> np.ndarray:
    if head == OutputHead.SIGMOID:
        return expit(out)
    if head == OutputHead.SOFTMAX:
        return softmax(out, axis=1)
    return out


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Predictions as an n x k matrix (k = 1 unless the head is a softmax)."""
    X = np.asarray(X, dtype=float)
    _check_columns(params.shape, X)
    _, _, out = _forward(params, X)
    return _apply_head(out, params.shape.head)


def _labels(y: np.ndarray, classes: int) -> np.ndarray:
    labels = np.rint(y).astype(int)
    if np.any(np.abs(y - labels) > 0) or labels.min() < 0 or labels.max() >= classes:
        raise ShapeMismatchError(f"labels must be integers in [0, {classes})")
    return labels


def _losses_and_output_slopes(
    params: ModelParams, data: EnvironmentDataset, spec: RiskSpec
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Per-sample losses, d(loss)/d(output), plus the forward cache for backpropagation."""
    spec.check_compatible(params.shape)
    _check_columns(params.shape, data.X)
    inputs, pre_activations, out = _forward(params, data.X)
    y = data.y
    head = params.shape.head
    if spec.loss == LossKind.SQUARED:
        residual = out[:, 0] - y
        return 0.5 * residual**2, residual[:, None], inputs, pre_activations, out
    if head == OutputHead.SIGMOID:
        if np.any((y != 0) & (y != 1)):
            raise ShapeMismatchError("binary cross-entropy needs labels in {0, 1}")
        prob = expit(out[:, 0])
        clamped = np.clip(prob, PROB_FLOOR, 1 - PROB_FLOOR)
        losses = -(y * np.log(clamped) + (1 - y) * np.log(1 - clamped))
        return losses, (prob - y)[:, None], inputs, pre_activations, out
    labels = _labels(y, out.shape[1])
    prob = softmax(out, axis=1)
    clamped = np.clip(prob[np.arange(len(labels)), labels], PROB_FLOOR, 1 - PROB_FLOOR)
    slopes = prob.copy()
    slopes[np.arange(len(labels)), labels] -= 1.0
    return -np.log(clamped), slopes, inputs, pre_activations, out


def empirical_risk(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec) -> float:
    losses, *_ = _losses_and_output_slopes(params, data, spec)
    return float(np.mean(losses))


def _backpropagate(
    params: ModelParams,
    slopes: np.ndarray,
    inputs: list[np.ndarray],
    pre_activations: list[np.ndarray],
    *,
    per_sample: bool,
) -> np.ndarray:
    n = slopes.shape[0]
    if params.kind != ModelKind.MLP:
        per_row = slopes[:, :1] * inputs[0]
        return per_row if per_sample else per_row.mean(axis=0)

    weights = params.weights()
    blocks: list[np.ndarray] = [np.empty(0)] * len(weights)
    delta = slopes
    for layer in range(len(weights) - 1, -1, -1):
        layer_input = inputs[layer]
        if per_sample:
            blocks[layer] = (delta[:, :, None] * layer_input[:, None, :]).reshape(n, -1)
        else:
            blocks[layer] = (delta.T @ layer_input / n).reshape(-1)
        if layer > 0:
            z = pre_activations[layer - 1]
            delta = (delta @ weights[layer]) * _activation_slope(z, inputs[layer], params.shape.activation)
    return np.concatenate(blocks, axis=1 if per_sample else 0)


def risk_gradient(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec) -> np.ndarray:
    """Exact gradient of the empirical risk with respect to theta."""
    _, slopes, inputs, pre_activations, _ = _losses_and_output_slopes(params, data, spec)
    return _backpropagate(params, slopes, inputs, pre_activations, per_sample=False)


def per_sample_gradients(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec) -> np.ndarray:
    """Row i is the gradient of sample i's loss; the row mean is ``risk_gradient``."""
    _, slopes, inputs, pre_activations, _ = _losses_and_output_slopes(params, data, spec)
    return _backpropagate(params, slopes, inputs, pre_activations, per_sample=True)


def risk_gradient_fd(
    params: ModelParams, data: EnvironmentDataset, spec: RiskSpec, step: float = 1e-5
) -> np.ndarray:
    """Central finite differences of the empirical risk, one coordinate at a time."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    theta = params.theta
    gradient = np.zeros_like(theta)
    for index in range(theta.shape[0]):
        bump = np.zeros_like(theta)
        bump[index] = step
        upper = empirical_risk(params.with_theta(theta + bump), data, spec)
        lower = empirical_risk(params.with_theta(theta - bump), data, spec)
        gradient[index] = (upper - lower) / (2 * step)
    return gradient


def hessian_vector_product(
    params: ModelParams,
    data: EnvironmentDataset,
    spec: RiskSpec,
    v: np.ndarray,
    step: float = 1e-4,
) -> np.ndarray:
    """Product of the risk Hessian with v.

    Exact for linear regression (Gram matrix) and logistic regression; for an MLP it is
    the central difference of the analytic gradient along v.
    """
    v = np.asarray(v, dtype=float)
    X = data.X
    if params.kind == ModelKind.LINEAR and spec.loss == LossKind.SQUARED:
        return X.T @ (X @ v) / data.n
    if params.kind == ModelKind.LOGISTIC:
        prob = expit(X @ params.theta)
        return X.T @ (prob * (1 - prob) * (X @ v)) / data.n
    eps = step / max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    upper = risk_gradient(params.with_theta(params.theta + eps * v), data, spec)
    lower = risk_gradient(params.with_theta(params.theta - eps * v), data, spec)
    return (upper - lower) / (2 * eps)


def accuracy(params: ModelParams, data: EnvironmentDataset) -> float:
    """Classification accuracy in percent."""
    scores = predict(params, data.X)
    if params.shape.head == OutputHead.SOFTMAX:
        predicted = np.argmax(scores, axis=1)
    else:
        predicted = (scores[:, 0] > 0.5).astype(int)
    return float(100.0 * np.mean(predicted == np.rint(data.y).astype(int)))


def output_scale_derivative(params: ModelParams, data: EnvironmentDataset, spec: RiskSpec) -> float:
    """d/dw of the risk of the predictor whose pre-head output is scaled by w, at w = 1."""
    _, slopes, _, _, out = _losses_and_output_slopes(params, data, spec)
    return float(np.mean(np.sum(slopes * out, axis=1)))


class EnvironmentRisk:
    """Risk oracle of one environment for a fixed predictor shape.

    Linear regression problems are reduced to their sufficient statistics (Gram matrix,
    cross-moment and mean squared outcome) so evaluation cost does not depend on n.
    """

    def __init__(
        self,
        data: EnvironmentDataset,
        spec: RiskSpec,
        shape: ModelShape,
        *,
        hvp_step: float = 1e-4,
    ) -> None:
        spec.check_compatible(shape)
        _check_columns(shape, data.X)
        self.data = data
        self.spec = spec
        self.shape = shape
        self.hvp_step = hvp_step
        self.quadratic = shape.kind == ModelKind.LINEAR and spec.loss == LossKind.SQUARED
        self.gram: Optional[np.ndarray] = None
        self.cross: Optional[np.ndarray] = None
        self.mean_y_squared = 0.0
        if self.quadratic:
            X, y = data.X, data.y
            self.gram = X.T @ X / data.n
            self.cross = X.T @ y / data.n
            self.mean_y_squared = float(y @ y / data.n)

    @property
    def env_id(self) -> str:
        return self.data.env_id

    def _params(self, theta: np.ndarray) -> ModelParams:
        return ModelParams(shape=self.shape, theta=theta)

    def value(self, theta: np.ndarray) -> float:
        if self.quadratic:
            quad = theta @ self.gram @ theta - 2 * self.cross @ theta + self.mean_y_squared
            return float(max(0.5 * quad, 0.0))
        return empirical_risk(self._params(theta), self.data, self.spec)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        if self.quadratic:
            return self.gram @ theta - self.cross
        return risk_gradient(self._params(theta), self.data, self.spec)

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.quadratic:
            return self.gram @ v
        return hessian_vector_product(self._params(theta), self.data, self.spec, v, self.hvp_step)

    def per_sample(self, theta: np.ndarray, rows: Optional[np.ndarray] = None) -> np.ndarray:
        data = self.data if rows is None else self.data.take(rows)
        return per_sample_gradients(self._params(theta), data, self.spec)

    def output_scale_derivative(self, theta: np.ndarray) -> float:
        return output_scale_derivative(self._params(theta), self.data, self.spec)


def init_params(shape: ModelShape, rng: np.random.Generator, scale: float = 0.01) -> ModelParams:
    """Small Gaussian parameters; hidden layers use a fan-in scaled draw so a deep tanh net is not flat."""
    if shape.kind != ModelKind.MLP:
        return ModelParams(shape=shape, theta=rng.normal(0.0, scale, size=shape.n_params))
    blocks = []
    layers = shape.layer_shapes
    for index, (rows, cols) in enumerate(layers):
        spread = scale if index == len(layers) - 1 else max(scale, 1.0 / np.sqrt(cols))
        blocks.append(rng.normal(0.0, spread, size=rows * cols))
    return ModelParams(shape=shape, theta=np.concatenate(blocks))
