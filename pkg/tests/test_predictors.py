from __future__ import annotations

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from coco.models import Activation, LossKind, ModelKind, OutputHead
from coco.schemas import EnvironmentDataset, ModelParams, ModelShape, RiskSpec
from coco.services import predictors
from coco.services.predictors import EnvironmentRisk, ShapeMismatchError


def _dataset(rng: np.random.Generator, n: int, p: int, y: np.ndarray | None = None) -> EnvironmentDataset:
    X = rng.normal(size=(n, p))
    if y is None:
        y = X @ rng.normal(size=p) + rng.normal(size=n)
    return EnvironmentDataset(env_id="e", X=X, y=y, covariate_names=[f"c{j}" for j in range(p)])


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


class ModelShapeTests(unittest.TestCase):
    def test_linear_models_always_use_identity_head(self) -> None:
        shape = ModelShape(kind=ModelKind.LINEAR, sizes=[3], head=OutputHead.SIGMOID)
        self.assertEqual(shape.head, OutputHead.IDENTITY)
        self.assertEqual(ModelShape.logistic(3).head, OutputHead.SIGMOID)

    def test_mlp_layout(self) -> None:
        shape = ModelShape.mlp(3, [4], 2)
        self.assertEqual(shape.layer_shapes, [(4, 3), (2, 4)])
        self.assertEqual(shape.n_params, 20)
        self.assertEqual(shape.input_column_indices([1]).tolist(), [1, 4, 7, 10])

    def test_risk_spec_compatibility(self) -> None:
        with self.assertRaises(ValueError):
            RiskSpec(loss=LossKind.SQUARED).check_compatible(ModelShape.logistic(2))
        with self.assertRaises(ValueError):
            RiskSpec(loss=LossKind.CROSS_ENTROPY).check_compatible(ModelShape.linear(2))

    def test_params_length_is_checked(self) -> None:
        with self.assertRaises(ValueError):
            ModelParams(shape=ModelShape.linear(3), theta=[1.0, 2.0])


class GradientOracleTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(20)

    def test_linear_gradient_matches_finite_differences(self) -> None:
        spec = RiskSpec()
        for _ in range(100):
            data = _dataset(self.rng, 40, 3)
            params = ModelParams(shape=ModelShape.linear(3), theta=self.rng.normal(size=3))
            analytic = predictors.risk_gradient(params, data, spec)
            numeric = predictors.risk_gradient_fd(params, data, spec)
            self.assertLess(_relative_error(analytic, numeric), 1e-4)

    def test_mlp_gradient_matches_finite_differences(self) -> None:
        spec = RiskSpec()
        shape = ModelShape.mlp(3, [5, 4], 1, activation=Activation.TANH)
        for _ in range(100):
            data = _dataset(self.rng, 30, 3)
            params = ModelParams(shape=shape, theta=self.rng.normal(scale=0.5, size=shape.n_params))
            analytic = predictors.risk_gradient(params, data, spec)
            numeric = predictors.risk_gradient_fd(params, data, spec)
            self.assertLess(_relative_error(analytic, numeric), 1e-4)

    def test_softmax_and_logistic_gradients(self) -> None:
        ce = RiskSpec(loss=LossKind.CROSS_ENTROPY)
        labels = self.rng.integers(0, 3, 50).astype(float)
        data = _dataset(self.rng, 50, 4, y=labels)
        shape = ModelShape.mlp(4, [6], 3, head=OutputHead.SOFTMAX)
        params = ModelParams(shape=shape, theta=self.rng.normal(scale=0.5, size=shape.n_params))
        self.assertLess(
            _relative_error(predictors.risk_gradient(params, data, ce), predictors.risk_gradient_fd(params, data, ce)),
            1e-4,
        )
        binary = _dataset(self.rng, 50, 4, y=(labels > 0).astype(float))
        logistic = ModelParams(shape=ModelShape.logistic(4), theta=self.rng.normal(size=4))
        self.assertLess(
            _relative_error(
                predictors.risk_gradient(logistic, binary, ce), predictors.risk_gradient_fd(logistic, binary, ce)
            ),
            1e-4,
        )

    def test_per_sample_gradients_average_to_the_risk_gradient(self) -> None:
        shape = ModelShape.mlp(3, [4], 1)
        data = _dataset(self.rng, 25, 3)
        params = ModelParams(shape=shape, theta=self.rng.normal(size=shape.n_params))
        rows = predictors.per_sample_gradients(params, data, RiskSpec())
        self.assertEqual(rows.shape, (25, shape.n_params))
        assert_allclose(rows.mean(axis=0), predictors.risk_gradient(params, data, RiskSpec()), atol=1e-12)


class HessianVectorTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(5)

    def test_linear_hvp_is_the_gram_product(self) -> None:
        data = _dataset(self.rng, 60, 3)
        params = ModelParams(shape=ModelShape.linear(3), theta=np.zeros(3))
        v = self.rng.normal(size=3)
        gram = data.X.T @ data.X / data.n
        assert_allclose(predictors.hessian_vector_product(params, data, RiskSpec(), v), gram @ v, atol=1e-12)

    def test_logistic_hvp_matches_gradient_differences(self) -> None:
        ce = RiskSpec(loss=LossKind.CROSS_ENTROPY)
        data = _dataset(self.rng, 80, 3, y=self.rng.integers(0, 2, 80).astype(float))
        params = ModelParams(shape=ModelShape.logistic(3), theta=self.rng.normal(size=3))
        v = self.rng.normal(size=3)
        eps = 1e-5
        upper = predictors.risk_gradient(params.with_theta(params.theta + eps * v), data, ce)
        lower = predictors.risk_gradient(params.with_theta(params.theta - eps * v), data, ce)
        assert_allclose(
            predictors.hessian_vector_product(params, data, ce, v), (upper - lower) / (2 * eps), atol=1e-7
        )

    def test_mlp_hvp_is_symmetric(self) -> None:
        shape = ModelShape.mlp(3, [4], 1)
        data = _dataset(self.rng, 40, 3)
        params = ModelParams(shape=shape, theta=self.rng.normal(scale=0.5, size=shape.n_params))
        u = self.rng.normal(size=shape.n_params)
        v = self.rng.normal(size=shape.n_params)
        hv = predictors.hessian_vector_product(params, data, RiskSpec(), v)
        hu = predictors.hessian_vector_product(params, data, RiskSpec(), u)
        self.assertAlmostEqual(float(u @ hv), float(v @ hu), delta=1e-5 * max(1.0, abs(float(u @ hv))))


class PredictionTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(9)

    def test_linear_predictions(self) -> None:
        params = ModelParams(shape=ModelShape.linear(2), theta=[2.0, -1.0])
        assert_allclose(predictors.predict(params, np.array([[1.0, 1.0], [0.0, 3.0]])), [[1.0], [-3.0]])

    def test_column_mismatch_is_rejected(self) -> None:
        params = ModelParams.zeros(ModelShape.linear(3))
        with self.assertRaises(ShapeMismatchError):
            predictors.predict(params, np.ones((2, 2)))

    def test_labels_outside_the_classes_are_rejected(self) -> None:
        shape = ModelShape.mlp(2, [3], 2, head=OutputHead.SOFTMAX)
        data = _dataset(self.rng, 5, 2, y=np.array([0.0, 1.0, 2.0, 1.0, 0.0]))
        with self.assertRaises(ShapeMismatchError):
            predictors.empirical_risk(ModelParams.zeros(shape), data, RiskSpec(loss=LossKind.CROSS_ENTROPY))

    def test_accuracy_in_percent(self) -> None:
        X = np.array([[1.0], [2.0], [-1.0], [-3.0]])
        data = EnvironmentDataset(env_id="e", X=X, y=[1.0, 1.0, 0.0, 1.0], covariate_names=["x"])
        params = ModelParams(shape=ModelShape.logistic(1), theta=[5.0])
        self.assertEqual(predictors.accuracy(params, data), 75.0)

    def test_init_params_is_seeded_and_scaled(self) -> None:
        shape = ModelShape.mlp(4, [8], 1)
        first = predictors.init_params(shape, np.random.default_rng(1), 0.01)
        second = predictors.init_params(shape, np.random.default_rng(1), 0.01)
        assert_allclose(first.theta, second.theta)
        hidden, output = first.weights()
        self.assertGreater(np.std(hidden), 0.1)
        self.assertLess(np.std(output), 0.05)


class StructureTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(31)

    def test_mlp_ignores_columns_with_zero_first_layer_weights(self) -> None:
        shape = ModelShape.mlp(3, [6, 4])
        theta = self.rng.normal(size=shape.n_params)
        theta[shape.input_column_indices([2])] = 0.0
        params = ModelParams(shape=shape, theta=theta)
        X = self.rng.normal(size=(50, 3))
        moved = X.copy()
        moved[:, 2] = self.rng.normal(scale=100.0, size=50)
        assert_array_equal(predictors.predict(params, X), predictors.predict(params, moved))

    def test_logistic_at_zero_is_uninformative(self) -> None:
        X = self.rng.normal(size=(30, 2))
        y = (self.rng.uniform(size=30) < 0.5).astype(float)
        data = EnvironmentDataset(env_id="e", X=X, y=y, covariate_names=["a", "b"])
        params = ModelParams.zeros(ModelShape.logistic(2))
        assert_allclose(predictors.predict(params, X), np.full((30, 1), 0.5))
        spec = RiskSpec(loss=LossKind.CROSS_ENTROPY)
        self.assertAlmostEqual(predictors.empirical_risk(params, data, spec), math.log(2.0), places=12)

    def test_identity_activation_mlp_is_a_product_of_matrices(self) -> None:
        shape = ModelShape.mlp(3, [4], activation=Activation.IDENTITY)
        params = ModelParams(shape=shape, theta=self.rng.normal(size=shape.n_params))
        hidden, output = params.weights()
        X = self.rng.normal(size=(20, 3))
        assert_allclose(predictors.predict(params, X), X @ (output @ hidden).T, atol=1e-12)


class EnvironmentRiskTests(unittest.TestCase):
    def test_cached_statistics_agree_with_the_sample(self) -> None:
        rng = np.random.default_rng(2)
        data = _dataset(rng, 100, 3)
        shape = ModelShape.linear(3)
        risk = EnvironmentRisk(data, RiskSpec(), shape)
        theta = rng.normal(size=3)
        params = ModelParams(shape=shape, theta=theta)
        self.assertTrue(risk.quadratic)
        self.assertAlmostEqual(risk.value(theta), predictors.empirical_risk(params, data, RiskSpec()), places=10)
        assert_allclose(risk.gradient(theta), predictors.risk_gradient(params, data, RiskSpec()), atol=1e-10)


if __name__ == "__main__":
    unittest.main()
