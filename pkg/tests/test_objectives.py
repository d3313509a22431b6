from __future__ import annotations

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from coco.models import LossKind, Method, ScenarioKind
from coco.schemas import EnvironmentDataset, EnvParams, ModelParams, ModelShape, ObjectiveSpec, RiskSpec, SemScenario
from coco.services import env_data, identify, objectives
from coco.services.objectives import Objective, ObjectiveConfigError


def _environments(seed: int, count: int = 2, n: int = 200, p: int = 3) -> list[EnvironmentDataset]:
    rng = np.random.default_rng(seed)
    environments = []
    for index in range(count):
        X = rng.normal(scale=1.0 + index, size=(n, p))
        y = X @ np.arange(1.0, p + 1.0) + rng.normal(size=n)
        environments.append(
            EnvironmentDataset(env_id=f"env{index + 1}", X=X, y=y, covariate_names=[f"c{j}" for j in range(p)])
        )
    return environments


def _moments(data: EnvironmentDataset) -> tuple[np.ndarray, np.ndarray]:
    return data.X.T @ data.X / data.n, data.X.T @ data.y / data.n


def _numeric_gradient(function, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    gradient = np.zeros_like(theta)
    for index in range(theta.shape[0]):
        bump = np.zeros_like(theta)
        bump[index] = step
        gradient[index] = (function(theta + bump) - function(theta - bump)) / (2 * step)
    return gradient


class PenaltyValueTests(unittest.TestCase):
    def setUp(self) -> None:
        self.data = _environments(1, count=1)[0]
        self.shape = ModelShape.linear(3)
        self.theta = np.array([0.5, -1.0, 2.0])
        self.params = ModelParams(shape=self.shape, theta=self.theta)
        gram, cross = _moments(self.data)
        self.gradient = gram @ self.theta - cross

    def test_coco_penalty_is_the_squared_hadamard_norm(self) -> None:
        expected = float(np.sum((self.gradient * self.theta) ** 2))
        self.assertAlmostEqual(objectives.coco_penalty(self.params, self.data, RiskSpec()), expected, places=10)

    def test_modified_penalty_weights_masked_coordinates_by_one(self) -> None:
        weights = self.theta.copy()
        weights[0] = 1.0
        expected = float(np.sum((self.gradient * weights) ** 2))
        value = objectives.modified_penalty(self.params, self.data, RiskSpec(), [0])
        self.assertAlmostEqual(value, expected, places=10)

    def test_weak_and_naive_penalties(self) -> None:
        self.assertAlmostEqual(
            objectives.weak_penalty(self.params, self.data, RiskSpec()),
            float(self.gradient @ self.theta) ** 2,
            places=10,
        )
        naive_weights = np.array([1.0, -1.0, 2.0])
        self.assertAlmostEqual(
            objectives.naive_penalty(self.params, self.data, RiskSpec(), [0]),
            float(self.gradient @ naive_weights) ** 2,
            places=10,
        )

    def test_partition_penalty_interpolates_between_coco_and_weak(self) -> None:
        singletons = objectives.partition_penalty(self.params, self.data, RiskSpec(), [[0], [1], [2]])
        whole = objectives.partition_penalty(self.params, self.data, RiskSpec(), [[0, 1, 2]])
        self.assertAlmostEqual(singletons, objectives.coco_penalty(self.params, self.data, RiskSpec()), places=10)
        self.assertAlmostEqual(whole, objectives.weak_penalty(self.params, self.data, RiskSpec()), places=10)
        with self.assertRaises(ObjectiveConfigError):
            objectives.partition_penalty(self.params, self.data, RiskSpec(), [[0], [1]])

    def test_masked_penalties_need_a_mask(self) -> None:
        with self.assertRaises(ObjectiveConfigError):
            objectives.modified_penalty(self.params, self.data, RiskSpec(), [])
        with self.assertRaises(ObjectiveConfigError):
            objectives.modified_penalty(self.params, self.data, RiskSpec(), [5])
        with self.assertRaises(ValidationError):
            ObjectiveSpec(method=Method.COCO_MODIFIED)


class IrmEquivalenceTests(unittest.TestCase):
    def test_irmv1_equals_weak_penalty_for_linear_regression(self) -> None:
        rng = np.random.default_rng(3)
        for _ in range(100):
            data = _environments(int(rng.integers(1_000_000)), count=1, n=50)[0]
            params = ModelParams(shape=ModelShape.linear(3), theta=rng.normal(size=3))
            irm = objectives.irmv1_penalty(params, data, RiskSpec())
            weak = objectives.weak_penalty(params, data, RiskSpec())
            self.assertAlmostEqual(irm, weak, delta=1e-12 * max(1.0, weak))

    def test_irmv1_equals_weak_penalty_for_logistic_regression(self) -> None:
        rng = np.random.default_rng(4)
        ce = RiskSpec(loss=LossKind.CROSS_ENTROPY)
        for _ in range(100):
            X = rng.normal(size=(50, 3))
            y = (rng.uniform(size=50) < 0.5).astype(float)
            data = EnvironmentDataset(env_id="e", X=X, y=y, covariate_names=["a", "b", "c"])
            params = ModelParams(shape=ModelShape.logistic(3), theta=rng.normal(size=3))
            irm = objectives.irmv1_penalty(params, data, ce)
            weak = objectives.weak_penalty(params, data, ce)
            self.assertAlmostEqual(irm, weak, delta=1e-12 * max(1.0, weak))


class EstimatorTests(unittest.TestCase):
    def test_unbiased_estimator_matches_the_full_sample_penalty(self) -> None:
        data = _environments(8, count=1, n=200, p=2)[0]
        params = ModelParams(shape=ModelShape.linear(2), theta=[0.7, 1.4])
        full = objectives.coco_penalty(params, data, RiskSpec())
        rng = np.random.default_rng(12)
        unbiased, biased = [], []
        for _ in range(10_000):
            batch = data.take(rng.integers(0, data.n, 8))
            unbiased.append(objectives.coco_penalty_unbiased(params, batch, RiskSpec()))
            biased.append(objectives.coco_penalty_biased(params, batch, RiskSpec()))
        mean = float(np.mean(unbiased))
        standard_error = float(np.std(unbiased, ddof=1) / np.sqrt(len(unbiased)))
        self.assertLess(abs(mean - full), 4 * standard_error)
        self.assertGreaterEqual(float(np.mean(biased)), mean)

    def test_unbiased_estimator_needs_two_samples(self) -> None:
        data = _environments(8, count=1, n=10, p=2)[0]
        params = ModelParams(shape=ModelShape.linear(2), theta=[1.0, 1.0])
        with self.assertRaises(ObjectiveConfigError):
            objectives.coco_penalty_unbiased(params, data.take(np.array([0])), RiskSpec())


class PenaltyGradientTests(unittest.TestCase):
    def test_block_gradient_matches_finite_differences(self) -> None:
        rng = np.random.default_rng(6)
        data = _environments(6, count=1, n=80)[0]
        for shape in (ModelShape.linear(3), ModelShape.mlp(3, [4], 1)):
            theta = rng.normal(scale=0.5, size=shape.n_params)
            params = ModelParams(shape=shape, theta=theta)
            blocks = objectives.modified_blocks(shape, [0])
            analytic = objectives.penalty_gradient(params, data, RiskSpec(), blocks)

            def penalty(point: np.ndarray) -> float:
                return objectives.modified_penalty(params.with_theta(point), data, RiskSpec(), [0])

            numeric = _numeric_gradient(penalty, theta)
            self.assertLess(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8), 1e-4)

    def test_objective_gradient_matches_finite_differences_for_every_method(self) -> None:
        environments = _environments(7, count=3)
        shape = ModelShape.linear(3)
        theta = np.array([0.4, 1.1, -0.6])
        specs = [
            ObjectiveSpec(method=Method.ERM),
            ObjectiveSpec(method=Method.COCO),
            ObjectiveSpec(method=Method.COCO_MODIFIED, nondescendant_mask=[0], lambda_w=0.5),
            ObjectiveSpec(method=Method.NAIVE_COCO, nondescendant_mask=[0]),
            ObjectiveSpec(method=Method.COCO_ERM, lambda_r=0.3, lambda_w=0.2),
            ObjectiveSpec(method=Method.IRMV1, lambda_=2.0),
            ObjectiveSpec(method=Method.VREX, lambda_vrex=3.0),
        ]
        for obj in specs:
            with self.subTest(method=obj.method.value):
                objective = Objective(environments, RiskSpec(), obj, shape)
                analytic = objective.gradient(theta)
                numeric = _numeric_gradient(objective.value, theta)
                self.assertLess(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8), 1e-5)


class ObjectiveCombinationTests(unittest.TestCase):
    def setUp(self) -> None:
        self.environments = _environments(9, count=3)
        self.shape = ModelShape.linear(3)
        self.theta = np.array([1.0, 0.0, 2.0])

    def _terms(self, obj: ObjectiveSpec):
        return Objective(self.environments, RiskSpec(), obj, self.shape).terms(self.theta)

    def test_irmv1_sums_over_environments(self) -> None:
        terms = self._terms(ObjectiveSpec(method=Method.IRMV1, lambda_=2.0))
        expected = sum(risk + 2.0 * penalty for risk, penalty in zip(terms.risks, terms.penalties))
        self.assertAlmostEqual(terms.total, expected, places=10)

    def test_coco_averages_over_environments(self) -> None:
        terms = self._terms(ObjectiveSpec(method=Method.COCO))
        self.assertAlmostEqual(terms.total, float(np.mean(terms.penalties)), places=12)
        self.assertEqual(terms.env_ids, ["env1", "env2", "env3"])

    def test_vrex_adds_the_variance_of_risks(self) -> None:
        terms = self._terms(ObjectiveSpec(method=Method.VREX, lambda_vrex=4.0))
        expected = float(np.mean(terms.risks) + 4.0 * np.var(terms.risks, ddof=1))
        self.assertAlmostEqual(terms.total, expected, places=10)

    def test_risk_regularized_coco_with_weak_term(self) -> None:
        terms = self._terms(ObjectiveSpec(method=Method.COCO_ERM, lambda_r=0.5, lambda_w=2.0))
        expected = np.mean(terms.penalties) + 2.0 * np.mean(terms.weak_penalties) + 0.5 * np.mean(terms.risks)
        self.assertEqual(len(terms.weak_penalties), 3)
        self.assertAlmostEqual(terms.total, float(expected), places=10)

    def test_module_level_wrappers(self) -> None:
        from coco.schemas import MultiEnvData

        multi = MultiEnvData(environments=self.environments)
        params = ModelParams(shape=self.shape, theta=self.theta)
        obj = ObjectiveSpec(method=Method.ERM)
        self.assertAlmostEqual(
            objectives.total_objective(params, multi, RiskSpec(), obj),
            objectives.objective_terms(params, multi, RiskSpec(), obj).total,
            places=12,
        )


class PenaltyOrderingTests(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(41)

    def test_weak_penalty_is_bounded_by_p_times_coco(self) -> None:
        shape = ModelShape.linear(4)
        for seed in range(100):
            data = _environments(seed, count=1, n=50, p=4)[0]
            params = ModelParams(shape=shape, theta=self.rng.normal(scale=2.0, size=4))
            weak = objectives.weak_penalty(params, data, RiskSpec())
            coco = objectives.coco_penalty(params, data, RiskSpec())
            self.assertLessEqual(weak, 4 * coco * (1 + 1e-12) + 1e-15)

    def test_zeros_of_finer_partitions_are_zeros_of_coarser_ones(self) -> None:
        scenario = SemScenario(kind=ScenarioKind.CASE1, env_params=[EnvParams(gamma=1.0)], n_per_env=2000, seed=8)
        multi, _ = env_data.generate(scenario)
        data = multi.environments[0]
        shape = ModelShape.linear(3)
        for point in identify.plausible_set_enumerate(data):
            if point.coefficients is None:
                continue
            params = ModelParams(shape=shape, theta=point.coefficients)
            with self.subTest(subset=point.subset):
                self.assertLess(objectives.partition_penalty(params, data, RiskSpec(), [[0], [1], [2]]), 1e-10)
                self.assertLess(objectives.partition_penalty(params, data, RiskSpec(), [[0, 1], [2]]), 1e-10)
                self.assertLess(objectives.weak_penalty(params, data, RiskSpec()), 1e-10)

    def test_pure_coco_gradient_vanishes_at_zero(self) -> None:
        environments = _environments(12, count=2)
        objective = Objective(environments, RiskSpec(), ObjectiveSpec(method=Method.COCO), ModelShape.linear(3))
        assert_array_equal(objective.gradient(np.zeros(3)), np.zeros(3))
        self.assertEqual(objective.value(np.zeros(3)), 0.0)

    def test_vrex_on_identical_environments_is_erm(self) -> None:
        data = _environments(13, count=1)[0]
        twin = EnvironmentDataset(env_id="twin", X=data.X, y=data.y, covariate_names=data.covariate_names)
        shape = ModelShape.linear(3)
        theta = self.rng.normal(size=3)
        vrex = Objective([data, twin], RiskSpec(), ObjectiveSpec(method=Method.VREX, lambda_vrex=10.0), shape)
        erm = Objective([data, twin], RiskSpec(), ObjectiveSpec(method=Method.ERM), shape)
        self.assertAlmostEqual(vrex.value(theta), erm.value(theta), places=12)
        assert_allclose(vrex.gradient(theta), erm.gradient(theta), atol=1e-12)


class NonIdentifiableTests(unittest.TestCase):
    def test_two_vectors_reach_zero_penalty_in_every_environment(self) -> None:
        scenario = SemScenario(
            kind=ScenarioKind.NON_IDENTIFIABLE,
            env_params=[EnvParams(gamma=gamma) for gamma in (0.5, 1.0, 2.0)],
            n_per_env=100_000,
            seed=5,
        )
        multi, _ = env_data.generate(scenario)
        shape = ModelShape.linear(3)
        for vector in ([2.0, 1.5, 0.0], [1.6, 1.2, 0.4]):
            params = ModelParams(shape=shape, theta=vector)
            for env in multi.environments:
                self.assertLess(objectives.coco_penalty(params, env, RiskSpec()), 1e-3)


if __name__ == "__main__":
    unittest.main()
