from __future__ import annotations

import tempfile
import unittest
from pathlib import Path

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from coco.models import ScenarioKind
from coco.schemas import EnvParams, ScenarioStream, SemScenario
from coco.services import env_data
from coco.services.env_data import DatasetFormatError, ScenarioError
from coco.services.optimizer import fit_ols_closed_form


def _scenario(kind: ScenarioKind, values: list[float], n: int = 500, seed: int = 7) -> SemScenario:
    field = {ScenarioKind.GMM: "p_flip", ScenarioKind.APPENDIX_B1: "sigma"}.get(kind, "gamma")
    return SemScenario(kind=kind, env_params=[EnvParams(**{field: v}) for v in values], n_per_env=n, seed=seed)


class CovariateLayoutTests(unittest.TestCase):
    def test_names_list_causes_before_descendants(self) -> None:
        self.assertEqual(env_data.covariate_names(ScenarioKind.CASE5), ["x1", "z"])
        self.assertEqual(env_data.covariate_names(ScenarioKind.CASE2), ["x1", "x2", "x3", "z"])
        self.assertEqual(env_data.covariate_names(ScenarioKind.CASE4), ["x1", "x2", "z"])
        self.assertEqual(env_data.covariate_names(ScenarioKind.APPENDIX_B1), ["x1", "x2", "z1", "z2"])

    def test_gmm_has_five_causes_and_three_anchor_columns(self) -> None:
        names = env_data.covariate_names(ScenarioKind.GMM, 5)
        self.assertEqual(len(names), 8)
        self.assertEqual(names[:5], ["x1", "x2", "x3", "x4", "x5"])
        self.assertEqual(names[5:], ["z1", "z2", "z3"])

    def test_true_causal_model(self) -> None:
        truth = env_data.true_causal_model(ScenarioKind.CASE5)
        assert_array_equal(truth.beta, [2.0, 0.0])
        self.assertEqual(truth.support, [0])
        case4 = env_data.true_causal_model(ScenarioKind.CASE4)
        assert_array_equal(case4.beta, [2.0, 3.0, 0.0])
        gmm = env_data.true_causal_model(ScenarioKind.GMM)
        self.assertIsNone(gmm.beta)
        self.assertEqual(gmm.support, [0, 1, 2, 3, 4])

    def test_default_nondescendants(self) -> None:
        self.assertEqual(env_data.default_nondescendants(ScenarioKind.CASE1), [0])
        self.assertEqual(env_data.default_nondescendants(ScenarioKind.APPENDIX_B1), [0, 1])
        self.assertEqual(env_data.default_nondescendants(ScenarioKind.GMM, 5), [0, 1, 2, 3, 4])


class GenerateTests(unittest.TestCase):
    def test_same_seed_gives_identical_samples(self) -> None:
        first, _ = env_data.generate(_scenario(ScenarioKind.CASE1, [0.5, 2.0]))
        second, _ = env_data.generate(_scenario(ScenarioKind.CASE1, [0.5, 2.0]))
        for left, right in zip(first.environments, second.environments):
            assert_array_equal(left.X, right.X)
            assert_array_equal(left.y, right.y)

    def test_different_seeds_differ(self) -> None:
        first, _ = env_data.generate(_scenario(ScenarioKind.CASE5, [0.5], seed=1))
        second, _ = env_data.generate(_scenario(ScenarioKind.CASE5, [0.5], seed=2))
        self.assertFalse(np.array_equal(first.environments[0].X, second.environments[0].X))

    def test_environment_ids_and_metadata(self) -> None:
        multi, _ = env_data.generate(_scenario(ScenarioKind.CASE1, [0.5, 2.0]))
        self.assertEqual([env.env_id for env in multi.environments], ["env1", "env2"])
        meta = multi.environments[1].metadata
        self.assertEqual(meta["gamma"], 2.0)
        self.assertTrue(0.0 <= meta["m1"] <= 1.0)
        self.assertEqual(multi.known_nondescendants, [0])

    def test_case5_regression_on_cause_recovers_beta(self) -> None:
        multi, _ = env_data.generate(_scenario(ScenarioKind.CASE5, [2.0], n=20_000))
        only_x1 = env_data.restrict_columns(multi, ["x1"])
        coefficients = fit_ols_closed_form(only_x1).theta
        self.assertAlmostEqual(float(coefficients[0]), 2.0, delta=0.05)

    def test_appendix_b1_ols_matches_closed_form(self) -> None:
        multi, _ = env_data.generate(_scenario(ScenarioKind.APPENDIX_B1, [0.5], n=100_000))
        v = 0.25
        expected = [1 / (1 + v), 1 / (1 + v), v / (1 + v), v / (1 + v)]
        assert_allclose(fit_ols_closed_form(multi.environments[0]).theta, expected, atol=0.02)

    def test_nonidentifiable_regression_on_everything_is_shared(self) -> None:
        multi, _ = env_data.generate(_scenario(ScenarioKind.NON_IDENTIFIABLE, [1.0, 2.0, 3.0], n=100_000))
        for env in multi.environments:
            with self.subTest(env=env.env_id):
                assert_allclose(fit_ols_closed_form(env).theta, [1.6, 1.2, 0.4], atol=0.05)

    def test_case1_rejects_non_positive_gamma(self) -> None:
        with self.assertRaises(ScenarioError):
            env_data.generate(_scenario(ScenarioKind.CASE1, [0.0]))

    def test_missing_environment_parameter_is_rejected(self) -> None:
        with self.assertRaises(ValidationError):
            SemScenario(kind=ScenarioKind.CASE5, env_params=[EnvParams(sigma=1.0)], n_per_env=10)


class DoInterventionTests(unittest.TestCase):
    def setUp(self) -> None:
        self.scenario = _scenario(ScenarioKind.CASE5, [0.5, 2.0])

    def test_do_fixes_the_target_column(self) -> None:
        env = env_data.apply_do_intervention(self.scenario, "x1", 1.5)
        assert_array_equal(env.X[:, 0], np.full(env.n, 1.5))
        self.assertEqual(env.metadata["do"], {"x1": 1.5})

    def test_do_on_descendant_leaves_outcome_law(self) -> None:
        plain, _ = env_data.generate(self.scenario)
        env = env_data.apply_do_intervention(self.scenario, 1, 0.0)
        assert_array_equal(env.X[:, 1], np.zeros(env.n))
        self.assertAlmostEqual(float(env.y.mean()), float(plain.environments[0].y.mean()), delta=0.3)

    def test_latent_mediator_is_a_valid_target(self) -> None:
        scenario = _scenario(ScenarioKind.CASE4, [1.0])
        env = env_data.apply_do_intervention(scenario, "x3", 0.0)
        self.assertEqual(env.covariate_names, ["x1", "x2", "z"])
        self.assertEqual(env.metadata["do"], {"x3": 0.0})

    def test_zeroed_cause_centres_the_outcome(self) -> None:
        scenario = _scenario(ScenarioKind.CASE5, [1.0], n=20_000)
        env = env_data.apply_do_intervention(scenario, "x1", 0.0)
        standard_error = float(env.y.std(ddof=1)) / np.sqrt(env.n)
        self.assertLess(abs(float(env.y.mean())), 3 * standard_error)

    def test_do_on_case2_cause_propagates_to_its_child(self) -> None:
        scenario = _scenario(ScenarioKind.CASE2, [1.0], n=20_000)
        env = env_data.apply_do_intervention(scenario, "x1", 1.0)
        x3 = env.X[:, 2]
        standard_error = float(x3.std(ddof=1)) / np.sqrt(env.n)
        self.assertLess(abs(float(x3.mean()) - np.sin(1.0)), 3 * standard_error)

    def test_outcome_and_unsupported_scenarios_are_rejected(self) -> None:
        with self.assertRaises(ScenarioError):
            env_data.apply_do_intervention(self.scenario, "y", 0.0)
        with self.assertRaises(ScenarioError):
            env_data.apply_do_intervention(self.scenario, "x7", 0.0)
        with self.assertRaises(ScenarioError):
            env_data.apply_do_intervention(_scenario(ScenarioKind.GMM, [0.01]), 0, 0.0)


class StreamTests(unittest.TestCase):
    def test_draw_environment_is_deterministic_and_in_range(self) -> None:
        stream = ScenarioStream(kind=ScenarioKind.CASE5, param_range=(0.0, 5.0), n_per_env=50, seed=3)
        first = env_data.draw_environment(stream, 4)
        second = env_data.draw_environment(stream, 4)
        assert_array_equal(first.X, second.X)
        self.assertTrue(0.0 < first.metadata["gamma"] < 5.0)
        self.assertEqual(first.env_id, "env5")

    def test_appendix_b1_stream_draws_sigma(self) -> None:
        stream = ScenarioStream(kind=ScenarioKind.APPENDIX_B1, param_range=(0.1, 1.0), n_per_env=20)
        env = env_data.draw_environment(stream, 0)
        self.assertTrue(0.1 <= env.metadata["sigma"] <= 1.0)

    def test_gmm_streams_are_rejected(self) -> None:
        with self.assertRaises(ValidationError):
            ScenarioStream(kind=ScenarioKind.GMM, n_per_env=10)


class GmmTests(unittest.TestCase):
    def setUp(self) -> None:
        self.scenario = env_data.gmm_training_scenario(n_per_env=400, seed=11)

    def test_training_flip_probabilities(self) -> None:
        self.assertEqual([params.p_flip for params in self.scenario.env_params], [0.01, 0.02, 0.03, 0.04, 0.05])

    def test_labels_are_integer_classes(self) -> None:
        multi, _ = env_data.generate(self.scenario)
        labels = multi.environments[0].y
        assert_array_equal(labels, np.rint(labels))
        self.assertTrue(set(np.unique(labels)).issubset({0.0, 1.0, 2.0, 3.0, 4.0}))

    def test_unflipped_anchors_match_the_label(self) -> None:
        env = env_data.gmm_test_environments(self.scenario, count=1)[0]
        anchors = np.array(env.metadata["anchors"])
        assert_allclose(env.X[:, 5:], anchors[env.y.astype(int)])

    def test_classes_are_balanced(self) -> None:
        scenario = env_data.gmm_training_scenario(n_per_env=20_000, seed=12)
        multi, _ = env_data.generate(scenario)
        share = 1 / scenario.n_classes
        standard_error = np.sqrt(share * (1 - share) / scenario.n_per_env)
        for env in multi.environments:
            counts = np.bincount(env.y.astype(int), minlength=scenario.n_classes) / env.n
            with self.subTest(env=env.env_id):
                self.assertTrue(np.all(np.abs(counts - share) < 3 * standard_error), counts)

    def test_every_anchor_coordinate_is_uniform(self) -> None:
        multi, _ = env_data.generate(self.scenario)
        anchors = np.array(multi.environments[0].metadata["anchors"])
        self.assertEqual(anchors.shape, (5, 3))
        self.assertTrue(np.all((anchors > 0) & (anchors < 1)))

    def test_test_environments_use_fresh_anchors(self) -> None:
        multi, _ = env_data.generate(self.scenario)
        tests = env_data.gmm_test_environments(self.scenario, count=2)
        self.assertEqual(len(tests), 2)
        self.assertEqual(tests[0].metadata["p_flip"], 0.0)
        self.assertFalse(np.allclose(tests[0].metadata["anchors"], multi.environments[0].metadata["anchors"]))

    def test_validation_environment_is_distinct_from_tests(self) -> None:
        validation = env_data.gmm_validation_environment(self.scenario)
        test = env_data.gmm_test_environments(self.scenario, count=1)[0]
        self.assertEqual(validation.env_id, "validation")
        self.assertFalse(np.array_equal(validation.X, test.X))


class CsvTests(unittest.TestCase):
    def test_written_files_reload_exactly(self) -> None:
        multi, _ = env_data.generate(_scenario(ScenarioKind.CASE5, [0.5, 2.0], n=50))
        with tempfile.TemporaryDirectory() as tmp:
            paths = env_data.write_csv(multi, tmp)
            self.assertEqual(paths[0].read_text().splitlines()[0], "y,x1,z")
            loaded = env_data.load_csv(paths, [0])
        self.assertEqual([env.env_id for env in loaded.environments], ["env1", "env2"])
        assert_array_equal(loaded.environments[1].X, multi.environments[1].X)
        assert_array_equal(loaded.environments[1].y, multi.environments[1].y)

    def test_gmm_labels_are_written_as_integers(self) -> None:
        scenario = env_data.gmm_training_scenario(n_per_env=5, seed=0, n_envs=1)
        multi, _ = env_data.generate(scenario)
        with tempfile.TemporaryDirectory() as tmp:
            lines = env_data.write_csv(multi, tmp)[0].read_text().splitlines()
        self.assertEqual(len(lines[0].split(",")), 9)
        self.assertTrue(all(line.split(",")[0].isdigit() for line in lines[1:]))

    def test_load_errors(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            (root / "a.csv").write_text("y,x1,z\n1.0,2.0,3.0\n")
            (root / "b.csv").write_text("y,x1,w\n1.0,2.0,3.0\n")
            (root / "c.csv").write_text("y,x1,z\n1.0,abc,3.0\n")
            (root / "d.csv").write_text("")
            with self.assertRaisesRegex(DatasetFormatError, "header mismatch"):
                env_data.load_csv([root / "a.csv", root / "b.csv"])
            with self.assertRaisesRegex(DatasetFormatError, "non-numeric"):
                env_data.load_csv([root / "c.csv"])
            with self.assertRaisesRegex(DatasetFormatError, "empty"):
                env_data.load_csv([root / "d.csv"])
            with self.assertRaisesRegex(DatasetFormatError, "not found"):
                env_data.load_csv([root / "missing.csv"])


if __name__ == "__main__":
    unittest.main()
