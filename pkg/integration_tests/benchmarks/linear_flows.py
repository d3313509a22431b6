from __future__ import annotations

import logging
import sys
from pathlib import Path

CURRENT_DIR = Path(__file__).resolve().parents[2]
if str(CURRENT_DIR) not in sys.path:
    sys.path.insert(0, str(CURRENT_DIR))

from coco.models import LINEAR_CASES, Method, ScenarioKind, Suite
from coco.schemas import EnvParams, ModelShape, ObjectiveSpec, OptimConfig, RiskSpec, SemScenario
from coco.services import bench, env_data, identify, optimizer

from integration_tests.benchmarks.common import FlowConfig, expect, row_mean, setup_logging, within

logger = logging.getLogger(__name__)


class LinearFlowsTester:
    def __init__(self, config: FlowConfig) -> None:
        self.config = config

    def run(self) -> None:
        self.causal_recovery()
        self.appendix_b1()
        self.solution_membership()
        logger.info("Linear flows completed successfully")

    def causal_recovery(self) -> None:
        report = bench.run_suite(
            Suite.LINEAR_CASES,
            reps=self.config.reps,
            seed=self.config.seed,
            n=10_000,
            methods=["erm", "coco"],
            workers=self.config.workers,
        )
        for case in LINEAR_CASES:
            coco = row_mean(report, case.value, "coco", "mae")
            erm = row_mean(report, case.value, "erm", "mae")
            expect(coco < 0.1, f"{case.value}: CoCo MAE {coco:.4f} < 0.1")
            expect(erm > 0.15, f"{case.value}: ERM MAE {erm:.4f} > 0.15")

    def appendix_b1(self) -> None:
        sigmas = [0.2, 0.5, 1.0]
        scenario = SemScenario(
            kind=ScenarioKind.APPENDIX_B1,
            env_params=[EnvParams(sigma=sigma) for sigma in sigmas],
            n_per_env=100_000,
            seed=self.config.seed,
        )
        multi, truth = env_data.generate(scenario)
        for sigma, env in zip(sigmas, multi.environments):
            v = sigma**2
            ols = optimizer.fit_ols_closed_form(env).theta
            expected = [1 / (1 + v), 1 / (1 + v), v / (1 + v), v / (1 + v)]
            expect(within(ols, expected, 0.02), f"appendix-b1 sigma={sigma}: OLS {ols.round(3)} near {expected}")
        # The pooled optimum follows the closed form K / (K + sum v), about 0.699 here, not 0.75.
        pooled = optimizer.fit_ols_closed_form(multi).theta
        closed = len(sigmas) / (len(sigmas) + sum(s**2 for s in sigmas))
        expect(within(pooled[:2], [closed, closed], 0.02), f"appendix-b1 pooled OLS {pooled.round(3)} near {closed:.3f}")

        result = optimizer.fit(
            multi,
            RiskSpec(),
            ObjectiveSpec(method=Method.COCO_MODIFIED, nondescendant_mask=[0, 1]),
            OptimConfig(seed=self.config.seed),
            ModelShape.linear(multi.p),
        )
        expect(within(result.coefficients, truth.beta, 0.05), f"appendix-b1 CoCo {result.coefficients.round(3)} near beta")

    def solution_membership(self) -> None:
        for index, case in enumerate(LINEAR_CASES):
            scenario = SemScenario(
                kind=case,
                env_params=[EnvParams(gamma=0.5), EnvParams(gamma=2.0)],
                n_per_env=10_000,
                seed=self.config.seed + index,
            )
            multi, _ = env_data.generate(scenario)
            shared = identify.intersect_plausible_sets(multi)
            result = optimizer.fit(
                multi,
                RiskSpec(),
                ObjectiveSpec(method=Method.COCO),
                OptimConfig(seed=self.config.seed, tol=1e-10),
                ModelShape.linear(multi.p),
            )
            member = any(within(result.coefficients, point, 1e-2) for point in shared)
            expect(member, f"{case.value}: CoCo solution {result.coefficients.round(3)} in the shared plausible set")


def main() -> None:
    setup_logging()
    LinearFlowsTester(FlowConfig.from_env()).run()


if __name__ == "__main__":
    main()
