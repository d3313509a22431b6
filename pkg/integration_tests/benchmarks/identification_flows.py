from __future__ import annotations

import logging
import sys
from collections import Counter
from pathlib import Path

CURRENT_DIR = Path(__file__).resolve().parents[2]
if str(CURRENT_DIR) not in sys.path:
    sys.path.insert(0, str(CURRENT_DIR))

from coco.models import ScenarioKind
from coco.schemas import EnvParams, ScenarioStream, SemScenario
from coco.services import bench, env_data, identify

from integration_tests.benchmarks.common import FlowConfig, expect, setup_logging

logger = logging.getLogger(__name__)

MAX_ENVS = 10
ICO_REPLICATIONS = 20
# Environments at which the rank check first passes; None means it never passes.
EXPECTED_COUNTS = {
    ScenarioKind.CASE1: 3,
    ScenarioKind.CASE2: None,
    ScenarioKind.CASE3: None,
    ScenarioKind.CASE4: 3,
    ScenarioKind.CASE5: 2,
}


class IdentificationFlowsTester:
    def __init__(self, config: FlowConfig) -> None:
        self.config = config

    def run(self) -> None:
        self.ico_counts()
        self.non_identifiable()
        logger.info("Identification flows completed successfully")

    def _count(self, kind: ScenarioKind, replication: int) -> int | None:
        stream = ScenarioStream(
            kind=kind,
            param_range=(0.0, 5.0),
            n_per_env=10_000,
            seed=bench.cell_seed(self.config.seed, list(ScenarioKind).index(kind), replication),
        )
        _, report = identify.ico_workflow(stream, [0], MAX_ENVS)
        return report.environments_used if report.rank_check.passes else None

    def ico_counts(self) -> None:
        for kind, expected in EXPECTED_COUNTS.items():
            votes = Counter(self._count(kind, replication) for replication in range(ICO_REPLICATIONS))
            winner, count = votes.most_common(1)[0]
            logger.info("%s: environments needed %s", kind.value, dict(votes))
            expect(
                winner == expected and count > ICO_REPLICATIONS // 2,
                f"{kind.value}: majority count {winner} ({count}/{ICO_REPLICATIONS}) equals {expected}",
            )

    def non_identifiable(self) -> None:
        stream = ScenarioStream(kind=ScenarioKind.NON_IDENTIFIABLE, param_range=(0.5, 5.0), n_per_env=100_000, seed=1)
        _, report = identify.ico_workflow(stream, [0, 1], MAX_ENVS)
        expect(not report.rank_check.passes, "non-identifiable family never passes the rank check")
        expect(report.distinct_invariant_vectors, "non-identifiable family has two distinct invariant vectors")

        scenario = SemScenario(
            kind=ScenarioKind.NON_IDENTIFIABLE,
            env_params=[EnvParams(gamma=gamma) for gamma in (0.5, 1.0, 2.0)],
            n_per_env=100_000,
            seed=self.config.seed,
        )
        multi, _ = env_data.generate(scenario)
        expect(not identify.check_effectiveness_A2(multi, [0, 1]), "A2 fails on the non-identifiable scenario")


def main() -> None:
    setup_logging()
    IdentificationFlowsTester(FlowConfig.from_env()).run()


if __name__ == "__main__":
    main()
