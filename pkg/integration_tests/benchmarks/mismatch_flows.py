from __future__ import annotations

import logging
import sys
from pathlib import Path

CURRENT_DIR = Path(__file__).resolve().parents[2]
if str(CURRENT_DIR) not in sys.path:
    sys.path.insert(0, str(CURRENT_DIR))

from coco.models import Suite
from coco.services import bench

from integration_tests.benchmarks.common import FlowConfig, expect, row_mean, setup_logging

logger = logging.getLogger(__name__)


class MismatchFlowsTester:
    def __init__(self, config: FlowConfig) -> None:
        self.config = config

    def run(self) -> None:
        report = bench.run_suite(
            Suite.MISMATCH, reps=max(1, self.config.reps // 2), seed=self.config.seed, workers=self.config.workers
        )
        errors = {method: row_mean(report, "case5", method, "prediction_error") for method in bench.MISMATCH_METHODS}
        logger.info("Out-of-range prediction errors: %s", errors)
        expect(errors["linear-coco"] < errors["linear-erm"], "masked CoCo beats ERM for the linear model")
        expect(errors["mlp-coco"] < errors["mlp-erm"], "CoCo beats ERM for the MLP")
        logger.info("Mismatch flow completed successfully")


def main() -> None:
    setup_logging()
    MismatchFlowsTester(FlowConfig.from_env()).run()


if __name__ == "__main__":
    main()
