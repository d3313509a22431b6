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


class GmmFlowsTester:
    def __init__(self, config: FlowConfig) -> None:
        self.config = config

    def run(self) -> None:
        report = bench.run_suite(
            Suite.GMM,
            reps=max(1, self.config.reps // 5),
            seed=self.config.seed,
            methods=["erm", "coco", "oracle"],
            workers=self.config.workers,
        )
        coco = row_mean(report, "gmm", "coco", "test_accuracy")
        oracle = row_mean(report, "gmm", "oracle", "test_accuracy")
        erm_test = row_mean(report, "gmm", "erm", "test_accuracy")
        erm_train = row_mean(report, "gmm", "erm", "train_accuracy")
        expect(coco >= 85.0, f"CoCo test accuracy {coco:.1f} >= 85")
        expect(abs(coco - oracle) <= 5.0, f"CoCo {coco:.1f} within 5 points of the oracle {oracle:.1f}")
        expect(erm_test < 60.0, f"ERM test accuracy {erm_test:.1f} < 60")
        expect(erm_train > 95.0, f"ERM train accuracy {erm_train:.1f} > 95")
        logger.info("GMM flow completed successfully")


def main() -> None:
    setup_logging()
    GmmFlowsTester(FlowConfig.from_env()).run()


if __name__ == "__main__":
    main()
