from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from dotenv import load_dotenv

from coco.schemas import BenchReport

logger = logging.getLogger(__name__)

load_dotenv()


@dataclass
class FlowConfig:
    reps: int
    seed: int
    workers: int

    @classmethod
    def from_env(cls) -> "FlowConfig":
        try:
            return cls(
                reps=int(os.environ.get("COCO_FLOW_REPS", "10")),
                seed=int(os.environ.get("COCO_FLOW_SEED", "2024")),
                workers=int(os.environ.get("COCO_WORKERS", "4")),
            )
        except ValueError as exc:
            raise SystemExit(f"Invalid flow setting: {exc}") from exc


class FlowFailure(AssertionError):
    pass


def expect(condition: bool, message: str) -> None:
    if not condition:
        raise FlowFailure(message)
    logger.info("ok: %s", message)


def row_mean(report: BenchReport, case: str, method: str, metric: str) -> float:
    row = report.row(case, method, metric)
    if row is None or row.mean is None:
        raise FlowFailure(f"no {metric} for {case}/{method}")
    if row.failures:
        raise FlowFailure(f"{row.failures} failed cells for {case}/{method}")
    return row.mean


def within(vector: Sequence[float], target: Sequence[float], tol: float) -> bool:
    return float(np.max(np.abs(np.asarray(vector) - np.asarray(target)))) < tol


def setup_logging() -> None:
    logging.basicConfig(level=logging.INFO, format="[%(levelname)s] %(message)s")
