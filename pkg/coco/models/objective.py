from __future__ import annotations

from .base import LookupEnum


class Method(LookupEnum):
    ERM = "erm"
    COCO = "coco"
    COCO_MODIFIED = "coco-modified"
    NAIVE_COCO = "naive-coco"
    COCO_ERM = "coco-erm"
    IRMV1 = "irmv1"
    VREX = "vrex"

    @property
    def needs_mask(self) -> bool:
        return self in (Method.COCO_MODIFIED, Method.NAIVE_COCO)


class Estimator(LookupEnum):
    POPULATION_STYLE = "population"
    UNBIASED_APPROX1 = "unbiased"
    BIASED_APPROX2 = "biased"
