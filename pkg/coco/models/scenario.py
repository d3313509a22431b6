from __future__ import annotations

from .base import LookupEnum


class ScenarioKind(LookupEnum):
    CASE1 = "case1"
    CASE2 = "case2"
    CASE3 = "case3"
    CASE4 = "case4"
    CASE5 = "case5"
    APPENDIX_B1 = "appendix-b1"
    NON_IDENTIFIABLE = "nonidentifiable"
    GMM = "gmm"

    @property
    def is_linear_case(self) -> bool:
        return self in LINEAR_CASES

    @property
    def supports_do(self) -> bool:
        return self in LINEAR_CASES


LINEAR_CASES = (
    ScenarioKind.CASE1,
    ScenarioKind.CASE2,
    ScenarioKind.CASE3,
    ScenarioKind.CASE4,
    ScenarioKind.CASE5,
)
