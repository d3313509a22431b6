from __future__ import annotations

from .base import LookupEnum


class OuterGradMode(LookupEnum):
    ANALYTIC = "analytic"
    HESSIAN_VECTOR = "hessian-vector"
    FINITE_DIFFERENCE = "finite-difference"


class InitKind(LookupEnum):
    ZERO_PLUS_JITTER = "zero-plus-jitter"
    GIVEN_VECTOR = "given-vector"


class Suite(LookupEnum):
    LINEAR_CASES = "linear-cases"
    GMM = "gmm"
    APPENDIX_B1 = "appendix-b1"
    MISMATCH = "mismatch"
