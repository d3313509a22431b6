from __future__ import annotations

import logging
from itertools import combinations
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import linalg

from ..models.scenario import ScenarioKind
from ..schemas.data import EnvironmentDataset, MultiEnvData, ScenarioStream
from ..schemas.report import CheckReport, GramStack, InvariantSet, PlausiblePoint, RankCheck
from .env_data import draw_environment
from .optimizer import MAX_CONDITION, SingularGramError

logger = logging.getLogger(__name__)

MAX_SUBSET_DIM = 16
DEFAULT_TOL = 0.05
DEFAULT_NOISE_Z = 1.0


class IdentificationError(ValueError):
    """Raised when an identification check is requested with invalid inputs."""


def _moments(data: EnvironmentDataset) -> tuple[np.ndarray, np.ndarray]:
    return data.X.T @ data.X / data.n, data.X.T @ data.y / data.n


def gram_stack(multi: MultiEnvData) -> GramStack:
    """Per-environment Gram matrices, cross-moments and Monte-Carlo errors of the Gram entries."""
    grams, crosses, errors, sizes = [], [], [], []
    for env in multi.environments:
        gram, cross = _moments(env)
        grams.append((gram + gram.T) / 2)
        crosses.append(cross)
        if env.n > 1:
            products = np.einsum("ni,nj->nij", env.X, env.X)
            errors.append(products.std(axis=0, ddof=1) / np.sqrt(env.n))
        else:
            errors.append(np.zeros_like(gram))
        sizes.append(env.n)
    return GramStack(per_env_gram=grams, per_env_cross=crosses, per_env_gram_se=errors, sample_sizes=sizes)


def _check_dimension(p: int) -> None:
    if p > MAX_SUBSET_DIM:
        raise IdentificationError(f"subset scans are limited to p <= {MAX_SUBSET_DIM}, got p={p}")


def _subsets(p: int, required: Sequence[int] = ()) -> Iterator[tuple[int, ...]]:
    """All supersets of ``required`` by increasing size, lexicographic within a size."""
    required = tuple(sorted(set(required)))
    free = [index for index in range(p) if index not in required]
    for size in range(len(free) + 1):
        for extra in combinations(free, size):
            yield tuple(sorted(required + extra))


def _restricted_solve(gram: np.ndarray, cross: np.ndarray, subset: Sequence[int]) -> np.ndarray:
    """Coefficients supported on ``subset`` that zero the risk gradient there."""
    coefficients = np.zeros(gram.shape[0])
    if not subset:
        return coefficients
    rows = list(subset)
    block = gram[np.ix_(rows, rows)]
    condition = np.linalg.cond(block)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularGramError(f"restricted Gram on {rows} has condition number {condition:.3g}")
    coefficients[rows] = linalg.solve(block, cross[rows], assume_a="pos")
    return coefficients


def plausible_set_enumerate(data: EnvironmentDataset) -> list[PlausiblePoint]:
    """One stationary point of the CoCo penalty per support subset (at most 2^p)."""
    _check_dimension(data.p)
    gram, cross = _moments(data)
    points = []
    for subset in _subsets(data.p):
        try:
            coefficients = _restricted_solve(gram, cross, subset)
        except SingularGramError as exc:
            logger.warning("Skipping subset %s of %s: %s", list(subset), data.env_id, exc)
            points.append(PlausiblePoint(subset=list(subset), warning=str(exc)))
            continue
        points.append(PlausiblePoint(subset=list(subset), coefficients=coefficients))
    return points


def _nearest(target: np.ndarray, candidates: list[np.ndarray], tol: float) -> Optional[np.ndarray]:
    if not candidates:
        return None
    distances = [float(np.max(np.abs(candidate - target))) for candidate in candidates]
    best = int(np.argmin(distances))
    return candidates[best] if distances[best] < tol else None


def intersect_plausible_sets(multi: MultiEnvData, tol: float = DEFAULT_TOL) -> list[np.ndarray]:
    """Points shared by every environment's plausible set, up to ``tol`` in the max-norm.

    Returns the centroids of the matched points, in the first environment's scan order.
    """
    per_env = [
        [point.coefficients for point in plausible_set_enumerate(env) if point.coefficients is not None]
        for env in multi.environments
    ]
    shared: list[np.ndarray] = []
    for reference in per_env[0]:
        matched = [reference]
        for candidates in per_env[1:]:
            partner = _nearest(reference, candidates, tol)
            if partner is None:
                break
            matched.append(partner)
        else:
            centroid = np.mean(matched, axis=0)
            if _nearest(centroid, shared, tol) is None:
                shared.append(centroid)
    return shared


def _check_indices(multi: MultiEnvData, indices: Sequence[int]) -> list[int]:
    bad = [index for index in indices if not 0 <= index < multi.p]
    if bad:
        raise IdentificationError(f"covariate indices {bad} outside [0, {multi.p})")
    return sorted(set(int(index) for index in indices))


def invariant_sets(multi: MultiEnvData, C: Sequence[int], tol: float = DEFAULT_TOL) -> list[InvariantSet]:
    """Supersets H of C whose restricted regressions agree across environments within ``tol``."""
    _check_dimension(multi.p)
    required = _check_indices(multi, C)
    moments = [_moments(env) for env in multi.environments]
    found = []
    for subset in _subsets(multi.p, required):
        estimates = np.array([_restricted_solve(gram, cross, subset) for gram, cross in moments])
        spread = float(np.max(estimates.max(axis=0) - estimates.min(axis=0)))
        if spread < tol:
            found.append(InvariantSet(subset=list(subset), vector=estimates.mean(axis=0), spread=spread))
    return found


def _distinct(sets: Sequence[InvariantSet], tol: float) -> bool:
    vectors = [item.vector for item in sets]
    return any(
        float(np.max(np.abs(first - second))) >= tol
        for index, first in enumerate(vectors)
        for second in vectors[index + 1 :]
    )


def check_effectiveness_A2(multi: MultiEnvData, C: Sequence[int], tol: float = DEFAULT_TOL) -> bool:
    """True when no two distinct invariant vectors exist."""
    return not _distinct(invariant_sets(multi, C, tol), tol)


def _numerical_rank(matrix: np.ndarray, errors: np.ndarray, noise_z: float) -> tuple[int, np.ndarray, float]:
    norms = np.linalg.norm(matrix, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    singular_values = linalg.svdvals(matrix / norms)
    top = float(singular_values[0]) if singular_values.size else 0.0
    # Per-column relative noise; the median ignores a single poorly measured column.
    relative_noise = np.linalg.norm(errors, axis=0) / norms
    threshold = max(
        top * max(matrix.shape) * 2.0**-40,
        1e-6 * top,
        noise_z * float(np.median(relative_noise)),
    )
    return int(np.sum(singular_values > threshold)), singular_values, threshold


def _certified_rank(
    matrix: np.ndarray, errors: np.ndarray, block: int, noise_z: float
) -> tuple[int, int, np.ndarray, float]:
    """Best rank over leading environment blocks of the stack.

    The population rank of a stack can only grow with its rows, so a rank certified on the
    first k environments holds for all of them.
    """
    best = None
    for envs in range(1, matrix.shape[0] // block + 1):
        rows = envs * block
        rank, singular_values, threshold = _numerical_rank(matrix[:rows], errors[:rows], noise_z)
        if best is None or rank >= best[0]:
            best = (rank, envs, singular_values, threshold)
    return best


def ico_rank_check(
    multi: MultiEnvData,
    C: Sequence[int],
    *,
    noise_z: float = DEFAULT_NOISE_Z,
    tol: float = DEFAULT_TOL,
    with_invariant_sets: bool = True,
) -> CheckReport:
    """Full-column-rank test of the Gram rows indexed by C, stacked over environments."""
    if not C:
        raise IdentificationError("the rank check needs a nonempty set of known non-descendants")
    rows = _check_indices(multi, C)
    stack = gram_stack(multi)
    matrix = stack.stacked_rows(rows)
    rank, certifying, singular_values, threshold = _certified_rank(
        matrix, stack.stacked_errors(rows), len(rows), noise_z
    )

    invariants: list[InvariantSet] = []
    if with_invariant_sets and multi.p <= MAX_SUBSET_DIM:
        try:
            invariants = invariant_sets(multi, rows, tol)
        except SingularGramError as exc:
            logger.warning("Invariant-set scan skipped: %s", exc)

    logger.info(
        "Rank check over %d environments: rank %d of %d (threshold %.3g)", len(multi), rank, multi.p, threshold
    )
    return CheckReport(
        invariant_sets=invariants,
        distinct_invariant_vectors=_distinct(invariants, tol),
        rank_check=RankCheck(
            matrix_rows=int(matrix.shape[0]),
            columns=multi.p,
            rank=rank,
            passes=rank == multi.p,
            singular_values=[float(value) for value in singular_values],
            threshold=threshold,
            certifying_environments=certifying,
        ),
        environments_used=len(multi),
        nondescendants=rows,
        covariate_names=multi.covariate_names,
    )


def ico_workflow(
    stream: ScenarioStream,
    C: Sequence[int],
    max_envs: int,
    *,
    noise_z: float = DEFAULT_NOISE_Z,
    tol: float = DEFAULT_TOL,
) -> tuple[MultiEnvData, CheckReport]:
    """Add environments from ``stream`` until the rank check passes or ``max_envs`` is reached."""
    if max_envs < 1:
        raise IdentificationError("max_envs must be at least 1")
    if not C:
        raise IdentificationError("the rank check needs a nonempty set of known non-descendants")
    environments: list[EnvironmentDataset] = []
    multi: Optional[MultiEnvData] = None
    for index in range(max_envs):
        environments.append(draw_environment(stream, index))
        multi = MultiEnvData(environments=list(environments), known_nondescendants=list(C))
        if ico_rank_check(multi, C, noise_z=noise_z, with_invariant_sets=False).rank_check.passes:
            break
    final = ico_rank_check(multi, C, noise_z=noise_z, tol=tol)
    logger.info(
        "ICO on %s: %s after %d environments",
        ScenarioKind(stream.kind).value,
        "passed" if final.rank_check.passes else "failed",
        final.environments_used,
    )
    return multi, final
