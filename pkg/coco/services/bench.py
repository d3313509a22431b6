from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import anyio
import numpy as np
from anyio import to_thread
from tqdm import tqdm

from ..config import get_settings
from ..models.objective import Method
from ..models.optim import Suite
from ..models.predictor import Activation, LossKind, OutputHead
from ..models.scenario import LINEAR_CASES, ScenarioKind
from ..schemas.data import EnvironmentDataset, EnvParams, SemScenario
from ..schemas.objective import ObjectiveSpec
from ..schemas.optim import AnnealConfig, FitResult, OptimConfig
from ..schemas.predictor import ModelParams, ModelShape, RiskSpec
from ..schemas.report import BenchCell, BenchReport, BenchRow
from .env_data import (
    covariate_names,
    generate,
    gmm_test_environments,
    gmm_training_scenario,
    gmm_validation_environment,
    restrict_columns,
)
from .optimizer import DivergenceError, fit
from .predictors import accuracy, predict

logger = logging.getLogger(__name__)

LINEAR_METHODS = ("erm", "irmv1", "vrex", "coco", "naive-coco")
GMM_METHODS = ("erm", "irmv1", "vrex", "coco", "oracle")
MISMATCH_METHODS = ("linear-erm", "linear-coco", "mlp-erm", "mlp-coco")

DEFAULT_GAMMAS = (0.5, 2.0)
B1_SIGMAS = (0.2, 0.5, 1.0)
GMM_HIDDEN = [10, 10]
GMM_MAX_ITERS = 10_000
MISMATCH_HIDDEN = [16, 16]
MISMATCH_MAX_ITERS = 5_000
# Per-environment sample sizes for the network suites; the linear suites use Settings.default_n.
SUITE_DEFAULT_N = {Suite.GMM: 1_000, Suite.MISMATCH: 2_000}

_METRICS = {
    Suite.LINEAR_CASES: ("mae",),
    Suite.APPENDIX_B1: ("mae",),
    Suite.GMM: ("train_accuracy", "test_accuracy"),
    Suite.MISMATCH: ("prediction_error",),
}


class BenchConfigError(ValueError):
    """Raised for unknown cases or methods in a benchmark request."""


@dataclass(frozen=True)
class BenchTask:
    """One (case, method, replication) cell. Cells of one replication share ``data_seed``."""

    suite: Suite
    case: ScenarioKind
    method: str
    replication: int
    data_seed: int
    fit_seed: int
    n: int


def cell_seed(master: int, *key: int) -> int:
    """Seed of one cell, independent of the order in which cells run."""
    state = np.random.SeedSequence(master, spawn_key=key).generate_state(1, dtype=np.uint64)
    return int(state[0])


def suite_methods(suite: Suite) -> tuple[str, ...]:
    if suite == Suite.GMM:
        return GMM_METHODS
    if suite == Suite.MISMATCH:
        return MISMATCH_METHODS
    return LINEAR_METHODS


def suite_cases(suite: Suite) -> tuple[ScenarioKind, ...]:
    if suite == Suite.LINEAR_CASES:
        return LINEAR_CASES
    if suite == Suite.APPENDIX_B1:
        return (ScenarioKind.APPENDIX_B1,)
    if suite == Suite.GMM:
        return (ScenarioKind.GMM,)
    return (ScenarioKind.CASE5,)


def plan_cells(
    suite: Suite,
    *,
    reps: int,
    seed: int,
    n: int,
    cases: Optional[Sequence[ScenarioKind]] = None,
    methods: Optional[Sequence[str]] = None,
) -> list[BenchTask]:
    available_cases = suite_cases(suite)
    available_methods = suite_methods(suite)
    chosen_cases = [ScenarioKind(case) for case in cases] if cases else list(available_cases)
    chosen_methods = [method.strip().lower() for method in methods] if methods else list(available_methods)
    unknown_cases = [case.value for case in chosen_cases if case not in available_cases]
    if unknown_cases:
        raise BenchConfigError(f"suite {suite.value} has no cases {unknown_cases}")
    unknown_methods = [method for method in chosen_methods if method not in available_methods]
    if unknown_methods:
        raise BenchConfigError(
            f"suite {suite.value} supports {', '.join(available_methods)}; got {', '.join(unknown_methods)}"
        )

    kinds = list(ScenarioKind)
    tasks = []
    for case in chosen_cases:
        case_key = kinds.index(case)
        for replication in range(reps):
            data_seed = cell_seed(seed, case_key, replication)
            for method in chosen_methods:
                tasks.append(
                    BenchTask(
                        suite=suite,
                        case=case,
                        method=method,
                        replication=replication,
                        data_seed=data_seed,
                        fit_seed=cell_seed(seed, case_key, replication, available_methods.index(method) + 1),
                        n=n,
                    )
                )
    return tasks


def _select(
    grid: Sequence[Optional[float]],
    run: Callable[[Optional[float]], FitResult],
    score: Callable[[FitResult], float],
    *,
    maximize: bool = False,
) -> tuple[Optional[float], FitResult, float]:
    """Best (weight, fit, score) over a weight grid, skipping diverged fits."""
    best: Optional[tuple[Optional[float], FitResult, float]] = None
    diagnostics = []
    for weight in grid:
        result = run(weight)
        if result.diverged:
            diagnostics.append(f"weight={weight}: {result.diagnostic}")
            continue
        value = score(result)
        if best is None or (value > best[2] if maximize else value < best[2]):
            best = (weight, result, value)
    if best is None:
        raise DivergenceError("; ".join(diagnostics))
    return best


def mean_absolute_error(estimate: np.ndarray, beta: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(estimate) - beta)))


def _linear_objective(method: str, mask: list[int], weight: Optional[float]) -> ObjectiveSpec:
    if method == "erm":
        return ObjectiveSpec(method=Method.ERM)
    if method == "irmv1":
        return ObjectiveSpec(method=Method.IRMV1, lambda_=weight)
    if method == "vrex":
        return ObjectiveSpec(method=Method.VREX, lambda_vrex=weight)
    if method == "coco":
        return ObjectiveSpec(method=Method.COCO_MODIFIED, nondescendant_mask=mask)
    if method == "naive-coco":
        return ObjectiveSpec(method=Method.NAIVE_COCO, nondescendant_mask=mask)
    raise BenchConfigError(f"unknown linear method {method!r}")


def _linear_env_params(case: ScenarioKind) -> list[EnvParams]:
    if case == ScenarioKind.APPENDIX_B1:
        return [EnvParams(sigma=sigma) for sigma in B1_SIGMAS]
    return [EnvParams(gamma=gamma) for gamma in DEFAULT_GAMMAS]


def _run_linear_cell(task: BenchTask) -> BenchCell:
    scenario = SemScenario(
        kind=task.case, env_params=_linear_env_params(task.case), n_per_env=task.n, seed=task.data_seed
    )
    multi, truth = generate(scenario)
    grid: list[Optional[float]] = (
        list(get_settings().irm_lambda_grid) if task.method in ("irmv1", "vrex") else [None]
    )
    shape = ModelShape.linear(multi.p)

    def run(weight: Optional[float]) -> FitResult:
        obj = _linear_objective(task.method, multi.known_nondescendants, weight)
        return fit(multi, RiskSpec(), obj, OptimConfig(seed=task.fit_seed), shape)

    weight, result, mae = _select(grid, run, lambda result: mean_absolute_error(result.coefficients, truth.beta))
    logger.debug("%s %s rep %d: weight=%s mae=%.4f", task.case.value, task.method, task.replication, weight, mae)
    return BenchCell(
        case=task.case.value,
        method=task.method,
        replication=task.replication,
        seed=task.data_seed,
        mae=mae,
        hyperparameter=weight,
        coefficients=[float(value) for value in result.coefficients],
    )


def _gmm_objective(method: str, weight: Optional[float]) -> ObjectiveSpec:
    if method in ("erm", "oracle"):
        return ObjectiveSpec(method=Method.ERM)
    if method == "irmv1":
        return ObjectiveSpec(method=Method.IRMV1, lambda_=weight)
    if method == "vrex":
        return ObjectiveSpec(method=Method.VREX, lambda_vrex=weight)
    if method == "coco":
        # Penalty weight w on the CoCo term is the same objective as risk weight 1/w.
        return ObjectiveSpec(method=Method.COCO_ERM, lambda_r=1.0 / weight)
    raise BenchConfigError(f"unknown gmm method {method!r}")


def _mean_accuracy(params: ModelParams, environments: Sequence[EnvironmentDataset]) -> float:
    return float(np.mean([accuracy(params, env) for env in environments]))


def _run_gmm_cell(task: BenchTask) -> BenchCell:
    settings = get_settings()
    scenario = gmm_training_scenario(task.n, task.data_seed)
    multi, _ = generate(scenario)
    tests = gmm_test_environments(scenario)
    validation = [gmm_validation_environment(scenario)]
    if task.method == "oracle":
        x_names = covariate_names(ScenarioKind.GMM, scenario.n_classes)[: scenario.n_classes]
        multi = restrict_columns(multi, x_names)
        tests = [env.select_columns(x_names) for env in tests]
        validation = [env.select_columns(x_names) for env in validation]

    shape = ModelShape.mlp(multi.p, GMM_HIDDEN, scenario.n_classes, head=OutputHead.SOFTMAX)
    risk = RiskSpec(loss=LossKind.CROSS_ENTROPY)
    cfg = OptimConfig(
        seed=task.fit_seed,
        max_iters=GMM_MAX_ITERS,
        tol=1e-6,
        anneal=AnnealConfig(enabled=task.method == "coco"),
    )
    grid: list[Optional[float]] = (
        [float(value) for value in np.logspace(0.0, 2.0, settings.penalty_grid_size)]
        if task.method in ("irmv1", "vrex", "coco")
        else [None]
    )
    weight, result, _ = _select(
        grid,
        lambda weight: fit(multi, risk, _gmm_objective(task.method, weight), cfg, shape),
        lambda result: _mean_accuracy(result.params, validation),
        maximize=True,
    )
    return BenchCell(
        case=task.case.value,
        method=task.method,
        replication=task.replication,
        seed=task.data_seed,
        train_accuracy=_mean_accuracy(result.params, multi.environments),
        test_accuracy=_mean_accuracy(result.params, tests),
        hyperparameter=weight,
    )


def mismatch_grid(points: int = 21) -> np.ndarray:
    """(x1, z) pairs whose z values lie well outside the training range."""
    x1 = np.linspace(-2.0, 2.0, points)
    z = np.concatenate([np.linspace(-20.0, -10.0, points), np.linspace(10.0, 20.0, points)])
    grid_x1, grid_z = np.meshgrid(x1, z, indexing="ij")
    return np.column_stack([grid_x1.ravel(), grid_z.ravel()])


def _run_mismatch_cell(task: BenchTask) -> BenchCell:
    scenario = SemScenario(
        kind=ScenarioKind.CASE5,
        env_params=_linear_env_params(ScenarioKind.CASE5),
        n_per_env=task.n,
        seed=task.data_seed,
    )
    multi, _ = generate(scenario)
    model, method = task.method.split("-", 1)
    if model == "linear":
        shape = ModelShape.linear(multi.p)
        cfg = OptimConfig(seed=task.fit_seed)
        obj = _linear_objective(method, multi.known_nondescendants, None)
    else:
        shape = ModelShape.mlp(multi.p, MISMATCH_HIDDEN, 1, activation=Activation.TANH)
        cfg = OptimConfig(
            seed=task.fit_seed,
            max_iters=MISMATCH_MAX_ITERS,
            tol=1e-6,
            anneal=AnnealConfig(enabled=method == "coco"),
        )
        obj = (
            ObjectiveSpec(method=Method.ERM)
            if method == "erm"
            else ObjectiveSpec(method=Method.COCO_ERM, lambda_r=1.0)
        )
    result = fit(multi, RiskSpec(), obj, cfg, shape)
    if result.diverged:
        raise DivergenceError(result.diagnostic or "fit diverged")
    grid = mismatch_grid()
    error = float(np.mean(np.abs(predict(result.params, grid)[:, 0] - 2.0 * grid[:, 0])))
    return BenchCell(
        case=task.case.value,
        method=task.method,
        replication=task.replication,
        seed=task.data_seed,
        prediction_error=error,
    )


_RUNNERS: dict[Suite, Callable[[BenchTask], BenchCell]] = {
    Suite.LINEAR_CASES: _run_linear_cell,
    Suite.APPENDIX_B1: _run_linear_cell,
    Suite.GMM: _run_gmm_cell,
    Suite.MISMATCH: _run_mismatch_cell,
}


def run_cell(task: BenchTask) -> BenchCell:
    """Run one cell; failures are recorded on the cell instead of propagating."""
    try:
        return _RUNNERS[task.suite](task)
    except Exception as exc:
        logger.exception("Cell %s/%s replication %d failed", task.case.value, task.method, task.replication)
        return BenchCell(
            case=task.case.value,
            method=task.method,
            replication=task.replication,
            seed=task.data_seed,
            error=f"{type(exc).__name__}: {exc}",
        )


async def _run_cells(tasks: Sequence[BenchTask], workers: int, progress: bool) -> list[BenchCell]:
    limiter = anyio.CapacityLimiter(workers)
    results: list[Optional[BenchCell]] = [None] * len(tasks)
    bar = tqdm(total=len(tasks), desc="bench", unit="cell", disable=not progress)

    async def run_one(index: int, task: BenchTask) -> None:
        results[index] = await to_thread.run_sync(run_cell, task, limiter=limiter)
        bar.update(1)

    async with anyio.create_task_group() as group:
        for index, task in enumerate(tasks):
            group.start_soon(run_one, index, task)
    bar.close()
    return [cell for cell in results if cell is not None]


def summarize(suite: Suite, cells: Sequence[BenchCell]) -> list[BenchRow]:
    """Mean and population standard deviation per (case, method, metric), in first-seen order."""
    groups: dict[tuple[str, str], list[BenchCell]] = {}
    for cell in cells:
        groups.setdefault((cell.case, cell.method), []).append(cell)
    rows = []
    for (case, method), members in groups.items():
        failures = sum(1 for cell in members if cell.error is not None)
        for metric in _METRICS[suite]:
            values = [getattr(cell, metric) for cell in members if getattr(cell, metric) is not None]
            rows.append(
                BenchRow(
                    case=case,
                    method=method,
                    metric=metric,
                    mean=float(np.mean(values)) if values else None,
                    std=float(np.std(values)) if values else None,
                    replications=len(values),
                    failures=failures,
                )
            )
    return rows


def run_suite(
    suite: Suite,
    *,
    reps: int,
    seed: int,
    n: Optional[int] = None,
    cases: Optional[Sequence[ScenarioKind]] = None,
    methods: Optional[Sequence[str]] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> BenchReport:
    """Run every (case, method, replication) cell of a suite and tabulate the results."""
    suite = Suite(suite)
    if reps < 1:
        raise BenchConfigError("reps must be at least 1")
    settings = get_settings()
    n = n or SUITE_DEFAULT_N.get(suite, settings.default_n)
    workers = workers or settings.workers
    tasks = plan_cells(suite, reps=reps, seed=seed, n=n, cases=cases, methods=methods)
    logger.info("Running %s: %d cells on %d workers (n=%d, seed=%d)", suite.value, len(tasks), workers, n, seed)
    cells = anyio.run(_run_cells, tasks, workers, progress)
    failed = sum(1 for cell in cells if cell.error is not None)
    if failed:
        logger.warning("%d of %d cells failed", failed, len(cells))
    return BenchReport(
        suite=suite.value,
        rows=summarize(suite, cells),
        cells=cells,
        metadata={
            "seed": seed,
            "n_per_env": n,
            "replications": reps,
            "workers": workers,
            "cases": sorted({task.case.value for task in tasks}),
            "methods": list(dict.fromkeys(task.method for task in tasks)),
            "environments": _environment_params(suite),
        },
    )


def _environment_params(suite: Suite) -> dict[str, list[float]]:
    if suite == Suite.GMM:
        return {"p_flip": [params.p_flip for params in gmm_training_scenario(1, 0).env_params]}
    if suite == Suite.APPENDIX_B1:
        return {"sigma": list(B1_SIGMAS)}
    return {"gamma": list(DEFAULT_GAMMAS)}
