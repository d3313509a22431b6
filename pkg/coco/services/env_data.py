from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..models.scenario import ScenarioKind
from ..schemas.data import (
    EnvironmentDataset,
    EnvParams,
    MultiEnvData,
    ScenarioStream,
    SemScenario,
    TrueCausalModel,
)

logger = logging.getLogger(__name__)

# Child-stream tags mixed into every SeedSequence spawn key.
STREAM_TRAIN = 0
STREAM_TEST = 1
STREAM_VALIDATION = 2
STREAM_PARAM = 3
STREAM_DO = 4

_PART_SAMPLES = 0
_PART_CONSTANTS = 1

Columns = dict[str, np.ndarray]
DoMap = dict[str, float]


class ScenarioError(ValueError):
    """Raised when a scenario cannot be sampled as requested."""


class DatasetFormatError(ValueError):
    """Raised when an environment file cannot be loaded."""


def child_rng(seed: int, stream: int, index: int, part: int = _PART_SAMPLES) -> np.random.Generator:
    """Counter-based generator for one (stream, index) pair; independent of generation order."""
    sequence = np.random.SeedSequence(seed, spawn_key=(stream, index, part))
    return np.random.Generator(np.random.Philox(sequence))


def covariate_names(kind: ScenarioKind, n_classes: int = 5) -> list[str]:
    if kind == ScenarioKind.CASE1 or kind == ScenarioKind.CASE4:
        return ["x1", "x2", "z"]
    if kind in (ScenarioKind.CASE2, ScenarioKind.CASE3):
        return ["x1", "x2", "x3", "z"]
    if kind == ScenarioKind.CASE5:
        return ["x1", "z"]
    if kind == ScenarioKind.APPENDIX_B1:
        return ["x1", "x2", "z1", "z2"]
    if kind == ScenarioKind.NON_IDENTIFIABLE:
        return ["x1", "x2", "x3"]
    if kind == ScenarioKind.GMM:
        return [f"x{k + 1}" for k in range(n_classes)] + [f"z{i + 1}" for i in range(_gmm_z_dim(n_classes))]
    raise ScenarioError(f"Unknown scenario kind: {kind}")


_CAUSAL_COEFFICIENTS: dict[ScenarioKind, tuple[float, ...]] = {
    ScenarioKind.CASE1: (3.0, 2.0, 0.0),
    ScenarioKind.CASE2: (2.0, 0.0, 1.5, 0.0),
    ScenarioKind.CASE3: (2.0, 1.0, 1.5, 0.0),
    # x3 is a latent mediator: y = x2 + 2(x1 + x2 + noise) + noise.
    ScenarioKind.CASE4: (2.0, 3.0, 0.0),
    ScenarioKind.CASE5: (2.0, 0.0),
    ScenarioKind.APPENDIX_B1: (1.0, 1.0, 0.0, 0.0),
    ScenarioKind.NON_IDENTIFIABLE: (2.0, 1.5, 0.0),
}


def true_causal_model(kind: ScenarioKind, n_classes: int = 5) -> TrueCausalModel:
    names = covariate_names(kind, n_classes)
    if kind == ScenarioKind.GMM:
        return TrueCausalModel(beta=None, support=list(range(n_classes)), covariate_names=names)
    beta = np.array(_CAUSAL_COEFFICIENTS[kind])
    return TrueCausalModel(beta=beta, support=[int(j) for j in np.flatnonzero(beta)], covariate_names=names)


def default_nondescendants(kind: ScenarioKind, n_classes: int = 5) -> list[int]:
    """Covariates known to precede the outcome in each built-in graph."""
    if kind in (ScenarioKind.APPENDIX_B1, ScenarioKind.NON_IDENTIFIABLE):
        return [0, 1]
    if kind == ScenarioKind.GMM:
        return list(range(n_classes))
    return [0]


def _gmm_z_dim(n_classes: int) -> int:
    return math.ceil(n_classes / 2)


def _normal(rng: np.random.Generator, mean: float, variance: float, n: int) -> np.ndarray:
    return rng.normal(mean, math.sqrt(variance), n)


def _node(name: str, values: np.ndarray, do: DoMap) -> np.ndarray:
    """Structural assignment, replaced by a constant under do(name = value)."""
    if name in do:
        return np.full_like(values, do[name])
    return values


def _require_positive(kind: ScenarioKind, gamma: float) -> None:
    if gamma <= 0:
        raise ScenarioError(f"{kind.value} needs gamma > 0, got {gamma}")


def _case1(gamma: float, n: int, rng: np.random.Generator, constants: dict, do: DoMap) -> tuple[Columns, np.ndarray]:
    _require_positive(ScenarioKind.CASE1, gamma)
    x2 = _node("x2", _normal(rng, constants["m2"], gamma**2, n), do)
    x1 = _node("x1", _normal(rng, constants["m1"], gamma**2, n), do)
    y = 3 * x1 + 2 * x2 + _normal(rng, 0.0, 1.0, n)
    z = _node("z", gamma * y + _normal(rng, 0.0, gamma, n), do)
    return {"x1": x1, "x2": x2, "z": z}, y


def _case2_or_3(kind: ScenarioKind) -> Callable[..., tuple[Columns, np.ndarray]]:
    def sample(gamma: float, n: int, rng: np.random.Generator, constants: dict, do: DoMap):
        x2 = _node("x2", _normal(rng, 1.0, 0.25, n), do)
        x1 = _node("x1", x2 + rng.uniform(-1.0, 1.0, n), do)
        x3 = _node("x3", np.sin(x1) + _normal(rng, 0.0, 0.25, n), do)
        if kind == ScenarioKind.CASE2:
            y = 2 * x1 + 1.5 * x3 + _normal(rng, 0.0, 1.0, n)
        else:
            y = 2 * x1 + x2 + 1.5 * x3 + _normal(rng, 0.0, gamma**2, n)
        z = _node("z", gamma * y + _normal(rng, 0.0, 1.0, n), do)
        return {"x1": x1, "x2": x2, "x3": x3, "z": z}, y

    return sample


def _case4(gamma: float, n: int, rng: np.random.Generator, constants: dict, do: DoMap) -> tuple[Columns, np.ndarray]:
    x2 = _node("x2", _normal(rng, 1.0, 0.25, n), do)
    x1 = _node("x1", x2 + rng.uniform(0.0, constants["m"], n), do)
    x3 = _node("x3", x1 + x2 + _normal(rng, 0.0, 0.25, n), do)
    y = x2 + 2 * x3 + _normal(rng, 0.0, 1.0, n)
    z = _node("z", gamma * y + _normal(rng, 0.0, 1.0, n), do)
    return {"x1": x1, "x2": x2, "x3": x3, "z": z}, y


def _case5(gamma: float, n: int, rng: np.random.Generator, constants: dict, do: DoMap) -> tuple[Columns, np.ndarray]:
    x1 = _node("x1", _normal(rng, 1.0, 0.5, n), do)
    y = 2 * x1 + _normal(rng, 0.0, 1.0, n)
    z = _node("z", 0.5 * gamma * y + 0.5 * x1 + _normal(rng, 0.0, 1.0, n), do)
    return {"x1": x1, "z": z}, y


def _appendix_b1(sigma: float, n: int, rng: np.random.Generator) -> tuple[Columns, np.ndarray]:
    variance = sigma**2
    x1 = _normal(rng, 0.0, variance, n)
    x2 = _normal(rng, 0.0, variance, n)
    eps1 = _normal(rng, 0.0, variance, n)
    eps2 = _normal(rng, 0.0, variance, n)
    y = x1 + x2 + eps1 + eps2
    z1 = x1 + eps1 + _normal(rng, 0.0, 1.0, n)
    z2 = x2 + eps2 + _normal(rng, 0.0, 1.0, n)
    return {"x1": x1, "x2": x2, "z1": z1, "z2": z2}, y


def _nonidentifiable(gamma: float, n: int, rng: np.random.Generator) -> tuple[Columns, np.ndarray]:
    _require_positive(ScenarioKind.NON_IDENTIFIABLE, gamma)
    x2 = _normal(rng, 0.0, (gamma / 2) ** 2, n)
    x1 = x2 + rng.uniform(-gamma, gamma, n) + 1.0
    y = 2 * x1 + 1.5 * x2 + _normal(rng, 0.0, 1.0, n)
    x3 = 0.5 * y + _normal(rng, 0.0, 1.0, n)
    return {"x1": x1, "x2": x2, "x3": x3}, y


def _gmm_constants(rng: np.random.Generator, n_classes: int, center_noise: float) -> dict:
    centers = math.sqrt(1.5 * n_classes) * np.eye(n_classes)
    if center_noise > 0:
        centers = centers + rng.normal(0.0, center_noise, centers.shape)
    anchors = rng.uniform(0.0, 1.0, (n_classes, _gmm_z_dim(n_classes)))
    return {"centers": centers, "anchors": anchors}


def _gmm(
    p_flip: float, n: int, rng: np.random.Generator, constants: dict, n_classes: int
) -> tuple[np.ndarray, np.ndarray]:
    centers = constants["centers"]
    anchors = constants["anchors"]
    component = rng.integers(0, n_classes, n)
    x = centers[component] + rng.standard_normal((n, n_classes))
    # Label drawn from the posterior over components.
    log_density = -0.5 * ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    log_density -= log_density.max(axis=1, keepdims=True)
    posterior = np.exp(log_density)
    posterior /= posterior.sum(axis=1, keepdims=True)
    draws = rng.uniform(0.0, 1.0, (n, 1))
    labels = np.minimum((draws > np.cumsum(posterior, axis=1)).sum(axis=1), n_classes - 1)
    flip = rng.uniform(0.0, 1.0, n) < p_flip
    other = rng.integers(0, n_classes, n)
    z = anchors[np.where(flip, other, labels)]
    return np.hstack([x, z]), labels.astype(float)


def _linear_constants(kind: ScenarioKind, rng: np.random.Generator) -> dict[str, float]:
    if kind == ScenarioKind.CASE1:
        return {"m1": float(rng.uniform(0.0, 1.0)), "m2": float(rng.uniform(0.0, 1.0))}
    if kind == ScenarioKind.CASE4:
        return {"m": float(rng.uniform(1.0, 2.0))}
    return {}


_LINEAR_SAMPLERS: dict[ScenarioKind, Callable[..., tuple[Columns, np.ndarray]]] = {
    ScenarioKind.CASE1: _case1,
    ScenarioKind.CASE2: _case2_or_3(ScenarioKind.CASE2),
    ScenarioKind.CASE3: _case2_or_3(ScenarioKind.CASE3),
    ScenarioKind.CASE4: _case4,
    ScenarioKind.CASE5: _case5,
}


def _sample_environment(
    kind: ScenarioKind,
    params: EnvParams,
    n: int,
    *,
    seed: int,
    stream: int,
    index: int,
    env_id: str,
    n_classes: int = 5,
    center_noise: float = 0.0,
    do: Optional[DoMap] = None,
    sample_stream: Optional[int] = None,
) -> EnvironmentDataset:
    constants_rng = child_rng(seed, stream, index, _PART_CONSTANTS)
    rng = child_rng(seed, stream if sample_stream is None else sample_stream, index)
    names = covariate_names(kind, n_classes)
    metadata: dict = {"kind": kind.value, "index": index, "seed": seed, "stream": stream}
    do = do or {}

    if kind == ScenarioKind.GMM:
        if n_classes < 2:
            raise ScenarioError(f"GMM needs at least 2 classes, got {n_classes}")
        constants = _gmm_constants(constants_rng, n_classes, center_noise)
        X, y = _gmm(float(params.p_flip), n, rng, constants, n_classes)
        metadata.update(p_flip=params.p_flip, n_classes=n_classes, anchors=constants["anchors"].tolist())
        return EnvironmentDataset(env_id=env_id, X=X, y=y, covariate_names=names, metadata=metadata)

    if kind == ScenarioKind.APPENDIX_B1:
        columns, y = _appendix_b1(float(params.sigma), n, rng)
        metadata["sigma"] = params.sigma
    elif kind == ScenarioKind.NON_IDENTIFIABLE:
        columns, y = _nonidentifiable(float(params.gamma), n, rng)
        metadata["gamma"] = params.gamma
    elif kind in _LINEAR_SAMPLERS:
        constants = _linear_constants(kind, constants_rng)
        columns, y = _LINEAR_SAMPLERS[kind](float(params.gamma), n, rng, constants, do)
        metadata.update(gamma=params.gamma, **constants)
    else:
        raise ScenarioError(f"Unknown scenario kind: {kind}")

    if do:
        metadata["do"] = dict(do)
    X = np.column_stack([columns[name] for name in names])
    return EnvironmentDataset(env_id=env_id, X=X, y=y, covariate_names=names, metadata=metadata)


def generate(scenario: SemScenario) -> tuple[MultiEnvData, TrueCausalModel]:
    """Sample one environment per entry of ``scenario.env_params``."""
    kind = ScenarioKind(scenario.kind)
    truth = true_causal_model(kind, scenario.n_classes)
    environments = [
        _sample_environment(
            kind,
            params,
            scenario.n_per_env,
            seed=scenario.seed,
            stream=STREAM_TRAIN,
            index=index,
            env_id=f"env{index + 1}",
            n_classes=scenario.n_classes,
            center_noise=scenario.center_noise,
        )
        for index, params in enumerate(scenario.env_params)
    ]
    logger.info(
        "Generated %d %s environments (n=%d, seed=%d)",
        len(environments),
        kind.value,
        scenario.n_per_env,
        scenario.seed,
    )
    multi = MultiEnvData(
        environments=environments,
        known_nondescendants=default_nondescendants(kind, scenario.n_classes),
    )
    return multi, truth


def _resolve_target(kind: ScenarioKind, target: Union[int, str], n_classes: int) -> str:
    names = covariate_names(kind, n_classes)
    if isinstance(target, str):
        if target.strip().lower() == "y":
            raise ScenarioError("cannot intervene on the outcome")
        structural = set(names) | ({"x3"} if kind == ScenarioKind.CASE4 else set())
        if target not in structural:
            raise ScenarioError(f"{kind.value} has no covariate named {target!r}")
        return target
    if not 0 <= int(target) < len(names):
        raise ScenarioError(f"covariate index {target} outside [0, {len(names)})")
    return names[int(target)]


def apply_do_intervention(
    scenario: SemScenario,
    target: Union[int, str],
    value: float,
    *,
    env_index: int = 0,
) -> EnvironmentDataset:
    """Resample environment ``env_index`` with do(target = value).

    ``target`` is a 0-based covariate index or a variable name; Case 4's latent
    mediator ``x3`` can be targeted by name.
    """
    kind = ScenarioKind(scenario.kind)
    if not kind.supports_do:
        raise ScenarioError(f"do-interventions are only defined for Cases 1-5, not {kind.value}")
    if not 0 <= env_index < len(scenario.env_params):
        raise ScenarioError(f"env_index {env_index} outside the scenario's environments")
    name = _resolve_target(kind, target, scenario.n_classes)
    return _sample_environment(
        kind,
        scenario.env_params[env_index],
        scenario.n_per_env,
        seed=scenario.seed,
        stream=STREAM_TRAIN,
        index=env_index,
        env_id=f"env{env_index + 1}-do-{name}",
        do={name: float(value)},
        sample_stream=STREAM_DO,
    )


def draw_environment(stream: ScenarioStream, index: int) -> EnvironmentDataset:
    """Environment ``index`` of an intervention family, its parameter drawn from ``param_range``."""
    kind = ScenarioKind(stream.kind)
    low, high = stream.param_range
    value = float(child_rng(stream.seed, STREAM_PARAM, index).uniform(low, high))
    params = EnvParams(sigma=value) if kind == ScenarioKind.APPENDIX_B1 else EnvParams(gamma=value)
    return _sample_environment(
        kind,
        params,
        stream.n_per_env,
        seed=stream.seed,
        stream=STREAM_TRAIN,
        index=index,
        env_id=f"env{index + 1}",
    )


def _gmm_holdout(scenario: SemScenario, stream: int, index: int, env_id: str) -> EnvironmentDataset:
    if ScenarioKind(scenario.kind) != ScenarioKind.GMM:
        raise ScenarioError("held-out environments with fresh anchors exist only for the GMM scenario")
    return _sample_environment(
        ScenarioKind.GMM,
        EnvParams(p_flip=0.0),
        scenario.n_per_env,
        seed=scenario.seed,
        stream=stream,
        index=index,
        env_id=env_id,
        n_classes=scenario.n_classes,
        center_noise=scenario.center_noise,
    )


def gmm_test_environments(scenario: SemScenario, count: int = 10) -> list[EnvironmentDataset]:
    """Test environments with fresh anchor vectors and no label-anchor flips."""
    return [_gmm_holdout(scenario, STREAM_TEST, index, f"test{index + 1}") for index in range(count)]


def gmm_validation_environment(scenario: SemScenario) -> EnvironmentDataset:
    return _gmm_holdout(scenario, STREAM_VALIDATION, 0, "validation")


def gmm_training_scenario(n_per_env: int, seed: int, n_classes: int = 5, n_envs: int = 5) -> SemScenario:
    """Training environments with flip probabilities 0.01, 0.02, ..."""
    flips = [round(0.01 * (index + 1), 2) for index in range(n_envs)]
    return SemScenario(
        kind=ScenarioKind.GMM,
        env_params=[EnvParams(p_flip=flip) for flip in flips],
        n_per_env=n_per_env,
        seed=seed,
        n_classes=n_classes,
    )


def restrict_columns(multi: MultiEnvData, names: Sequence[str]) -> MultiEnvData:
    """View of the data on a subset of covariates, e.g. the causal block for an oracle fit."""
    try:
        return multi.select_columns(list(names))
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from exc


def _parse_cell(cell: str, path: Path, line: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DatasetFormatError(f"{path.name}:{line}: non-numeric cell {cell!r}") from None
    if not math.isfinite(value):
        raise DatasetFormatError(f"{path.name}:{line}: non-numeric cell {cell!r}")
    return value


def _read_environment(path: Path) -> EnvironmentDataset:
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise DatasetFormatError(f"{path.name}: empty file")
        header = [column.strip() for column in header]
        if header[0] != "y" or len(header) < 2:
            raise DatasetFormatError(f"{path.name}: first column must be 'y' followed by covariates")
        rows: list[list[float]] = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"{path.name}:{line}: expected {len(header)} cells, got {len(row)}")
            rows.append([_parse_cell(cell, path, line) for cell in row])
    if not rows:
        raise DatasetFormatError(f"{path.name}: no data rows")
    table = np.array(rows)
    return EnvironmentDataset(env_id=path.stem, X=table[:, 1:], y=table[:, 0], covariate_names=header[1:])


def load_csv(paths: Sequence[Union[str, Path]], nondescendants: Sequence[int] = ()) -> MultiEnvData:
    """One environment per file; every file needs the header ``y,<covariates...>``."""
    if not paths:
        raise DatasetFormatError("no data files given")
    environments = []
    for raw in paths:
        path = Path(raw)
        if not path.is_file():
            raise DatasetFormatError(f"data file not found: {path}")
        environment = _read_environment(path)
        if environments and environment.covariate_names != environments[0].covariate_names:
            raise DatasetFormatError(
                f"header mismatch: {path.name} has {environment.covariate_names}, "
                f"expected {environments[0].covariate_names}"
            )
        environments.append(environment)
    p = environments[0].p
    bad = [index for index in nondescendants if not 0 <= index < p]
    if bad:
        raise DatasetFormatError(f"non-descendant indices {bad} outside [0, {p})")
    logger.info("Loaded %d environments from CSV", len(environments))
    return MultiEnvData(environments=environments, known_nondescendants=list(nondescendants))


def _format_outcome(value: float, labels: bool) -> str:
    return str(int(value)) if labels else repr(float(value))


def write_csv(multi: MultiEnvData, directory: Union[str, Path]) -> list[Path]:
    """Write ``<env_id>.csv`` per environment; floats use repr so files reload bit-exactly."""
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for env in multi.environments:
        labels = env.metadata.get("kind") == ScenarioKind.GMM.value
        path = target / f"{env.env_id}.csv"
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["y", *env.covariate_names])
            for outcome, row in zip(env.y, env.X):
                writer.writerow([_format_outcome(outcome, labels), *(repr(float(cell)) for cell in row)])
        written.append(path)
    return written
