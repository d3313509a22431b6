from __future__ import annotations

import csv
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence

import numpy as np
import orjson
import typer
from dotenv import dotenv_values
from pydantic import BaseModel
from rich.console import Console
from rich.logging import RichHandler

from ..config import get_settings
from ..models.scenario import ScenarioKind
from ..schemas.data import EnvParams, MultiEnvData, SemScenario, TrueCausalModel
from ..schemas.run import RunConfig
from ..services.env_data import apply_do_intervention, generate, load_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

METADATA_FILE = "metadata.json"
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS

console = Console()
err_console = Console(stderr=True)


def configure_logging(level: Optional[str] = None) -> None:
    level_name = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=level_name,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


@contextmanager
def exit_codes() -> Iterator[None]:
    """Map failures to the CLI's exit codes: 1 for bad input, 2 for numerical trouble."""
    try:
        yield
    except typer.Exit:
        raise
    except ArithmeticError as exc:
        err_console.print(f"[red]Numerical failure:[/red] {exc}")
        raise typer.Exit(code=EXIT_NUMERICAL) from exc
    except (ValueError, OSError) as exc:
        err_console.print(f"[red]Configuration error:[/red] {exc}")
        raise typer.Exit(code=EXIT_CONFIG) from exc


def partition_overrides(tokens: Sequence[str]) -> tuple[dict[str, str], list[str]]:
    """Split tokens into key=value options and everything else."""
    options: dict[str, str] = {}
    free: list[str] = []
    for token in tokens:
        if "=" in token:
            key, value = token.split("=", 1)
            options[key.strip().lower()] = value.strip()
        else:
            free.append(token)
    return options, free


def load_run_config(
    config: Optional[Path],
    flags: Mapping[str, Optional[Any]],
    overrides: Optional[Sequence[str]] = None,
) -> RunConfig:
    """Config file first, then command-line flags, then positional key=value overrides."""
    flat: dict[str, Optional[str]] = {}
    if config is not None:
        if not config.is_file():
            raise FileNotFoundError(f"config file not found: {config}")
        flat.update({key.lower(): value for key, value in dotenv_values(config).items()})
    flat.update({key: str(value) for key, value in flags.items() if value is not None})
    options, free = partition_overrides(overrides or [])
    if free:
        raise ValueError(f"expected key=value overrides, got: {' '.join(free)}")
    flat.update(options)
    return RunConfig.from_flat(flat)


def run_seed(cfg: RunConfig) -> int:
    return cfg.seed if cfg.seed is not None else get_settings().default_seed


def output_dir(cfg: RunConfig) -> Path:
    return cfg.out if cfg.out is not None else get_settings().output_dir


def resolve_covariates(tokens: Sequence[str], names: Sequence[str]) -> list[int]:
    """Covariate names or 1-based positions to 0-based indices."""
    indices = []
    for token in tokens:
        if token in names:
            indices.append(list(names).index(token))
        elif token.isdigit() and 1 <= int(token) <= len(names):
            indices.append(int(token) - 1)
        else:
            raise ValueError(f"unknown covariate {token!r}; expected one of {', '.join(names)} or 1..{len(names)}")
    return sorted(set(indices))


def default_env_values(kind: ScenarioKind, envs: Optional[int]) -> list[float]:
    if kind == ScenarioKind.GMM:
        return [round(0.01 * (index + 1), 2) for index in range(envs or 5)]
    if kind == ScenarioKind.APPENDIX_B1:
        return [0.2, 0.5, 1.0] if envs is None else [float(v) for v in np.linspace(0.2, 1.0, envs)]
    return [0.5, 2.0] if envs is None else [float(v) for v in np.geomspace(0.5, 2.0, envs)]


def build_scenario(cfg: RunConfig) -> SemScenario:
    section = cfg.scenario
    if section.kind is None:
        raise ValueError("scenario.kind (or --case) is required")
    kind = ScenarioKind(section.kind)
    values = list(section.params) or default_env_values(kind, section.envs)
    if section.envs is not None and len(values) != section.envs:
        raise ValueError(f"scenario.params lists {len(values)} environments but scenario.envs={section.envs}")
    field = {ScenarioKind.GMM: "p_flip", ScenarioKind.APPENDIX_B1: "sigma"}.get(kind, "gamma")
    return SemScenario(
        kind=kind,
        env_params=[EnvParams(**{field: value}) for value in values],
        n_per_env=section.n or get_settings().default_n,
        seed=section.seed if section.seed is not None else run_seed(cfg),
        n_classes=section.classes,
        center_noise=section.center_noise,
    )


def scenario_data(cfg: RunConfig) -> tuple[MultiEnvData, TrueCausalModel, SemScenario]:
    """Generate the configured scenario, plus a do-intervened copy of the first environment if requested."""
    scenario = build_scenario(cfg)
    multi, truth = generate(scenario)
    if cfg.scenario.do_target is not None:
        target = cfg.scenario.do_target
        intervened = apply_do_intervention(
            scenario, int(target) - 1 if target.isdigit() else target, cfg.scenario.do_value
        )
        multi = multi.with_environments([*multi.environments, intervened])
    return multi, truth, scenario


def _read_metadata(paths: Sequence[Path]) -> dict[str, Any]:
    candidate = paths[0].parent / METADATA_FILE
    if not candidate.is_file():
        return {}
    return orjson.loads(candidate.read_bytes())


def load_environments(cfg: RunConfig) -> tuple[MultiEnvData, Optional[np.ndarray]]:
    """Data from CSV files when configured, otherwise from the scenario; returns the causal beta when known."""
    if cfg.data.configured:
        paths = cfg.data.resolved_paths()
        if not paths:
            raise FileNotFoundError(f"no CSV files in {cfg.data.dir}")
        metadata = _read_metadata(paths)
        multi = load_csv(paths, metadata.get("known_nondescendants", []))
        beta = (metadata.get("truth") or {}).get("beta")
        return multi, None if beta is None else np.array(beta, dtype=float)
    multi, truth, _ = scenario_data(cfg)
    return multi, truth.beta


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    path.write_bytes(orjson.dumps(payload, option=JSON_OPTIONS) + b"\n")
    return path


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return " ".join(_cell(item) for item in value)
    return str(value)


def write_models_csv(path: Path, rows: Sequence[BaseModel], columns: Sequence[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(getattr(row, column)) for column in columns])
    return path
