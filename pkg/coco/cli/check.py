from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import typer
from rich.table import Table

from ..schemas.data import ScenarioStream
from ..schemas.report import CheckReport
from ..schemas.run import RunConfig
from ..services.env_data import covariate_names, default_nondescendants
from ..services.identify import IdentificationError, ico_rank_check, ico_workflow
from .common import (
    build_scenario,
    console,
    exit_codes,
    load_environments,
    load_run_config,
    output_dir,
    resolve_covariates,
    write_json,
)

logger = logging.getLogger(__name__)

CHECK_FILE = "check.json"


def _nondescendants(cfg: RunConfig, names: list[str], defaults: list[int]) -> list[int]:
    if "nondescendants" not in cfg.check.model_fields_set:
        chosen = defaults
    else:
        chosen = resolve_covariates(cfg.check.nondescendants, names)
    if not chosen:
        raise IdentificationError("the rank check needs a nonempty set of known non-descendants")
    return chosen


def _streaming(cfg: RunConfig) -> bool:
    if cfg.check.stream is not None:
        return cfg.check.stream
    return not cfg.data.configured


def render_check(report: CheckReport) -> Table:
    check = report.rank_check
    table = Table(title="Identification check")
    table.add_column("field")
    table.add_column("value", justify="right")
    table.add_row("environments", str(report.environments_used))
    table.add_row("non-descendants", ", ".join(report.covariate_names[i] for i in report.nondescendants))
    table.add_row("rank", f"{check.rank} / {check.columns}")
    table.add_row("threshold", f"{check.threshold:.3g}")
    table.add_row("certified by", f"first {check.certifying_environments} environments")
    table.add_row("verdict", "[green]pass[/green]" if check.passes else "[red]fail[/red]")
    table.add_row("invariant sets", str(len(report.invariant_sets)))
    table.add_row("distinct invariant vectors", "yes" if report.distinct_invariant_vectors else "no")
    return table


def check(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Flat key=value run configuration."),
    case: Optional[str] = typer.Option(None, "--case", help="Scenario kind to draw environments from."),
    envs: Optional[int] = typer.Option(None, "--envs", help="Maximum number of environments to draw."),
    n: Optional[int] = typer.Option(None, "--n", help="Samples per environment."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory."),
    overrides: Optional[list[str]] = typer.Argument(None, help="Dotted key=value overrides."),
) -> None:
    """Run the rank check on static data, or add environments from a scenario until it passes."""
    with exit_codes():
        cfg = load_run_config(
            config,
            {"scenario.kind": case, "check.max_envs": envs, "scenario.n": n, "seed": seed, "out": out},
            overrides,
        )
        if _streaming(cfg):
            scenario = build_scenario(cfg)
            stream = ScenarioStream(
                kind=scenario.kind,
                param_range=cfg.scenario.param_range,
                n_per_env=scenario.n_per_env,
                seed=scenario.seed,
            )
            names = covariate_names(scenario.kind)
            C = _nondescendants(cfg, names, default_nondescendants(scenario.kind))
            _, report = ico_workflow(stream, C, cfg.check.max_envs, noise_z=cfg.check.noise_z, tol=cfg.check.tol)
        else:
            multi, _ = load_environments(cfg)
            C = _nondescendants(cfg, multi.covariate_names, multi.known_nondescendants)
            report = ico_rank_check(multi, C, noise_z=cfg.check.noise_z, tol=cfg.check.tol)

        path = write_json(output_dir(cfg) / CHECK_FILE, report)
        console.print(render_check(report))
        console.print(f"Report written to {path}")
