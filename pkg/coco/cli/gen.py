from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import typer

from ..services.env_data import write_csv
from .common import METADATA_FILE, console, exit_codes, load_run_config, output_dir, scenario_data, write_json

logger = logging.getLogger(__name__)


def gen(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Flat key=value run configuration."),
    case: Optional[str] = typer.Option(None, "--case", help="Scenario kind, e.g. case5 or gmm."),
    envs: Optional[int] = typer.Option(None, "--envs", help="Number of environments."),
    n: Optional[int] = typer.Option(None, "--n", help="Samples per environment."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory."),
    overrides: Optional[list[str]] = typer.Argument(None, help="Dotted key=value overrides."),
) -> None:
    """Generate one CSV per environment plus a metadata file."""
    with exit_codes():
        cfg = load_run_config(
            config,
            {"scenario.kind": case, "scenario.envs": envs, "scenario.n": n, "seed": seed, "out": out},
            overrides,
        )
        multi, truth, scenario = scenario_data(cfg)
        target = output_dir(cfg)
        files = write_csv(multi, target)
        write_json(
            target / METADATA_FILE,
            {
                "scenario": scenario.model_dump(mode="json"),
                "truth": truth.model_dump(mode="json"),
                "covariate_names": multi.covariate_names,
                "known_nondescendants": multi.known_nondescendants,
                "environments": [
                    {"env_id": env.env_id, "file": path.name, "n": env.n, "metadata": env.metadata}
                    for env, path in zip(multi.environments, files)
                ],
            },
        )
        logger.info("Wrote %d environment files to %s", len(files), target)
        console.print(f"Wrote {len(files)} environments ({', '.join(multi.covariate_names)}) to {target}")
