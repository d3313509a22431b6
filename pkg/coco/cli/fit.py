from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np
import typer
from rich.table import Table

from ..models.predictor import LossKind, ModelKind, OutputHead
from ..schemas.data import MultiEnvData
from ..schemas.objective import ObjectiveSpec
from ..schemas.predictor import ModelShape, RiskSpec
from ..schemas.run import RunConfig
from ..services.objectives import objective_terms
from ..services.optimizer import fit as fit_model
from .common import (
    EXIT_NUMERICAL,
    console,
    exit_codes,
    load_environments,
    load_run_config,
    output_dir,
    resolve_covariates,
    run_seed,
    write_json,
)

logger = logging.getLogger(__name__)

FIT_FILE = "fit.json"


def build_model(cfg: RunConfig, multi: MultiEnvData) -> tuple[ModelShape, RiskSpec]:
    section = cfg.model
    kind = ModelKind(section.kind)
    if kind == ModelKind.LINEAR:
        shape = ModelShape.linear(multi.p)
    elif kind == ModelKind.LOGISTIC:
        shape = ModelShape.logistic(multi.p)
    else:
        head = section.head or (
            OutputHead.SOFTMAX if section.loss == LossKind.CROSS_ENTROPY else OutputHead.IDENTITY
        )
        outputs = 1
        if head == OutputHead.SOFTMAX:
            outputs = int(max(env.y.max() for env in multi.environments)) + 1
        shape = ModelShape.mlp(multi.p, section.hidden, outputs, activation=section.activation, head=head)
    loss = section.loss or (LossKind.SQUARED if shape.head == OutputHead.IDENTITY else LossKind.CROSS_ENTROPY)
    risk = RiskSpec(loss=loss)
    risk.check_compatible(shape)
    return shape, risk


def build_objective(cfg: RunConfig, multi: MultiEnvData) -> ObjectiveSpec:
    section = cfg.objective
    mask = resolve_covariates(section.mask, multi.covariate_names) if section.mask else multi.known_nondescendants
    return ObjectiveSpec(
        method=section.method,
        lambda_r=section.lambda_r,
        lambda_=section.lambda_,
        lambda_w=section.lambda_w,
        lambda_vrex=section.lambda_vrex,
        estimator=section.estimator,
        nondescendant_mask=mask or None,
    )


def _summary(names: list[str], coefficients: np.ndarray, beta: Optional[np.ndarray]) -> Table:
    table = Table(title="Fitted coefficients")
    table.add_column("covariate")
    table.add_column("estimate", justify="right")
    if beta is not None:
        table.add_column("causal", justify="right")
    for index, name in enumerate(names):
        row = [name, f"{coefficients[index]:.4f}"]
        if beta is not None:
            row.append(f"{beta[index]:.4f}")
        table.add_row(*row)
    return table


def fit(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Flat key=value run configuration."),
    method: Optional[str] = typer.Option(None, "--method", help="erm, coco, coco-modified, naive-coco, coco-erm, irmv1 or vrex."),
    case: Optional[str] = typer.Option(None, "--case", help="Generate this scenario instead of reading CSVs."),
    envs: Optional[int] = typer.Option(None, "--envs", help="Number of generated environments."),
    n: Optional[int] = typer.Option(None, "--n", help="Samples per generated environment."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory."),
    overrides: Optional[list[str]] = typer.Argument(None, help="Dotted key=value overrides."),
) -> None:
    """Fit a predictor with the configured objective and write the result."""
    with exit_codes():
        cfg = load_run_config(
            config,
            {
                "objective.method": method,
                "scenario.kind": case,
                "scenario.envs": envs,
                "scenario.n": n,
                "seed": seed,
                "out": out,
            },
            overrides,
        )
        multi, beta = load_environments(cfg)
        shape, risk = build_model(cfg, multi)
        obj = build_objective(cfg, multi)
        optim = cfg.optim
        if "seed" not in optim.model_fields_set:
            optim = optim.model_copy(update={"seed": run_seed(cfg)})

        result = fit_model(multi, risk, obj, optim, shape)
        mae = None
        linear = shape.kind == ModelKind.LINEAR
        if linear and beta is not None and beta.shape[0] == shape.n_params:
            mae = float(np.mean(np.abs(result.coefficients - beta)))
        terms = None if result.diverged else objective_terms(result.params, multi, risk, obj)

        path = write_json(
            output_dir(cfg) / FIT_FILE,
            {
                "objective": obj.model_dump(mode="json", by_alias=True),
                "covariate_names": multi.covariate_names,
                "environments": [env.env_id for env in multi.environments],
                "mae": mae,
                "causal_coefficients": None if beta is None else beta.tolist(),
                "terms": None if terms is None else terms.model_dump(mode="json"),
                "result": result.model_dump(mode="json"),
            },
        )
        if linear:
            console.print(_summary(multi.covariate_names, result.coefficients, beta))
        if mae is not None:
            console.print(f"MAE against the causal coefficients: {mae:.4f}")
        console.print(
            f"{obj.method.value}: objective {result.final_objective:.6g} after {result.iterations} iterations "
            f"(converged={result.converged}); report written to {path}"
        )
        if result.diverged:
            console.print(f"[red]Fit diverged:[/red] {result.diagnostic}")
            raise typer.Exit(code=EXIT_NUMERICAL)
