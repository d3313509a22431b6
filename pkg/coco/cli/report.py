from __future__ import annotations

from pathlib import Path

import orjson
import typer
from rich.table import Table

from ..schemas.report import BenchReport, CheckReport
from .bench import render_bench
from .check import render_check
from .common import console, exit_codes


def _render_fit(payload: dict) -> Table:
    result = payload["result"]
    names = payload.get("covariate_names") or []
    theta = result["params"]["theta"]
    table = Table(title=f"Fit: {payload['objective']['method']}")
    table.add_column("field")
    table.add_column("value", justify="right")
    if len(theta) == len(names):
        for name, value in zip(names, theta):
            table.add_row(name, f"{value:.4f}")
    else:
        table.add_row("parameters", str(len(theta)))
    if payload.get("mae") is not None:
        table.add_row("MAE", f"{payload['mae']:.4f}")
    table.add_row("iterations", str(result["iterations"]))
    table.add_row("converged", str(result["converged"]))
    table.add_row("diverged", str(result["diverged"]))
    return table


def report(path: Path = typer.Argument(..., help="A fit, check or bench JSON file.")) -> None:
    """Render a stored report as a table."""
    with exit_codes():
        payload = orjson.loads(path.read_bytes())
        if not isinstance(payload, dict):
            raise ValueError(f"{path} does not hold a report object")
        if "rank_check" in payload:
            console.print(render_check(CheckReport.model_validate(payload)))
        elif "suite" in payload and "rows" in payload:
            console.print(render_bench(BenchReport.model_validate(payload)))
        elif "result" in payload and "objective" in payload:
            console.print(_render_fit(payload))
        else:
            raise ValueError(f"{path} is not a fit, check or bench report")
