from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Optional

import typer
from rich.table import Table

from ..schemas.report import BenchReport
from ..services.bench import run_suite
from .common import console, exit_codes, load_run_config, output_dir, run_seed, write_json, write_models_csv

logger = logging.getLogger(__name__)

ROW_COLUMNS = ("case", "method", "metric", "mean", "std", "replications", "failures")
CELL_COLUMNS = (
    "case",
    "method",
    "replication",
    "seed",
    "mae",
    "train_accuracy",
    "test_accuracy",
    "prediction_error",
    "hyperparameter",
    "coefficients",
    "error",
)


def render_bench(report: BenchReport) -> Table:
    table = Table(title=f"Benchmark: {report.suite}")
    for column in ("case", "method", "metric"):
        table.add_column(column)
    table.add_column("mean ± std", justify="right")
    table.add_column("reps", justify="right")
    table.add_column("failures", justify="right")
    for row in report.rows:
        summary = "n/a" if row.mean is None else f"{row.mean:.4f} ± {row.std:.4f}"
        table.add_row(row.case, row.method, row.metric, summary, str(row.replications), str(row.failures))
    return table


def bench(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Flat key=value run configuration."),
    suite: Optional[str] = typer.Option(None, "--suite", help="linear-cases, gmm, appendix-b1 or mismatch."),
    method: Optional[str] = typer.Option(None, "--method", help="Comma-separated subset of the suite's methods."),
    case: Optional[str] = typer.Option(None, "--case", help="Comma-separated subset of the suite's cases."),
    n: Optional[int] = typer.Option(None, "--n", help="Samples per environment."),
    reps: Optional[int] = typer.Option(None, "--reps", help="Replications per cell."),
    workers: Optional[int] = typer.Option(None, "--workers", help="Worker threads."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory."),
    overrides: Optional[list[str]] = typer.Argument(None, help="Dotted key=value overrides."),
) -> None:
    """Run a benchmark suite and write its tables as CSV and JSON."""
    with exit_codes():
        cfg = load_run_config(
            config,
            {
                "bench.suite": suite,
                "bench.methods": method,
                "bench.cases": case,
                "bench.n": n,
                "bench.reps": reps,
                "bench.workers": workers,
                "seed": seed,
                "out": out,
            },
            overrides,
        )
        section = cfg.bench
        report = run_suite(
            section.suite,
            reps=section.reps,
            seed=run_seed(cfg),
            n=section.n,
            cases=section.cases or None,
            methods=section.methods or None,
            workers=section.workers,
            progress=sys.stderr.isatty(),
        )
        target = output_dir(cfg)
        prefix = f"bench-{report.suite}"
        write_json(target / f"{prefix}.json", report)
        write_models_csv(target / f"{prefix}.csv", report.rows, ROW_COLUMNS)
        write_models_csv(target / f"{prefix}-cells.csv", report.cells, CELL_COLUMNS)
        console.print(render_bench(report))
        console.print(f"Tables written to {target}")
