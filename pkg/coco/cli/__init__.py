from typing import Optional

import typer

from .bench import bench
from .check import check
from .common import configure_logging
from .fit import fit
from .gen import gen
from .report import report

app = typer.Typer(name="coco", help="Causal coefficient estimation across environments.", no_args_is_help=True)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Defaults to COCO_LOG_LEVEL."),
) -> None:
    configure_logging(log_level)


app.command("gen")(gen)
app.command("fit")(fit)
app.command("check")(check)
app.command("bench")(bench)
app.command("report")(report)

__all__ = ["app"]
