"""
Subcomando mcnemar
"""

import logging
from pathlib import Path

import typer

from app.api.commands.common import handle_errors
from app.services.evaluation_service import mcnemar_from_files

logger = logging.getLogger(__name__)

router = typer.Typer()


@router.command("mcnemar")
@handle_errors
def cmd_mcnemar(
    predictions_a: Path = typer.Argument(..., help="predictions.csv del sistema A"),
    predictions_b: Path = typer.Argument(..., help="predictions.csv del sistema B"),
    labels: Path = typer.Argument(..., help="labels.csv alineado con ambas predicciones"),
):
    """
    Prueba de McNemar entre dos sistemas sobre las mismas muestras (99% C.I.)
    """
    table, result = mcnemar_from_files(predictions_a, predictions_b, labels)
    typer.echo("                B correcto   B incorrecto")
    typer.echo(f"A correcto      {table.a:>10}   {table.b:>12}")
    typer.echo(f"A incorrecto    {table.c:>10}   {table.d:>12}")
    typer.echo(f"n = {table.total}")
    if result is None:
        typer.echo("no discordant pairs")
        return
    verdict = "significant" if result.significant else "not significant"
    typer.echo(f"statistic = {result.statistic:.3f} (critical {result.critical_value:.3f}), "
               f"p = {result.p_value:.4g} [{result.method}]")
    typer.echo(f"{verdict} at 99% C.I.")
