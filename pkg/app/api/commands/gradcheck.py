"""
Subcomando gradcheck
"""

import logging
from pathlib import Path
from typing import List, Optional

import typer

from app.api.commands.common import handle_errors, write_json
from app.services.gradcheck_service import DEFAULT_EPS, DEFAULT_TOL, DEFAULT_TRIALS, check_suite, run_suite

logger = logging.getLogger(__name__)

router = typer.Typer()


@router.command("gradcheck")
@handle_errors
def cmd_gradcheck(
    tol: float = typer.Option(DEFAULT_TOL, "--tol", help="Tolerancia de error relativo"),
    eps: float = typer.Option(DEFAULT_EPS, "--eps", help="Paso de diferencias centrales"),
    trials: int = typer.Option(DEFAULT_TRIALS, "--trials", min=1, help="Pruebas aleatorias por caso"),
    seed: int = typer.Option(0, "--seed"),
    only: Optional[List[str]] = typer.Option(None, "--only", help="Ejecuta solo estos casos"),
    report: Optional[Path] = typer.Option(None, "--report", help="Escribe el reporte JSON"),
    inject_bug: Optional[str] = typer.Option(None, "--inject-bug", hidden=True,
                                             help="Altera la regla de una op (control negativo)"),
):
    """
    Chequeo de gradientes en 64 bits de ops, perdidas y modelo completo

    Sale con 0 solo si todos los casos pasan.
    """
    result = run_suite(tol=tol, eps=eps, trials=trials, seed=seed, only=only, inject_bug=inject_bug)
    if report is not None:
        report.parent.mkdir(parents=True, exist_ok=True)
        write_json(report, result.model_dump(mode="json"))

    for case in result.results:
        status = "PASS" if case.passed else "FAIL"
        typer.echo(f"{status}  {case.name:<30} max_rel={case.max_rel_error:.3e} "
                   f"checked={case.checked} skipped={case.skipped_kinks}")
    typer.echo(f"{sum(c.passed for c in result.results)}/{len(result.results)} casos OK "
               f"(tol={tol:g}, {result.seconds:.1f}s)")
    check_suite(result)
