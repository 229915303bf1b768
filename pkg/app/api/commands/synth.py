"""
Subcomando synth
"""

import logging
from pathlib import Path
from typing import Optional

import typer

from app.api.commands.common import handle_errors
from app.services.synth_service import synth_dataset

logger = logging.getLogger(__name__)

router = typer.Typer()


@router.command("synth")
@handle_errors
def cmd_synth(
    out: Path = typer.Option(..., "--out", help="Directorio del conjunto generado"),
    classes: int = typer.Option(4, "--classes", min=2, help="Numero de clases K"),
    per_class: int = typer.Option(200, "--per-class", min=1, help="Imagenes de entrenamiento por clase"),
    test_per_class: Optional[int] = typer.Option(None, "--test-per-class", min=1),
    hr_size: int = typer.Option(32, "--hr-size", min=2, help="Lado HR"),
    vlr_size: int = typer.Option(8, "--vlr-size", min=1, help="Lado VLR"),
    channels: int = typer.Option(3, "--channels", min=1, max=3),
    seed: Optional[int] = typer.Option(None, "--seed"),
):
    """
    Genera el conjunto sintetico de figuras con su manifiesto
    """
    manifest = synth_dataset(str(out), classes, per_class, (hr_size, hr_size), (vlr_size, vlr_size),
                             seed=seed, n_test_per_class=test_per_class, channels=channels)
    typer.echo(f"synth: {len(manifest.entries)} imagenes, manifiesto en {out / 'manifest.yaml'}")
