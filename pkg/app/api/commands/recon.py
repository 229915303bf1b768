"""
Subcomando recon
"""

import logging
from pathlib import Path

import typer

from app.api.commands.common import handle_errors
from app.api.commands.evaluate import restore_model
from app.db.manifest_store import load_manifest
from app.services.dataset_service import PairedDataset
from app.services.reconstruction_service import reconstruct_grid

logger = logging.getLogger(__name__)

router = typer.Typer()


@router.command("recon")
@handle_errors
def cmd_recon(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    manifest: Path = typer.Option(..., "--manifest"),
    out: Path = typer.Option(Path("recon_grid.png"), "--out", help="Archivo PNG destino"),
    split: str = typer.Option("test", "--split"),
    count: int = typer.Option(8, "--count", min=1, help="Muestras en la grilla"),
):
    """
    Exporta la grilla de reconstrucciones HR/VLR de un checkpoint
    """
    model, _ = restore_model(checkpoint)
    dataset = PairedDataset(load_manifest(manifest))
    report = reconstruct_grid(model, dataset, out, split=split, n=count)
    typer.echo(f"recon: {out} ({len(report.sample_ids)} muestras, MSE HR-VLR {report.mean_mse:.6f})")
