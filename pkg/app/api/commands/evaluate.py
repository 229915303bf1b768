"""
Subcomando eval
"""

import logging
from pathlib import Path
from typing import Optional

import typer

from app.api.commands.common import handle_errors, parse_size, staged_output, write_json, write_run_manifest
from app.core.config import settings
from app.core.errors import ConfigError
from app.db.checkpoint_store import load_checkpoint, load_into
from app.db.manifest_store import load_manifest
from app.models.direct_capsnet import build
from app.models.schemas import RunSpec
from app.services.dataset_service import PairedDataset
from app.services.evaluation_service import (
    evaluate,
    export_scores,
    rank1_identification,
    write_labels,
    write_predictions,
)
from app.services.reconstruction_service import reconstruct_grid

logger = logging.getLogger(__name__)

router = typer.Typer()


def restore_model(checkpoint: Path):
    """Reconstruye el modelo de un checkpoint en modo evaluacion"""
    ckpt = load_checkpoint(checkpoint)
    model = build(ckpt.config.model, ckpt.seed)
    load_into(model, ckpt)
    model.eval()
    return model, ckpt


@router.command("eval")
@handle_errors
def cmd_eval(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Checkpoint a evaluar"),
    manifest: Path = typer.Option(..., "--manifest", help="manifest.yaml del conjunto de datos"),
    out: Optional[Path] = typer.Option(None, "--out", help="Directorio de salida"),
    split: str = typer.Option("test", "--split", help="Particion a evaluar"),
    view: str = typer.Option("vlr", "--view", help="Vista de entrada: vlr (protocolo) o hr"),
    vlr_size: Optional[str] = typer.Option(None, "--vlr-size", help="Tamano VLR alternativo: N o HxW (ej. 15x12)"),
    emit_recon: bool = typer.Option(False, "--emit-recon", help="Escribe la grilla de reconstrucciones"),
    recon_count: int = typer.Option(8, "--recon-count", min=1, help="Muestras en la grilla"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Semilla registrada en el manifiesto de corrida"),
):
    """
    Evalua un checkpoint: top-1/top-5 (y rank-1), puntajes y predicciones
    """
    if view not in ("vlr", "hr"):
        raise ConfigError(f"--view debe ser 'vlr' o 'hr', recibido {view!r}")
    model, ckpt = restore_model(checkpoint)
    data = load_manifest(manifest)
    dataset = PairedDataset(data, vlr_size=parse_size(vlr_size))

    out = out or Path(settings.OUTPUT_ROOT) / f"eval-{Path(checkpoint).stem}-{view}"
    spec = RunSpec(subcommand="eval", manifest_path=str(manifest), output_dir=str(out),
                   checkpoint_path=str(checkpoint), seed=seed if seed is not None else ckpt.seed,
                   ablation=ckpt.config.training.ablation)

    with staged_output(out) as stage:
        result = evaluate(model, dataset, split, view, ckpt.config.model.batch_size)
        ids = [r.sample_id for r in result.records]
        export_scores(result.records, stage / "scores.csv")
        write_predictions(stage / "predictions.csv", ids, result.predictions)
        write_labels(stage / "labels.csv", ids, [r.true_class for r in result.records])
        metrics = {
            "split": split,
            "view": view,
            "vlr_size": list(dataset.vlr_size),
            "samples": len(result.records),
            "top1": result.top1,
            "top5": result.top5,
            "rank1": rank1_identification(result.records),
        }
        if emit_recon:
            report = reconstruct_grid(model, dataset, stage / "recon_grid.png", split=split, n=recon_count)
            metrics["recon_mse_hr_vlr"] = report.mean_mse
        write_json(stage / "metrics.json", metrics)
        write_run_manifest(stage, spec, ckpt.config, extra={"epoch": ckpt.epoch, "step": ckpt.step})

    typer.echo(f"eval: {len(result.records)} muestras ({split}/{view}, VLR {dataset.vlr_size[0]}x{dataset.vlr_size[1]})")
    typer.echo(f"  top-1:  {result.top1:.2f}%")
    typer.echo(f"  top-5:  {result.top5:.2f}%")
    typer.echo(f"  rank-1: {metrics['rank1']:.2f}%")
    if emit_recon:
        typer.echo(f"  recon grid: {out / 'recon_grid.png'} (MSE HR-VLR {metrics['recon_mse_hr_vlr']:.6f})")
