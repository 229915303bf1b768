"""
Subcomando train
"""

import logging
from pathlib import Path
from typing import Optional

import typer

from app.api.commands.common import handle_errors, staged_output, write_json, write_run_manifest
from app.core.config import settings
from app.db.checkpoint_store import load_checkpoint
from app.db.manifest_store import load_config, load_manifest
from app.models.schemas import Ablation, RunSpec
from app.services.dataset_service import PairedDataset
from app.services.training_service import TrainingService

logger = logging.getLogger(__name__)

router = typer.Typer()


@router.command("train")
@handle_errors
def cmd_train(
    config: Path = typer.Option(..., "--config", help="Configuracion YAML del experimento"),
    manifest: Path = typer.Option(..., "--manifest", help="manifest.yaml del conjunto de datos"),
    out: Optional[Path] = typer.Option(None, "--out", help="Directorio de salida (se crea de forma atomica)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sobrescribe training.seed"),
    ablation: Optional[Ablation] = typer.Option(None, "--ablation", help="Variante de ablacion"),
    epochs: Optional[int] = typer.Option(None, "--epochs", min=1, help="Sobrescribe training.epochs"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Checkpoint desde el cual continuar"),
):
    """
    Entrena DirectCapsNet y escribe checkpoints, log de entrenamiento y metricas
    """
    experiment = load_config(config)
    data = load_manifest(manifest)

    training = experiment.training
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if epochs is not None:
        updates["epochs"] = epochs
    if ablation is not None:
        updates["ablation"] = ablation
    if updates:
        experiment = experiment.model_copy(update={"training": training.model_copy(update=updates)})
    training = experiment.training

    if experiment.model.num_classes != data.num_classes:
        logger.warning(
            f"[WARN] num_classes del modelo ({experiment.model.num_classes}) difiere del manifiesto ({data.num_classes})"
        )
    resume_ckpt = load_checkpoint(resume) if resume is not None else None

    out = out or Path(settings.OUTPUT_ROOT) / f"train-{training.ablation.value}-seed{training.seed}"
    spec = RunSpec(subcommand="train", config_path=str(config), manifest_path=str(manifest),
                   output_dir=str(out), checkpoint_path=str(resume) if resume else None,
                   seed=training.seed, ablation=training.ablation)

    with staged_output(out) as stage:
        write_run_manifest(stage, spec, experiment)
        service = TrainingService(experiment, PairedDataset(data), stage)
        result = service.run(resume=resume_ckpt)
        write_json(stage / "metrics.json", {
            "ablation": training.ablation.value,
            "seed": training.seed,
            "epochs": service.epoch,
            "steps": service.step,
            **result.final_metrics,
        })

    typer.echo(f"train: {training.ablation.value} seed={training.seed} -> {out}")
    for key, value in result.final_metrics.items():
        typer.echo(f"  {key}: {'-' if value is None else f'{value:.2f}'}")
