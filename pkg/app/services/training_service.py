"""
Servicio de entrenamiento

Bucle sobre la perdida combinada (margen + ancla HR + reconstruccion dirigida)
con Adam, variantes de ablacion, checkpoints por epoca y reanudacion.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from app.autograd.tensor import Tape, Tensor
from app.core.errors import DivergenceError, NonFiniteError
from app.db.checkpoint_store import Checkpoint, load_into, save_checkpoint, snapshot
from app.models.direct_capsnet import DirectCapsNet, build
from app.models.schemas import Ablation, BatchMix, DatasetManifest, ExperimentConfig, LossWeights
from app.nn.capsules import predict
from app.nn.losses import (
    LossBreakdown,
    combine_losses,
    hr_anchor_loss,
    margin_loss,
    plain_reconstruction_loss,
    targeted_reconstruction_loss,
)
from app.nn.optim import Adam
from app.services.dataset_service import Batch, PairedDataset, batch_iter
from app.services.evaluation_service import evaluate
from app.services.training_log_service import TrainingLogService

logger = logging.getLogger(__name__)

ANCHOR_PARAM = "anchor_bank.anchors"


@dataclass
class AblationPlan:
    """Pesos, mezcla de vistas y objetivo de reconstruccion efectivos"""
    weights: LossWeights
    mix: BatchMix
    recon_target: str


def resolve_ablation(config: ExperimentConfig, ablation: Optional[Ablation] = None) -> AblationPlan:
    """
    Traduce una variante de ablacion a pesos efectivos

        full         pesos de la configuracion
        no_anchor    lambda1 = 0
        no_trecon    lambda2 = 0
        margin_only  lambda1 = lambda2 = 0
        hr_only      lambda1 = lambda2 = 0, solo vistas HR
        plain_recon  lambda1 = 0, reconstruccion de la propia entrada
    """
    ablation = Ablation(ablation or config.training.ablation)
    base = config.model.loss_weights
    l1, l2 = base.lambda1, base.lambda2
    mix = config.data.mix
    target = config.model.recon_target
    if ablation in (Ablation.NO_ANCHOR, Ablation.PLAIN_RECON, Ablation.MARGIN_ONLY, Ablation.HR_ONLY):
        l1 = 0.0
    if ablation in (Ablation.NO_TRECON, Ablation.MARGIN_ONLY, Ablation.HR_ONLY):
        l2 = 0.0
    if ablation == Ablation.HR_ONLY:
        mix = BatchMix.HR
    if ablation == Ablation.PLAIN_RECON:
        target = "input"
    return AblationPlan(weights=LossWeights(lambda1=l1, lambda2=l2), mix=BatchMix(mix), recon_target=target)


@dataclass
class StepOutcome:
    losses: Dict[str, float]
    correct: int
    size: int


@dataclass
class TrainingResult:
    model: DirectCapsNet
    log: List[Dict]
    checkpoints: List[Path] = field(default_factory=list)
    final_metrics: Dict[str, Optional[float]] = field(default_factory=dict)


class TrainingService:
    """
    Entrena un DirectCapsNet sobre un PairedDataset

    Args:
        config: ExperimentConfig validado
        dataset: pares HR/VLR del manifiesto
        out_dir: directorio para checkpoints y log (None: sin archivos)
        ablation: sobrescribe training.ablation
    """

    def __init__(self, config: ExperimentConfig, dataset: PairedDataset,
                 out_dir: Optional[Union[str, Path]] = None, ablation: Optional[Ablation] = None,
                 echo_every: int = 0):
        if ablation is not None:
            # la ablacion efectiva queda en la configuracion que se guarda en el checkpoint
            config = config.model_copy(
                update={"training": config.training.model_copy(update={"ablation": Ablation(ablation)})}
            )
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.plan = resolve_ablation(config, ablation)
        log_path = self.out_dir / "training_log.ndjson" if self.out_dir is not None else None
        self.log = TrainingLogService(log_path, echo_every=echo_every)
        self.model: Optional[DirectCapsNet] = None
        self.optimizer: Optional[Adam] = None
        self.epoch = 0
        self.step = 0

    # =========================
    # Inicializacion
    # =========================
    def setup(self, resume: Optional[Checkpoint] = None) -> DirectCapsNet:
        """Construye modelo y optimizador; con `resume` restaura su estado"""
        tcfg = self.config.training
        self.model = build(self.config.model, tcfg.seed)
        overrides = {ANCHOR_PARAM: tcfg.anchor_lr} if tcfg.anchor_lr is not None else {}
        self.optimizer = Adam(self.model.named_parameters(), lr=tcfg.lr, beta1=tcfg.beta1,
                              beta2=tcfg.beta2, epsilon=tcfg.adam_epsilon, lr_overrides=overrides)
        if resume is not None:
            load_into(self.model, resume)
            if resume.adam is not None:
                self.optimizer.state = resume.adam
            self.epoch, self.step = resume.epoch, resume.step
            logger.info(f"[INIT] Reanudando desde epoca {self.epoch}, paso {self.step}")
        return self.model

    # =========================
    # Paso de entrenamiento
    # =========================
    def compute_losses(self, batch: Batch) -> Tuple[LossBreakdown, np.ndarray, np.ndarray]:
        """Pasada hacia adelante y perdida combinada de un lote (dentro de una Tape)"""
        mcfg = self.config.model
        weights = self.plan.weights
        out = self.model(Tensor(batch.inputs), target_class=batch.labels, decode=weights.lambda2 > 0)

        margin = margin_loss(out.class_caps.lengths, batch.labels, mcfg.margin, mcfg.reduction)
        anchor = None
        if weights.lambda1 > 0:
            # Con promedio movil el banco nunca recibe gradiente
            flags = batch.flags if mcfg.anchor_update == "gradient" else np.zeros_like(batch.flags)
            anchor = hr_anchor_loss(out.features, batch.labels, flags, self.model.anchor_bank, mcfg.reduction)
        recon = None
        if weights.lambda2 > 0:
            if self.plan.recon_target == "hr":
                recon = targeted_reconstruction_loss(out.recon, batch.hr_targets, mcfg.reduction)
            else:
                recon = plain_reconstruction_loss(out.recon, batch.inputs, mcfg.reduction)
        breakdown = combine_losses(margin, anchor, recon, weights)
        return breakdown, out.features.data, predict(out.class_caps)

    def train_step(self, batch: Batch) -> StepOutcome:
        mcfg = self.config.model
        self.model.train()
        with Tape() as tape:
            breakdown, features, predicted = self.compute_losses(batch)
        self.optimizer.zero_grad()
        tape.backward(breakdown.total)
        self.optimizer.step()
        if mcfg.anchor_update == "running_average" and self.plan.weights.lambda1 > 0:
            self.model.anchor_bank.running_average_update(features, batch.labels, batch.flags, mcfg.anchor_momentum)
        self.step += 1
        return StepOutcome(
            losses=breakdown.as_floats(),
            correct=int(np.sum(predicted == batch.labels)),
            size=batch.size,
        )

    # =========================
    # Bucle
    # =========================
    def _checkpoint(self, name: str) -> Path:
        ckpt = snapshot(self.model, self.config, self.epoch, self.step, self.config.training.seed,
                        adam=self.optimizer.state)
        return save_checkpoint(ckpt, self.out_dir / "checkpoints" / name)

    def _validate(self) -> Tuple[Optional[float], Optional[float]]:
        if not self.dataset.indices("test"):
            return None, None
        result = evaluate(self.model, self.dataset, "test", "vlr", self.config.model.batch_size)
        return result.top1, result.top5

    def run(self, resume: Optional[Checkpoint] = None, epochs: Optional[int] = None) -> TrainingResult:
        """
        Entrena hasta completar `epochs` (por defecto training.epochs)

        Raises:
            DivergenceError: la perdida o un gradiente dejaron de ser finitos;
                el ultimo checkpoint valido queda en disco
        """
        if self.model is None:
            self.setup(resume)
        tcfg = self.config.training
        total_epochs = epochs if epochs is not None else tcfg.epochs
        weights = self.plan.weights
        checkpoints: List[Path] = []
        logger.info(
            f"[INIT] Entrenamiento: ablacion={Ablation(tcfg.ablation).value} "
            f"lambda1={weights.lambda1:g} lambda2={weights.lambda2:g} mix={self.plan.mix.value} "
            f"epocas={self.epoch}->{total_epochs} batch={self.config.model.batch_size}"
        )

        val_top1 = val_top5 = None
        while self.epoch < total_epochs:
            correct = seen = 0
            batches = batch_iter(self.dataset, self.config.model.batch_size, self.plan.mix,
                                 tcfg.seed, self.epoch, "train", self.config.data.augment)
            for batch in batches:
                try:
                    outcome = self.train_step(batch)
                except NonFiniteError as e:
                    last = checkpoints[-1] if checkpoints else None
                    logger.error(f"[ERR] Divergencia en epoca {self.epoch}, paso {self.step + 1}: {e}")
                    raise DivergenceError(
                        f"Entrenamiento divergente en epoca {self.epoch}, paso {self.step + 1}: {e}. "
                        f"Ultimo checkpoint valido: {last or 'ninguno'}"
                    ) from e
                correct += outcome.correct
                seen += outcome.size
                self.log.log_step(self.epoch, self.step, outcome.losses, weights.lambda1,
                                  weights.lambda2, int(np.count_nonzero(batch.flags == 1)),
                                  int(np.count_nonzero(batch.flags == 0)))

            finished = self.epoch
            self.epoch += 1
            if self.epoch % tcfg.eval_every == 0 or self.epoch == total_epochs:
                val_top1, val_top5 = self._validate()
            self.log.log_epoch(finished, self.step, 100.0 * correct / max(seen, 1), val_top1, val_top5)
            if self.out_dir is not None:
                checkpoints.append(self._checkpoint(f"epoch_{finished:03d}.ckpt"))

        if self.out_dir is not None and checkpoints:
            # mismo estado que el ultimo checkpoint de epoca, guardado de forma atomica
            self._checkpoint("last.ckpt")
        epochs_log = self.log.epochs()
        final = {
            "train_acc": epochs_log[-1]["train_acc"] if epochs_log else None,
            "val_top1": val_top1,
            "val_top5": val_top5,
        }
        logger.info(f"[OK] Entrenamiento terminado en el paso {self.step}: {final}")
        return TrainingResult(model=self.model, log=list(self.log.logs), checkpoints=checkpoints, final_metrics=final)


def train(config: ExperimentConfig, data: Union[DatasetManifest, PairedDataset],
          ablation: Optional[Ablation] = None, out_dir: Optional[Union[str, Path]] = None,
          resume: Optional[Checkpoint] = None) -> TrainingResult:
    """Atajo funcional: construye el servicio y entrena"""
    dataset = data if isinstance(data, PairedDataset) else PairedDataset(data)
    service = TrainingService(config, dataset, out_dir, ablation)
    return service.run(resume=resume)
