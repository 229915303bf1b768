"""
Servicio para registrar y resumir el progreso del entrenamiento

El log de entrenamiento es JSON delimitado por lineas. Campos por registro:

    kind       "step" | "epoch"
    epoch      epoca (desde 0)
    step       paso global de optimizacion
    total      perdida total
    margin     perdida de margen
    anchor     perdida de ancla HR (0 si no se construyo)
    recon      perdida de reconstruccion (0 si no se construyo)
    lambda1    peso de la perdida de ancla
    lambda2    peso de la reconstruccion
    n_hr       muestras HR del lote (o de la epoca)
    n_vlr      muestras VLR del lote (o de la epoca)
    train_acc  solo "epoch": exactitud top-1 sobre los lotes de entrenamiento
    val_top1   solo "epoch": top-1 en la particion de prueba (vista VLR)
    val_top5   solo "epoch": top-5 en la particion de prueba (vista VLR)
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

logger = logging.getLogger(__name__)

STEP_FIELDS = ("kind", "epoch", "step", "total", "margin", "anchor", "recon",
               "lambda1", "lambda2", "n_hr", "n_vlr")
EPOCH_FIELDS = STEP_FIELDS + ("train_acc", "val_top1", "val_top5")


class TrainingLogService:
    """
    Acumula registros de pasos y epocas y los escribe como NDJSON

    Args:
        path: archivo destino; None mantiene el log solo en memoria
        echo_every: imprime un resumen de paso cada N pasos (0 desactiva)
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, echo_every: int = 0):
        self.path = Path(path) if path is not None else None
        self.echo_every = echo_every
        self.logs: List[Dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def _append(self, entry: Dict[str, Any]) -> None:
        self.logs.append(entry)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, separators=(",", ":")) + "\n")

    def log_step(self, epoch: int, step: int, losses: Dict[str, float], lambda1: float,
                 lambda2: float, n_hr: int, n_vlr: int) -> Dict[str, Any]:
        """Registra los componentes de la perdida de un paso"""
        entry = {
            "kind": "step",
            "epoch": epoch,
            "step": step,
            "total": losses["total"],
            "margin": losses["margin"],
            "anchor": losses.get("anchor", 0.0),
            "recon": losses.get("recon", 0.0),
            "lambda1": lambda1,
            "lambda2": lambda2,
            "n_hr": n_hr,
            "n_vlr": n_vlr,
        }
        self._append(entry)
        if self.echo_every and step % self.echo_every == 0:
            logger.info(
                f"[STATS] epoca {epoch} paso {step}: total={entry['total']:.6f} "
                f"margen={entry['margin']:.6f} ancla={entry['anchor']:.6f} recon={entry['recon']:.6f}"
            )
        return entry

    def log_epoch(self, epoch: int, step: int, train_acc: float,
                  val_top1: Optional[float] = None, val_top5: Optional[float] = None) -> Dict[str, Any]:
        """Registra el resumen de una epoca (promedios de sus pasos)"""
        steps = [e for e in self.logs if e["kind"] == "step" and e["epoch"] == epoch]
        n = max(len(steps), 1)
        last = steps[-1] if steps else {}
        entry = {
            "kind": "epoch",
            "epoch": epoch,
            "step": step,
            "total": sum(e["total"] for e in steps) / n,
            "margin": sum(e["margin"] for e in steps) / n,
            "anchor": sum(e["anchor"] for e in steps) / n,
            "recon": sum(e["recon"] for e in steps) / n,
            "lambda1": last.get("lambda1", 0.0),
            "lambda2": last.get("lambda2", 0.0),
            "n_hr": sum(e["n_hr"] for e in steps),
            "n_vlr": sum(e["n_vlr"] for e in steps),
            "train_acc": train_acc,
            "val_top1": val_top1,
            "val_top5": val_top5,
        }
        self._append(entry)
        self._print_epoch_summary(entry)
        return entry

    def epochs(self) -> List[Dict[str, Any]]:
        return [e for e in self.logs if e["kind"] == "epoch"]

    def _print_epoch_summary(self, entry: Dict[str, Any]) -> None:
        """Imprime un resumen visual de la epoca en la terminal"""
        val1 = f"{entry['val_top1']:.2f}%" if entry["val_top1"] is not None else "-"
        val5 = f"{entry['val_top5']:.2f}%" if entry["val_top5"] is not None else "-"
        print(f"""
+----------------------------------------------------------------+
|                  [STATS] EPOCH {entry['epoch']:<4} SUMMARY
+----------------------------------------------------------------+
| Step:                 {entry['step']:,}
| Samples (HR / VLR):   {entry['n_hr']:,} / {entry['n_vlr']:,}
| -------------------------------------------------------------
| Total loss:           {entry['total']:.6f}
| Margin loss:          {entry['margin']:.6f}
| HR-anchor loss:       {entry['anchor']:.6f}  (lambda1={entry['lambda1']:g})
| Recon loss:           {entry['recon']:.6f}  (lambda2={entry['lambda2']:g})
| -------------------------------------------------------------
| Train accuracy:       {entry['train_acc']:.2f}%
| Val top-1 / top-5:    {val1} / {val5}
+----------------------------------------------------------------+
        """)


def read_training_log(path: Union[str, Path]) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
