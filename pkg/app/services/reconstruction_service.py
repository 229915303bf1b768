"""
Grilla de reconstrucciones HR/VLR

Cada fila muestra: entrada HR, entrada VLR, reconstruccion desde HR y
reconstruccion desde VLR. Tambien mide el MSE por pixel entre ambas
reconstrucciones (cuanto se parece lo que el modelo "ve" en VLR a lo que ve en HR).
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel

from app.autograd.tensor import Tensor, no_grad
from app.services.dataset_service import HR_FLAG, VLR_FLAG, PairedDataset, stack_samples
from app.utils.image_ops import to_uint8

logger = logging.getLogger(__name__)

# Separacion entre celdas de la grilla (pixeles)
GRID_GAP = 2


class ReconstructionReport(BaseModel):
    path: str
    sample_ids: List[str]
    mse: List[float]
    mean_mse: float


def _reconstruct(model, inputs: np.ndarray) -> np.ndarray:
    out = model(Tensor(inputs), decode=True)
    return out.recon.data


def compose_grid(rows: List[List[np.ndarray]], gap: int = GRID_GAP) -> np.ndarray:
    """Arma una grilla uint8 [H, W, C] a partir de imagenes [C, h, w]"""
    c, h, w = rows[0][0].shape
    n_rows, n_cols = len(rows), len(rows[0])
    canvas = np.full((c, n_rows * h + (n_rows - 1) * gap, n_cols * w + (n_cols - 1) * gap), 1.0, dtype=np.float32)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = i * (h + gap), j * (w + gap)
            canvas[:, y:y + h, x:x + w] = img
    return to_uint8(canvas)


def reconstruct_grid(model, dataset: PairedDataset, path: Union[str, Path], split: str = "test",
                     n: int = 8, indices: Optional[List[int]] = None) -> ReconstructionReport:
    """
    Escribe la grilla PNG y devuelve el MSE entre reconstrucciones HR y VLR

    Args:
        n: cantidad de muestras (primeras de la particion)
        indices: indices de entrada explicitos en lugar de las primeras n
    """
    chosen = list(indices) if indices is not None else dataset.indices(split)[:n]
    if not chosen:
        # Grilla vacia: no se escribe PNG
        logger.warning(f"[WARN] Sin muestras para reconstruir en '{split}', grilla vacia")
        return ReconstructionReport(path=str(path), sample_ids=[], mse=[], mean_mse=0.0)
    hr = stack_samples([dataset.sample(i, HR_FLAG) for i in chosen])
    vlr = stack_samples([dataset.sample(i, VLR_FLAG) for i in chosen])

    was_training = model.training
    model.eval()
    try:
        with no_grad():
            rec_hr = _reconstruct(model, hr.inputs)
            rec_vlr = _reconstruct(model, vlr.inputs)
    finally:
        model.train(was_training)

    diff = rec_hr.astype(np.float64) - rec_vlr.astype(np.float64)
    mse = (diff ** 2).reshape(len(chosen), -1).mean(axis=1)
    rows = [[hr.inputs[i], vlr.inputs[i], rec_hr[i], rec_vlr[i]] for i in range(len(chosen))]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(compose_grid(rows)).save(path, format="PNG")
    report = ReconstructionReport(path=str(path), sample_ids=hr.sample_ids,
                                  mse=mse.tolist(), mean_mse=float(mse.mean()))
    logger.info(f"[OK] Grilla de reconstruccion: {path} ({len(chosen)} muestras, MSE HR-VLR={report.mean_mse:.6f})")
    return report
