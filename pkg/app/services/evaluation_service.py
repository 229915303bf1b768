"""
Servicio de evaluacion: exactitud top-k, identificacion rank-1, exportacion de
puntajes genuinos/impostores y prueba de McNemar
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import binomtest, chi2

from app.autograd.tensor import Tensor, no_grad
from app.core.errors import DataError, NoDiscordantPairsError
from app.models.schemas import ContingencyTable, McNemarResult, ScoreRecord
from app.services.dataset_service import PairedDataset, stack_samples

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["sample_id", "class", "score", "kind"]
SCORE_FLOAT_FORMAT = "%.9g"

# Confianza de la prueba de McNemar y umbral de la variante exacta
MCNEMAR_CONFIDENCE = 0.99
EXACT_BELOW = 25

# Mayor float32 estrictamente menor que 1
_BELOW_ONE = float(np.nextafter(np.float32(1.0), np.float32(0.0)))


@dataclass
class EvaluationResult:
    records: List[ScoreRecord]
    top1: float
    top5: float
    predictions: np.ndarray
    view: str


def _score_matrix(records: Sequence[ScoreRecord]) -> Tuple[np.ndarray, np.ndarray]:
    if not records:
        raise DataError("No hay registros para evaluar")
    scores = np.array([r.scores for r in records], dtype=np.float64)
    truth = np.array([r.true_class for r in records], dtype=np.int64)
    return scores, truth


def true_class_rank(records: Sequence[ScoreRecord]) -> np.ndarray:
    """
    Posicion (desde 0) de la clase verdadera en el orden de puntajes

    Empates a favor del menor indice de clase.
    """
    scores, truth = _score_matrix(records)
    genuine = scores[np.arange(len(truth)), truth][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > genuine) | ((scores == genuine) & (idx < truth[:, None]))
    return ahead.sum(axis=1)


def topk_accuracy(records: Sequence[ScoreRecord], k: int) -> float:
    """
    Porcentaje de registros con la clase verdadera entre los k mayores puntajes

    Raises:
        DataError: registros vacios o k fuera de [1, K]
    """
    scores, _ = _score_matrix(records)
    if not 1 <= k <= scores.shape[1]:
        raise DataError(f"k={k} fuera de [1, {scores.shape[1]}]")
    hits = true_class_rank(records) < k
    return 100.0 * float(hits.mean())


def rank1_identification(probe_records: Sequence[ScoreRecord]) -> float:
    """Identificacion rank-1 en protocolo cerrado (identidades = clases)"""
    return topk_accuracy(probe_records, 1)


def predictions_of(records: Sequence[ScoreRecord]) -> np.ndarray:
    scores, _ = _score_matrix(records)
    return np.argmax(scores, axis=1)


# =========================
# Puntajes del modelo
# =========================
def score_records(model, dataset: PairedDataset, split: str = "test", view: str = "vlr",
                  batch_size: int = 100) -> List[ScoreRecord]:
    """
    Evalua el modelo en modo inferencia y devuelve los largos de capsula

    Args:
        view: "vlr" (protocolo de prueba) o "hr"
    """
    samples = dataset.samples(split, view)
    if not samples:
        raise DataError(f"La particion '{split}' no tiene muestras")
    was_training = model.training
    model.eval()
    records: List[ScoreRecord] = []
    try:
        with no_grad():
            for start in range(0, len(samples), batch_size):
                batch = stack_samples(samples[start:start + batch_size])
                out = model(Tensor(batch.inputs), decode=False)
                lengths = np.minimum(out.class_caps.lengths.data.astype(np.float64), _BELOW_ONE)
                for sid, label, row in zip(batch.sample_ids, batch.labels, lengths):
                    records.append(ScoreRecord(sample_id=sid, true_class=int(label), scores=row.tolist()))
    finally:
        model.train(was_training)
    return records


def evaluate(model, dataset: PairedDataset, split: str = "test", view: str = "vlr",
             batch_size: int = 100) -> EvaluationResult:
    records = score_records(model, dataset, split, view, batch_size)
    k = len(records[0].scores)
    result = EvaluationResult(
        records=records,
        top1=topk_accuracy(records, 1),
        top5=topk_accuracy(records, min(5, k)),
        predictions=predictions_of(records),
        view=view,
    )
    logger.info(
        f"[STATS] Evaluacion {split}/{view}: top-1={result.top1:.2f}% "
        f"top-{min(5, k)}={result.top5:.2f}% ({len(records)} muestras)"
    )
    return result


# =========================
# Archivos
# =========================
def export_scores(records: Sequence[ScoreRecord], path: Union[str, Path]) -> Path:
    """
    CSV sample_id,class,score,kind con un puntaje genuino y K-1 impostores por registro

    Los puntajes se escriben con 9 cifras significativas.
    """
    rows = [
        (r.sample_id, k, score, "genuine" if k == r.true_class else "impostor")
        for r in records
        for k, score in enumerate(r.scores)
    ]
    frame = pd.DataFrame(rows, columns=SCORE_COLUMNS)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=SCORE_FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"[OK] Puntajes exportados: {path} ({len(records)} registros)")
    return path


def read_scores(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"sample_id": str, "class": np.int64, "score": np.float64, "kind": str})


def write_predictions(path: Union[str, Path], sample_ids: Sequence[str], predictions: Sequence[int]) -> Path:
    frame = pd.DataFrame({"sample_id": list(sample_ids), "prediction": np.asarray(predictions, dtype=np.int64)})
    frame.to_csv(path, index=False, lineterminator="\n")
    return Path(path)


def write_labels(path: Union[str, Path], sample_ids: Sequence[str], labels: Sequence[int]) -> Path:
    frame = pd.DataFrame({"sample_id": list(sample_ids), "label": np.asarray(labels, dtype=np.int64)})
    frame.to_csv(path, index=False, lineterminator="\n")
    return Path(path)


def _read_column(path: Union[str, Path], column: str) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"No existe el archivo: {path}")
    try:
        frame = pd.read_csv(path, dtype={"sample_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"CSV ilegible {path}: {e}") from e
    if column not in frame.columns:
        raise DataError(f"{path} no tiene la columna '{column}'")
    return frame


# =========================
# McNemar
# =========================
def contingency_table(pred_a: Sequence[int], pred_b: Sequence[int], labels: Sequence[int]) -> ContingencyTable:
    pred_a, pred_b, labels = (np.asarray(x, dtype=np.int64) for x in (pred_a, pred_b, labels))
    if not (len(pred_a) == len(pred_b) == len(labels)):
        raise DataError(
            f"Longitudes distintas: A={len(pred_a)} B={len(pred_b)} etiquetas={len(labels)}"
        )
    ok_a, ok_b = pred_a == labels, pred_b == labels
    return ContingencyTable(
        a=int(np.sum(ok_a & ok_b)),
        b=int(np.sum(ok_a & ~ok_b)),
        c=int(np.sum(~ok_a & ok_b)),
        d=int(np.sum(~ok_a & ~ok_b)),
    )


def mcnemar(table: ContingencyTable, confidence: float = MCNEMAR_CONFIDENCE) -> McNemarResult:
    """
    Prueba de McNemar con correccion de continuidad

    estadistico = (|b - c| - 1)^2 / (b + c), comparado con chi-cuadrado de 1 g.l.
    Con b + c < 25 la decision usa la binomial exacta (el estadistico se
    reporta igual).

    Raises:
        NoDiscordantPairsError: b + c = 0
    """
    n = table.b + table.c
    if n == 0:
        raise NoDiscordantPairsError("no discordant pairs: ambos sistemas aciertan y fallan en las mismas muestras")
    statistic = (abs(table.b - table.c) - 1) ** 2 / n
    critical = float(chi2.ppf(confidence, df=1))
    alpha = 1.0 - confidence
    if n < EXACT_BELOW:
        p_value = float(binomtest(min(table.b, table.c), n, 0.5).pvalue)
        method = "exact_binomial"
        significant = p_value < alpha
    else:
        p_value = float(chi2.sf(statistic, df=1))
        method = "chi2_continuity"
        significant = statistic > critical
    return McNemarResult(statistic=statistic, p_value=p_value, method=method,
                         significant=significant, critical_value=critical)


def mcnemar_from_files(predictions_a: Union[str, Path], predictions_b: Union[str, Path],
                       labels: Union[str, Path]) -> Tuple[ContingencyTable, Optional[McNemarResult]]:
    """
    Compara dos archivos de predicciones alineados con un archivo de etiquetas

    Returns:
        (tabla, resultado); resultado es None si no hay pares discordantes
    """
    a = _read_column(predictions_a, "prediction")
    b = _read_column(predictions_b, "prediction")
    y = _read_column(labels, "label")
    if not (len(a) == len(b) == len(y)):
        raise DataError(f"Archivos desalineados: {len(a)}, {len(b)} y {len(y)} filas")
    if "sample_id" in a and "sample_id" in b and "sample_id" in y:
        if not (a["sample_id"].tolist() == b["sample_id"].tolist() == y["sample_id"].tolist()):
            raise DataError("Los sample_id de los tres archivos no coinciden en orden")
    table = contingency_table(a["prediction"], b["prediction"], y["label"])
    try:
        return table, mcnemar(table)
    except NoDiscordantPairsError:
        return table, None
