"""
Persistencia de documentos YAML: configuracion de experimento y manifiesto de datos

El manifiesto vive junto a un CSV de etiquetas (file,label[,split]); las rutas
`root` y `labels_csv` son relativas al directorio del manifiesto.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Union

import pandas as pd
import yaml
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigError, DataError
from app.models.schemas import DatasetManifest, ExperimentConfig, ManifestEntry

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_yaml(path: Path, error_cls) -> Dict[str, Any]:
    if not path.is_file():
        raise error_cls(f"No existe el archivo: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise error_cls(f"YAML invalido en {path}: {e}") from e
    if not isinstance(doc, dict):
        raise error_cls(f"{path} no contiene un documento clave-valor")
    return doc


def _write_yaml(path: Path, doc: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, allow_unicode=True)


# =========================
# Configuracion
# =========================
def load_config(path: PathLike) -> ExperimentConfig:
    """Lee y valida un ExperimentConfig; cualquier problema es ConfigError"""
    path = Path(path)
    doc = _read_yaml(path, ConfigError)
    try:
        config = ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"Configuracion invalida en {path}:\n{e}") from e
    logger.info(f"[OK] Configuracion cargada: {path} (ablacion={config.training.ablation.value})")
    return config


def save_config(config: ExperimentConfig, path: PathLike) -> None:
    doc = config.model_dump(mode="json", by_alias=True)
    _write_yaml(Path(path), doc)


def config_from_dict(doc: Dict[str, Any]) -> ExperimentConfig:
    doc = {"schema": settings.CONFIG_SCHEMA, **doc}
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"Configuracion invalida:\n{e}") from e


# =========================
# Manifiesto de datos
# =========================
def load_manifest(path: PathLike, check_files: bool = True) -> DatasetManifest:
    """
    Lee el manifiesto YAML y su CSV de etiquetas

    Args:
        path: ruta del manifest.yaml
        check_files: verifica que cada imagen referida exista
    Returns:
        DatasetManifest con `root` absoluto y las entradas del CSV
    """
    path = Path(path)
    doc = _read_yaml(path, DataError)
    base = path.parent

    root = (base / doc.get("root", ".")).resolve()
    labels_path = (base / doc.get("labels_csv", "labels.csv")).resolve()
    if not labels_path.is_file():
        raise DataError(f"No existe el CSV de etiquetas: {labels_path}")

    try:
        frame = pd.read_csv(labels_path, dtype={"file": str}, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"CSV de etiquetas ilegible {labels_path}: {e}") from e
    missing = {"file", "label"} - set(frame.columns)
    if missing:
        raise DataError(f"{labels_path} sin columnas requeridas: {sorted(missing)}")
    if "split" not in frame.columns:
        frame["split"] = "train"
    frame["split"] = frame["split"].fillna("train").astype(str)

    entries = [
        ManifestEntry(file=row.file, label=int(row.label), split=row.split)
        for row in frame.itertuples(index=False)
    ]
    doc = dict(doc)
    doc.update(root=str(root), labels_csv=str(labels_path), entries=entries)
    try:
        manifest = DatasetManifest.model_validate(doc)
    except ValidationError as e:
        raise DataError(f"Manifiesto invalido en {path}:\n{e}") from e

    if check_files:
        absent = [e.file for e in manifest.entries if not (root / e.file).is_file()]
        if absent:
            raise DataError(f"{len(absent)} imagenes del manifiesto no existen (primera: {root / absent[0]})")

    counts = frame["split"].value_counts().to_dict()
    logger.info(f"[OK] Manifiesto cargado: {path} ({len(entries)} entradas, particiones={counts})")
    return manifest


def save_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    """
    Escribe manifest.yaml y el CSV de etiquetas en el mismo directorio

    `root` se guarda relativo al manifiesto para que el conjunto sea movible.
    """
    path = Path(path)
    base = path.parent.resolve()
    base.mkdir(parents=True, exist_ok=True)
    root = Path(manifest.root).resolve()
    labels_name = Path(manifest.labels_csv).name

    frame = pd.DataFrame(
        [(e.file, e.label, e.split) for e in manifest.entries],
        columns=["file", "label", "split"],
    )
    frame.to_csv(base / labels_name, index=False, encoding="utf-8", lineterminator="\n")

    try:
        rel_root = root.relative_to(base).as_posix() or "."
    except ValueError:
        rel_root = str(root)
    doc = {
        "schema": manifest.schema_id,
        "root": rel_root,
        "labels_csv": labels_name,
        "num_classes": manifest.num_classes,
        "hr_size": list(manifest.hr_size),
        "vlr_size": list(manifest.vlr_size),
        "channels": manifest.channels,
    }
    _write_yaml(path, doc)
    logger.info(f"[OK] Manifiesto escrito: {path} ({len(manifest.entries)} entradas)")
