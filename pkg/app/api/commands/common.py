"""
Piezas compartidas por los subcomandos: traduccion de errores a codigos de
salida, directorio de salida atomico y manifiesto de corrida
"""

import functools
import hashlib
import json
import logging
import shutil
import subprocess
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple

import typer

from app.core.errors import ConfigError, DirectCapsError, DivergenceError
from app.models.schemas import ExperimentConfig, RunSpec

logger = logging.getLogger(__name__)

RUN_MANIFEST = "run_manifest.json"


def handle_errors(fn):
    """
    Convierte excepciones en codigos de salida

    0 ok, 1 fallo de chequeo, 2 error de uso/entrada, 3 datos corruptos.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except typer.Exit:
            raise
        except DirectCapsError as e:
            logger.error(f"[ERR] {type(e).__name__}: {e.message}")
            typer.echo(f"error: {e.message}", err=True)
            raise typer.Exit(code=e.exit_code)
        except Exception as e:
            logger.exception(f"[ERR] Error inesperado: {e}")
            typer.echo(f"error inesperado: {e}", err=True)
            raise typer.Exit(code=1)

    return wrapper


@contextmanager
def staged_output(out_dir: Path) -> Iterator[Path]:
    """
    Escribe en un directorio temporal hermano y lo renombra al terminar bien

    Ante un error no queda salida parcial; una divergencia conserva lo escrito
    (incluido el ultimo checkpoint valido).
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise DirectCapsError(f"El directorio de salida ya existe y no esta vacio: {out_dir}", exit_code=2)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        yield stage
    except DivergenceError:
        _promote(stage, out_dir)
        raise
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    _promote(stage, out_dir)


def _promote(stage: Path, out_dir: Path) -> None:
    if out_dir.exists():
        out_dir.rmdir()
    stage.replace(out_dir)
    logger.info(f"[OK] Salidas escritas en {out_dir}")


def git_describe() -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5, check=True,
        )
        return result.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def config_hash(config: Optional[ExperimentConfig]) -> Optional[str]:
    if config is None:
        return None
    canonical = json.dumps(config.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_run_manifest(out_dir: Path, spec: RunSpec, config: Optional[ExperimentConfig] = None,
                       extra: Optional[Dict[str, Any]] = None) -> Path:
    """Registra lo necesario para repetir la corrida exactamente"""
    doc = {
        "subcommand": spec.subcommand,
        "config_hash": config_hash(config),
        "seed": spec.seed,
        "git_describe": git_describe(),
        "command_line": list(sys.argv),
        "spec": spec.model_dump(mode="json"),
    }
    if extra:
        doc.update(extra)
    path = Path(out_dir) / RUN_MANIFEST
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_json(path: Path, doc: Dict[str, Any]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def parse_size(text: Optional[str]) -> Optional[Tuple[int, int]]:
    """
    Lee un tamano "N" (cuadrado) o "HxW"

    Raises:
        ConfigError: formato invalido o lados no positivos
    """
    if text is None:
        return None
    parts = text.lower().split("x")
    try:
        sides = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"Tamano invalido {text!r}: se espera N o HxW") from None
    if len(sides) == 1:
        sides = sides * 2
    if len(sides) != 2 or min(sides) < 1:
        raise ConfigError(f"Tamano invalido {text!r}: se espera N o HxW con lados >= 1")
    return sides[0], sides[1]
