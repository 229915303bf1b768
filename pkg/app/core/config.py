"""
Configuracion central de la aplicacion
Valores de proceso leidos del entorno (.env compatible)
"""

import os
import logging
from dotenv import load_dotenv

# Cargar variables de entorno
load_dotenv()

logger = logging.getLogger(__name__)


class Settings:
    # =========================
    # Logging
    # =========================
    LOG_LEVEL: str = os.getenv("DIRECTCAPS_LOG_LEVEL", "INFO").upper()

    # =========================
    # Datos
    # =========================
    # Hilos para decodificar y aumentar muestras
    DATA_WORKERS: int = int(os.getenv("DIRECTCAPS_DATA_WORKERS", "1"))

    # =========================
    # Salidas
    # =========================
    OUTPUT_ROOT: str = os.getenv("DIRECTCAPS_OUTPUT_ROOT", "runs")
    DEFAULT_SEED: int = int(os.getenv("DIRECTCAPS_DEFAULT_SEED", "0"))

    # =========================
    # Pruebas
    # =========================
    RUN_SLOW: bool = os.getenv("DIRECTCAPS_RUN_SLOW", "0").lower() in ("1", "true")

    # Identificadores de esquema de los documentos en disco
    CONFIG_SCHEMA: str = "directcapsnet.config/v1"
    MANIFEST_SCHEMA: str = "directcapsnet.manifest/v1"

    def data_workers(self) -> int:
        """Hilos de datos, releyendo el entorno (permite cambiarlo en caliente)"""
        raw = os.getenv("DIRECTCAPS_DATA_WORKERS", str(self.DATA_WORKERS))
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning(f"[WARN] DIRECTCAPS_DATA_WORKERS invalido: {raw!r}, usando 1")
            return 1


# Instancia global
settings = Settings()


# Logs de validacion (no rompe)
def validate_settings():
    logger.info("[OK] Config cargada correctamente")
    logger.info(f"   -> LOG_LEVEL: {settings.LOG_LEVEL}")
    logger.info(f"   -> DATA_WORKERS: {settings.data_workers()}")
    logger.info(f"   -> OUTPUT_ROOT: {settings.OUTPUT_ROOT}")

    if settings.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        logger.warning(f"[WARN] DIRECTCAPS_LOG_LEVEL desconocido: {settings.LOG_LEVEL}")
