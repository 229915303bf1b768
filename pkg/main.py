"""
DirectCapsNet - reconocimiento de imagenes de muy baja resolucion
Punto de entrada de la linea de comandos

Este archivo configura el logging y registra todos los subcomandos.
"""

import logging

import typer
from dotenv import load_dotenv

from app.api.commands.evaluate import router as eval_router
from app.api.commands.gradcheck import router as gradcheck_router
from app.api.commands.mcnemar import router as mcnemar_router
from app.api.commands.recon import router as recon_router
from app.api.commands.synth import router as synth_router
from app.api.commands.train import router as train_router
from app.core.config import settings, validate_settings

# Cargar variables de entorno
load_dotenv()

# Configurar logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)

app = typer.Typer(
    name="directcapsnet",
    help="Entrenamiento y evaluacion de DirectCapsNet (HR-anchor + reconstruccion dirigida)",
    no_args_is_help=True,
    add_completion=False,
)

app.add_typer(train_router)
app.add_typer(eval_router)
app.add_typer(gradcheck_router)
app.add_typer(mcnemar_router)
app.add_typer(synth_router)
app.add_typer(recon_router)


@app.callback()
def root():
    """Inicializa la configuracion de proceso antes de cada subcomando"""
    validate_settings()


if __name__ == "__main__":
    app()
