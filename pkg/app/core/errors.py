"""
Excepciones de la aplicacion

Cada excepcion lleva el codigo de salida que la CLI devuelve, igual que los
endpoints traducen errores a codigos HTTP.
"""


class DirectCapsError(Exception):
    """Error base de la libreria"""

    exit_code: int = 1

    def __init__(self, message: str, exit_code: int = None):
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code


class ShapeError(DirectCapsError, ValueError):
    """Formas de tensores no compatibles"""
    exit_code = 2


class NonFiniteError(DirectCapsError, FloatingPointError):
    """Aparecio un NaN o Inf en un resultado"""
    exit_code = 1


class TapeError(DirectCapsError):
    """Uso incorrecto de la cinta de autodiff"""
    exit_code = 2


class ConfigError(DirectCapsError):
    """Configuracion invalida o inconsistente"""
    exit_code = 2


class DataError(DirectCapsError):
    """Datos de entrada ausentes o mal formados"""
    exit_code = 2


class CorruptCheckpointError(DirectCapsError):
    """El checkpoint no se puede decodificar"""
    exit_code = 3


class CheckpointVersionError(DirectCapsError):
    """Version de formato de checkpoint no soportada"""
    exit_code = 3


class DivergenceError(DirectCapsError):
    """El entrenamiento produjo valores no finitos"""
    exit_code = 1


class GradCheckFailure(DirectCapsError):
    """Algun chequeo de gradiente supero la tolerancia"""
    exit_code = 1


class NoDiscordantPairsError(DirectCapsError):
    """McNemar sin pares discordantes (b + c = 0)"""
    exit_code = 0
